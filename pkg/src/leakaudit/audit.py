"""The audit protocol: k-fold cross-validation per seed, pooled AUC per
seed, distribution statistics across seeds, a permutation test in place of
the eyeballed "better than random" judgement, and report emission.

The verdict rule is fixed: leakage-detected iff permutation p < 0.05 and
median AUC > 0.55; no-evidence iff p >= 0.05 and median AUC < 0.55;
anything else is inconclusive.
"""

import dataclasses
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from . import __version__
from .audio import DatasetManifest, WORKING_RATE, decode_audio, homogenize, resample
from .classifier import ChunkSpec, TrainConfig, chunk, score_sample, train
from .enhance import enhance
from .errors import (
    EmptyRegionsError,
    InvalidPermutationCountError,
    LeakAuditError,
    SingleClassError,
    TooFewSamplesError,
    EmptyError,
)
from .features import FeatureSequence, load_embeddings, mfcc, noise_floor_probe, znormalize
from .segment import load_annotation, select_regions

log = logging.getLogger(__name__)

MEDIAN_AUC_BAR = 0.55
PERMUTATION_ALPHA = 0.05
DEFAULT_N_PERMUTATIONS = 200


@dataclass
class AuditConfig:
    feature: str = "mfcc"              # mfcc | external
    enhancement: str = "orig"          # orig | nr | ln_nr | ln
    regions: str = "non_speech"        # speech | non_speech | participant
    segmentation_source: str = "vad"   # vad | manual
    participant_speaker: str = "PAR"
    k_folds: int = 8
    n_seeds: int = 50
    base_seed: int = 0
    n_permutations: int = DEFAULT_N_PERMUTATIONS
    homogenize_rate: int = 0           # 0 disables the down/up chain
    probe_band: tuple = (14000.0, 16000.0)
    train: TrainConfig = field(default_factory=TrainConfig)
    jobs: int = 1
    cache_dir: str | None = None

    def validate(self):
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        if self.n_seeds < 1:
            raise ValueError("n_seeds must be >= 1")
        if self.regions == "participant" and self.segmentation_source != "manual":
            raise ValueError("participant regions require manual segmentation")

    def signature(self) -> str:
        body = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(body.encode()).hexdigest()[:12]


def stratified_folds(labels, k: int, seed: int) -> list:
    """Class-proportional partition into k test folds, deterministic in seed.

    Returns a list of k index arrays. Per-fold class counts differ by at
    most one from exact proportionality.
    """
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(np.random.SeedSequence((0xF01D, seed)))
    folds = [[] for _ in range(k)]
    start = 0
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise TooFewSamplesError(
                f"class {cls} has {len(members)} samples, need >= {k} for {k} folds")
        members = members[rng.permutation(len(members))]
        # round-robin keeps per-fold class counts within +-1 of proportional;
        # staggering where each class starts also spreads the remainders so
        # fold sizes stay within +-1 overall
        for i, m in enumerate(members):
            folds[(start + i) % k].append(int(m))
        start = (start + len(members)) % k
    return [np.array(sorted(f), dtype=int) for f in folds]


def auc(scores, labels) -> float:
    """Mann-Whitney concordance of scores against binary labels; ties 0.5."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=int)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs scores from both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def box_stats(values) -> dict:
    """min/q1/median/q3/max/mean; quartiles by linear interpolation."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EmptyError("no values")
    q1, med, q3 = np.percentile(values, [25.0, 50.0, 75.0])
    return {
        "min": float(values.min()),
        "q1": float(q1),
        "median": float(med),
        "q3": float(q3),
        "max": float(values.max()),
        "mean": float(values.mean()),
    }


# --- feature preparation -----------------------------------------------------

def prepare_features(config: AuditConfig, manifest: DatasetManifest):
    """Resolve the pipeline (decode, homogenize/resample, enhance, segment,
    extract, normalize) for every manifest entry.

    Returns (feature_store, excluded): a dict path -> FeatureSequence for
    usable recordings, and a list of {path, reason} records for the rest.
    """
    store = {}
    excluded = []
    for entry in manifest.entries:
        try:
            store[entry.audio_path] = _features_for_entry(config, entry)
        except LeakAuditError as exc:
            log.warning("excluding %s: %s", entry.audio_path, exc)
            excluded.append({"path": entry.audio_path,
                             "reason": f"{type(exc).__name__}: {exc}"})
    return store, excluded


def _cache_key(config: AuditConfig, entry) -> str:
    h = hashlib.sha256()
    h.update(Path(entry.audio_path).read_bytes())
    h.update(config.feature.encode())
    h.update(config.enhancement.encode())
    h.update(config.regions.encode())
    h.update(config.segmentation_source.encode())
    h.update(str(config.homogenize_rate).encode())
    return h.hexdigest()[:24]


def _features_for_entry(config: AuditConfig, entry) -> FeatureSequence:
    cache_file = None
    if config.cache_dir:
        cache_file = Path(config.cache_dir) / f"{_cache_key(config, entry)}.npz"
        if cache_file.exists():
            blob = np.load(cache_file)
            return FeatureSequence(frames=blob["frames"], hop_s=float(blob["hop_s"]),
                                   origin=str(blob["origin"]))

    sample = decode_audio(entry.audio_path)
    if config.homogenize_rate:
        sample = homogenize(sample, config.homogenize_rate, WORKING_RATE)
    elif sample.rate != WORKING_RATE:
        sample = resample(sample, WORKING_RATE)

    annotation = None
    if config.segmentation_source == "manual" or config.regions == "participant":
        if entry.annotation_path:
            annotation = load_annotation(entry.annotation_path)
    sample = enhance(sample, config.enhancement)
    regions = select_regions(sample, config.regions, config.segmentation_source,
                             annotation=annotation,
                             participant_speaker=config.participant_speaker)
    if not regions.intervals:
        raise EmptyRegionsError("no intervals for the configured mode")

    if config.feature == "external":
        if not entry.embedding_path:
            raise EmptyRegionsError("entry has no embedding_path for external features")
        seq = znormalize(load_embeddings(entry.embedding_path, regions))
    else:
        seq = extract_mfcc_over(sample, regions)

    if cache_file:
        cache_file.parent.mkdir(parents=True, exist_ok=True)
        np.savez(cache_file, frames=seq.frames, hop_s=seq.hop_s, origin=seq.origin)
    return seq


def extract_mfcc_over(sample, regions) -> FeatureSequence:
    from .features import extract_over_regions
    return extract_over_regions(sample, regions, extractor=mfcc)


# --- trials ------------------------------------------------------------------

def _trial_seed(base: int, fold: int) -> int:
    return base * 10007 + fold


def run_trial(config: AuditConfig, manifest: DatasetManifest, seed: int,
              feature_store: dict, labels_override=None):
    """One cross-validated pass: per fold, train on the rest and score the
    fold; every usable recording gets exactly one pooled score.

    Returns (paths, scores, labels) aligned arrays.
    """
    entries = [e for e in manifest.entries if e.audio_path in feature_store]
    paths = [e.audio_path for e in entries]
    labels = np.array([e.label for e in entries], dtype=int)
    if labels_override is not None:
        labels = np.asarray(labels_override, dtype=int)
    spec = None
    chunked = {}
    for p in paths:
        seq = feature_store[p]
        if spec is None:
            spec = ChunkSpec.for_hop(seq.hop_s)
        chunked[p] = chunk(seq, spec)

    folds = stratified_folds(labels, config.k_folds, seed)
    scores = np.full(len(paths), np.nan)
    for fold_idx, test_idx in enumerate(folds):
        test_mask = np.zeros(len(paths), dtype=bool)
        test_mask[test_idx] = True
        train_chunks, train_labels = [], []
        for i in np.flatnonzero(~test_mask):
            cs = chunked[paths[i]]
            train_chunks.extend(cs)
            train_labels.extend([labels[i]] * len(cs))
        tc = dataclasses.replace(config.train, seed=_trial_seed(seed, fold_idx))
        params = train(train_chunks, train_labels, tc)
        for i in test_idx:
            scores[i] = score_sample(params, chunked[paths[i]])
    assert not np.isnan(scores).any()
    return paths, scores, labels


_WORKER_CTX = {}


def _init_worker(config, manifest, feature_store):
    _WORKER_CTX["args"] = (config, manifest, feature_store)


def _trial_auc(task):
    seed, labels_override = task
    config, manifest, feature_store = _WORKER_CTX["args"]
    _, scores, labels = run_trial(config, manifest, seed, feature_store,
                                  labels_override=labels_override)
    return auc(scores, labels)


def _map_trials(config: AuditConfig, manifest, feature_store, tasks: list) -> list:
    """tasks: list of (seed, labels_override). Results keep task order, so
    the report is independent of scheduling."""
    if config.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(
                max_workers=config.jobs, initializer=_init_worker,
                initargs=(config, manifest, feature_store)) as pool:
            return list(pool.map(_trial_auc, tasks, chunksize=1))
    _init_worker(config, manifest, feature_store)
    return [_trial_auc(t) for t in tasks]


def permutation_test(config: AuditConfig, manifest: DatasetManifest,
                     feature_store: dict, observed_median: float,
                     n_perm: int | None = None, seed: int = 0) -> float:
    """Label-permutation p-value for the observed median AUC.

    Each permutation reshuffles the label vector once and runs a single
    full cross-validated trial.
    """
    if n_perm is None:
        n_perm = config.n_permutations
    if n_perm < 1:
        raise InvalidPermutationCountError("need at least one permutation")
    entries = [e for e in manifest.entries if e.audio_path in feature_store]
    labels = np.array([e.label for e in entries], dtype=int)
    rng = np.random.default_rng(np.random.SeedSequence((0x9E47, seed)))
    tasks = []
    for i in range(n_perm):
        permuted = labels[rng.permutation(len(labels))]
        tasks.append((_trial_seed(seed, 991 + i), permuted))
    perm_aucs = _map_trials(config, manifest, feature_store, tasks)
    exceed = sum(1 for a in perm_aucs if a >= observed_median)
    return (1.0 + exceed) / (1.0 + n_perm)


def _verdict(median_auc: float, p_value: float | None) -> str:
    if p_value is None:
        return "inconclusive"
    if p_value < PERMUTATION_ALPHA and median_auc > MEDIAN_AUC_BAR:
        return "leakage-detected"
    if p_value >= PERMUTATION_ALPHA and median_auc < MEDIAN_AUC_BAR:
        return "no-evidence"
    return "inconclusive"


def run_probe(config: AuditConfig, manifest: DatasetManifest) -> dict:
    """Noise-floor probe over the decoded original-rate audio."""
    per_recording = {}
    errors = {}
    for entry in manifest.entries:
        try:
            sample = decode_audio(entry.audio_path)
            per_recording[entry.audio_path] = noise_floor_probe(sample, config.probe_band)
        except LeakAuditError as exc:
            errors[entry.audio_path] = f"{type(exc).__name__}: {exc}"
    return {
        "band": list(config.probe_band),
        "per_recording": per_recording,
        "errors": errors,
    }


def run_audit(config: AuditConfig, manifest: DatasetManifest,
              manifest_path: str | None = None) -> dict:
    """Full audit: n_seeds cross-validated trials, box statistics,
    permutation test, probe, verdict. Returns the report as a dict."""
    config.validate()
    feature_store, excluded = prepare_features(config, manifest)
    usable_labels = [e.label for e in manifest.entries if e.audio_path in feature_store]
    for cls in (0, 1):
        if usable_labels.count(cls) < config.k_folds:
            raise TooFewSamplesError(
                f"class {cls}: {usable_labels.count(cls)} usable recordings, "
                f"need >= {config.k_folds}")

    seeds = [config.base_seed + i for i in range(config.n_seeds)]
    per_seed_auc = _map_trials(config, manifest, feature_store,
                               [(s, None) for s in seeds])
    stats = box_stats(per_seed_auc)

    p_value = None
    if config.n_permutations > 0:
        p_value = permutation_test(config, manifest, feature_store,
                                   observed_median=stats["median"],
                                   seed=config.base_seed)

    probe = run_probe(config, manifest)

    manifest_hash = ""
    if manifest_path:
        manifest_hash = hashlib.sha256(Path(manifest_path).read_bytes()).hexdigest()

    return {
        "config": dataclasses.asdict(config),
        "per_seed_auc": [float(a) for a in per_seed_auc],
        "seeds": seeds,
        "box_stats": stats,
        "permutation_p": p_value,
        "probe": probe,
        "verdict": _verdict(stats["median"], p_value),
        "excluded": excluded,
        "n_excluded": len(excluded),
        "provenance": {
            "code_version": __version__,
            "manifest_hash": manifest_hash,
            "config_signature": config.signature(),
        },
    }


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True)


def report_markdown(report: dict) -> str:
    cfg = report["config"]
    s = report["box_stats"]
    lines = [
        "# Acoustic leakage audit",
        "",
        f"- feature: `{cfg['feature']}`  enhancement: `{cfg['enhancement']}`  "
        f"regions: `{cfg['regions']}` ({cfg['segmentation_source']})",
        f"- folds: {cfg['k_folds']}  seeds: {cfg['n_seeds']} "
        f"(base {cfg['base_seed']})  permutations: {cfg['n_permutations']}",
        f"- excluded recordings: {report['n_excluded']}",
        "",
        "## AUC across seeds",
        "",
        "| min | q1 | median | q3 | max | mean |",
        "|-----|----|--------|----|-----|------|",
        "| {min:.3f} | {q1:.3f} | {median:.3f} | {q3:.3f} | {max:.3f} | {mean:.3f} |".format(**s),
        "",
        f"Permutation p-value: "
        f"{report['permutation_p'] if report['permutation_p'] is not None else 'n/a'}",
        "",
        f"## Verdict: **{report['verdict']}**",
        "",
        "Per-seed AUC values (box-plot data):",
        "",
        "```",
        json.dumps(report["per_seed_auc"]),
        "```",
        "",
    ]
    return "\n".join(lines)


def write_report(report: dict, out_dir, stem: str | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if stem is None:
        cfg = report["config"]
        stem = (f"audit_{cfg['feature']}_{cfg['enhancement']}_{cfg['regions']}_"
                f"{report['provenance']['config_signature']}")
    json_path = out / f"{stem}.json"
    md_path = out / f"{stem}.md"
    json_path.write_text(report_json(report), encoding="utf-8")
    md_path.write_text(report_markdown(report), encoding="utf-8")
    return json_path, md_path
