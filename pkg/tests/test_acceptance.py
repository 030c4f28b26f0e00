"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The audit criteria regenerate synthetic corpora and run many cross-validated
trainings; they dominate the suite's runtime (the detection criterion is
bounded at 10 minutes, the null-calibration one is the slowest overall).
Run with `-s` to watch the per-criterion lines live.
"""

import json
import time

import numpy as np
import pytest

from leakaudit import classifier as clf
from leakaudit import synthgen
from leakaudit.audio import AudioSample, decode_audio
from leakaudit.audit import AuditConfig, auc, run_audit, run_trial, prepare_features
from leakaudit.classifier import TrainConfig
from leakaudit.cli import main as cli_main
from leakaudit.enhance import loudness_normalize, measure_loudness
from leakaudit.features import mfcc
from leakaudit.segment import (
    Annotation,
    AnnotationUnit,
    RegionSet,
    complement,
    merge_ipus,
    vad_regions,
)

RATE = 16000

# Audit knobs for the acceptance corpora: float32 and few epochs keep the
# detection criterion inside its 10-minute budget (TrainConfig defaults stay
# at the documented 40-epoch/1e-3 values).
DETECT_TRAIN = TrainConfig(epochs=2, batch_size=16, learning_rate=5e-3, dtype="float32")
NULL_TRAIN = TrainConfig(epochs=1, batch_size=16, learning_rate=5e-3, dtype="float32")
N_PERM = 20  # smallest count that can reach p < 0.05 (min p = 1/21)


def report_line(name, ok, detail):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def detect_config(**kw):
    base = dict(feature="mfcc", regions="non_speech", segmentation_source="vad",
                k_folds=8, n_seeds=10, base_seed=0, n_permutations=N_PERM,
                train=DETECT_TRAIN, jobs=1)
    base.update(kw)
    return AuditConfig(**base)


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


@pytest.fixture(scope="module")
def confounded_manifest(corpora):
    spec = synthgen.SynthSpec(n_per_class=20, duration_s=60.0, speech_duty=0.5,
                              confound=synthgen.Confound.noise_floor(10.0),
                              confound_strength=1.0, seed=42)
    return synthgen.synth_dataset(spec, corpora / "confounded")


@pytest.fixture(scope="module")
def confounded_report(confounded_manifest):
    """Criterion 1's audit; also reused as the strength-1.0 leg of the
    monotonicity criterion. Timed from corpus features to verdict."""
    t0 = time.perf_counter()
    report = run_audit(detect_config(), confounded_manifest)
    report["_wall_s"] = time.perf_counter() - t0
    return report


def median_auc_over_seeds(config, manifest, n_seeds=10):
    store, _ = prepare_features(config, manifest)
    aucs = []
    for seed in range(config.base_seed, config.base_seed + n_seeds):
        _, scores, labels = run_trial(config, manifest, seed, store)
        aucs.append(auc(scores, labels))
    return float(np.median(aucs)), aucs


# --- cheap criteria first -----------------------------------------------------

def test_auc_oracle():
    rng = np.random.default_rng(1234)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 31))
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = np.round(rng.random(n), 2)
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        brute = sum(1.0 if p > q else 0.5 if p == q else 0.0
                    for p in pos for q in neg) / (len(pos) * len(neg))
        worst = max(worst, abs(auc(scores, labels) - brute))
    hand = auc([0.8, 0.4, 0.6, 0.2], [1, 1, 0, 0])
    ok = worst < 1e-12 and hand == 0.75
    report_line("auc-oracle", ok,
                f"1000 instances, max |diff| {worst:.2e}; hand case {hand}")


def test_gradient_check():
    # Central differences are only a valid oracle where the loss is smooth;
    # a coordinate whose +-eps interval flips a ReLU state straddles a kink
    # and is skipped (detected by comparing activation masks at both ends).
    # The 1e-6 denominator floor compares near-zero gradients at an absolute
    # tolerance of 1e-10, above the FD roundoff floor ULP(loss)/(2 eps).
    rng = np.random.default_rng(99)
    eps = 1e-4
    worst = 0.0
    checked = 0
    skipped = 0
    for chunk_i in range(20):
        t = int(rng.integers(8, 32))
        d = int(rng.integers(3, 10))
        params = clf.init_params(d, seed=chunk_i, dtype=np.float64)
        x = rng.standard_normal((1, t, d))
        y = np.array([float(chunk_i % 2)])

        def loss_and_masks():
            s, cache = clf.forward_batch(params, x.copy(), train=True, want_cache=True)
            masks = (cache["a1"] > 0, cache["a2"] > 0)
            return clf.bce_loss(s, y, cache["logits"]), masks

        _, cache = clf.forward_batch(params, x.copy(), train=True, want_cache=True)
        grads = clf.backward_batch(params, y, cache)
        for name, g in grads.items():
            flat = getattr(params, name).ravel()
            k = min(20, flat.size)
            for i in rng.choice(flat.size, size=k, replace=False):
                orig = flat[i]
                flat[i] = orig + eps
                up, masks_up = loss_and_masks()
                flat[i] = orig - eps
                down, masks_down = loss_and_masks()
                flat[i] = orig
                if not all(np.array_equal(a, b) for a, b in zip(masks_up, masks_down)):
                    skipped += 1
                    continue
                checked += 1
                fd = (up - down) / (2 * eps)
                an = g.ravel()[i]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    ok = worst < 1e-4 and checked >= 3000 and skipped < checked * 0.05
    report_line("gradient-check", ok,
                f"20 chunks, all layers, {checked} coords, max rel err {worst:.2e} "
                f"({skipped} kink-straddling coords excluded)")


def test_mfcc_oracle():
    from test_features import oracle_frame

    rng = np.random.default_rng(7)
    x = rng.uniform(-0.8, 0.8, size=2 * RATE)
    seq = mfcc(AudioSample(x, RATE))
    worst = 0.0
    for idx in rng.choice(len(seq), size=100, replace=False):
        want = oracle_frame(x, int(idx) * 160)
        got = seq.frames[idx]
        worst = max(worst, (np.abs(got - want) / np.maximum(np.abs(want), 1e-9)).max())
    one_second = mfcc(AudioSample(x[:RATE], RATE))
    ok = worst < 1e-6 and one_second.frames.shape == (99, 20)
    report_line("mfcc-oracle", ok,
                f"100 frames, max rel err {worst:.2e}; 1 s -> {one_second.frames.shape}")


def _random_disjoint_intervals(rng, duration=10.0, max_n=10):
    n = int(rng.integers(0, max_n + 1))
    edges = np.sort(rng.uniform(0.0, duration, size=2 * n))
    return [(float(edges[2 * i]), float(edges[2 * i + 1]))
            for i in range(n) if edges[2 * i + 1] > edges[2 * i]]


def test_region_algebra():
    rng = np.random.default_rng(2024)
    cases = 0
    # partition law: 4000 cases of exact cover with empty intersection
    for _ in range(4000):
        intervals = _random_disjoint_intervals(rng)
        speech = RegionSet(intervals, 10.0)
        non = complement(speech, 10.0)
        merged = sorted(speech.intervals + non.intervals)
        cursor = 0.0
        for s, e in merged:
            assert s == cursor, "partition law gap/overlap"
            cursor = e
        assert cursor == 10.0
        cases += 1
    # merge_ipus idempotence + order insensitivity: 3000 cases
    for _ in range(3000):
        spans = [(float(s), float(s + d)) for s, d in
                 zip(rng.uniform(0, 9, size=rng.integers(0, 12)),
                     rng.uniform(0.01, 1.0, size=12))]
        ann = Annotation([AnnotationUnit(s, e) for s, e in spans])
        once = merge_ipus(ann, total_duration_s=11.0)
        twice = merge_ipus(Annotation(
            [AnnotationUnit(s, e) for s, e in once.intervals]), total_duration_s=11.0)
        assert once.intervals == twice.intervals, "merge_ipus not idempotent"
        rev = merge_ipus(Annotation(
            [AnnotationUnit(s, e) for s, e in spans[::-1]]), total_duration_s=11.0)
        assert rev.intervals == once.intervals, "merge_ipus order sensitive"
        cases += 1
    # VAD threshold monotonicity: 3000 cases
    for _ in range(3000):
        scores = rng.random(int(rng.integers(1, 80)))
        hi = float(rng.uniform(0.05, 0.95))
        lo = hi * float(rng.uniform(0.0, 1.0))
        assert (vad_regions(scores, lo, 0.1).duration_s
                >= vad_regions(scores, hi, 0.1).duration_s - 1e-12), "monotonicity"
        cases += 1
    report_line("region-algebra", cases == 10_000, f"{cases} randomized cases, zero failures")


def test_loudness():
    t = np.arange(2 * RATE) / RATE
    prof = measure_loudness(AudioSample(np.sin(2 * np.pi * 997.0 * t), RATE))
    sine_ok = np.abs(prof.window_loudness - (-3.01)).max() < 0.5

    # ~-30 then ~-10 LUFS segments -> both within +-1 LU of -23
    t3 = np.arange(3 * RATE) / RATE
    seg = np.concatenate([
        0.0316 * np.sqrt(2) * np.sin(2 * np.pi * 440.0 * t3),
        0.3162 * np.sqrt(2) * np.sin(2 * np.pi * 440.0 * t3),
    ])
    out = loudness_normalize(AudioSample(seg, RATE), -23.0)

    def seg_loudness(lo_s, hi_s):
        piece = AudioSample(out.samples[int(lo_s * RATE):int(hi_s * RATE)], RATE)
        p = measure_loudness(piece)
        return float(p.window_loudness[~p.gated()].mean())

    la = seg_loudness(0.0, 2.0)   # away from the 3 s boundary
    lb = seg_loudness(4.0, 6.0)
    norm_ok = abs(la + 23.0) < 1.0 and abs(lb + 23.0) < 1.0
    report_line("loudness", sine_ok and norm_ok,
                f"997 Hz sine within +-0.5 of -3.01; segments {la:.2f}/{lb:.2f} LUFS")


def test_probe_separates_bandwidth_classes(corpora):
    spec = synthgen.SynthSpec(n_per_class=8, duration_s=30.0,
                              confound=synthgen.Confound.bandwidth(5512.0, 8000.0),
                              confound_strength=1.0, seed=7)
    synthgen.synth_dataset(spec, corpora / "bandwidth")
    out_csv = corpora / "probe.csv"
    rc = cli_main(["probe", "--manifest", str(corpora / "bandwidth" / "manifest.csv"),
                   "--band", "6000:8000", "--out", str(out_csv)])
    rows = [r.split(",") for r in out_csv.read_text().strip().splitlines()[1:]]
    power = {0: [], 1: []}
    for path, label, db, err in rows:
        assert err == ""
        power[int(label)].append(float(db))
    gap = min(power[1]) - max(power[0])
    ok = rc == 0 and gap > 0
    report_line("probe", ok,
                f"band 6-8 kHz: narrow class max {max(power[0]):.1f} dB, "
                f"wide class min {min(power[1]):.1f} dB, gap {gap:.1f} dB")


def test_report_determinism(corpora):
    spec = synthgen.SynthSpec(n_per_class=4, duration_s=12.0,
                              confound=synthgen.Confound.noise_floor(10.0),
                              confound_strength=1.0, seed=3)
    synthgen.synth_dataset(spec, corpora / "small")
    flags = ["audit", "--manifest", str(corpora / "small" / "manifest.csv"),
             "--regions", "non_speech", "--k-folds", "4", "--seeds", "2",
             "--permutations", "5", "--epochs", "1", "--dtype", "float32",
             "--learning-rate", "5e-3", "--jobs", "1"]
    assert cli_main(flags + ["--out", str(corpora / "rep1")]) == 0
    assert cli_main(flags + ["--out", str(corpora / "rep2")]) == 0
    j1 = next((corpora / "rep1").glob("*.json"))
    j2 = next((corpora / "rep2").glob("*.json"))
    ok = j1.read_bytes() == j2.read_bytes() and j1.name == j2.name
    report_line("determinism", ok, f"{j1.name} byte-identical across reruns")


# --- heavy criteria -------------------------------------------------------------

def test_confound_detection(confounded_report):
    rep = confounded_report
    median = rep["box_stats"]["median"]
    p = rep["permutation_p"]
    ok = (median >= 0.90 and p < 0.05 and rep["verdict"] == "leakage-detected"
          and rep["_wall_s"] < 600.0)
    report_line("confound-detection", ok,
                f"median AUC {median:.3f}, p {p:.4f}, verdict {rep['verdict']}, "
                f"wall {rep['_wall_s']:.0f}s")


def test_partial_confound_monotonicity(corpora, confounded_report):
    medians = {1.0: confounded_report["box_stats"]["median"]}
    for strength in (0.0, 0.5):
        spec = synthgen.SynthSpec(n_per_class=20, duration_s=60.0, speech_duty=0.5,
                                  confound=synthgen.Confound.noise_floor(10.0),
                                  confound_strength=strength, seed=42)
        manifest = synthgen.synth_dataset(spec, corpora / f"strength{strength}")
        medians[strength], _ = median_auc_over_seeds(
            detect_config(n_permutations=0), manifest)
    ok = medians[0.0] <= medians[0.5] <= medians[1.0]
    report_line("confound-monotonicity", ok,
                f"median AUC by strength: 0.0 -> {medians[0.0]:.3f}, "
                f"0.5 -> {medians[0.5]:.3f}, 1.0 -> {medians[1.0]:.3f}")


def test_speech_vs_non_speech_asymmetry(corpora):
    spec = synthgen.SynthSpec(n_per_class=20, duration_s=60.0, speech_duty=0.5,
                              confound=synthgen.Confound.none(), seed=77,
                              speech_rate_by_class=(2.5, 6.0))
    manifest = synthgen.synth_dataset(spec, corpora / "speechrate")
    speech_median, _ = median_auc_over_seeds(
        detect_config(regions="speech", segmentation_source="manual",
                      n_permutations=0), manifest)
    non_median, _ = median_auc_over_seeds(
        detect_config(regions="non_speech", segmentation_source="manual",
                      n_permutations=0), manifest)
    ok = speech_median >= 0.8 and 0.4 <= non_median <= 0.6
    report_line("speech-asymmetry", ok,
                f"speech median {speech_median:.3f} (>= 0.8), "
                f"non-speech median {non_median:.3f} (in [0.4, 0.6])")


def test_null_calibration(corpora):
    spec = synthgen.SynthSpec(n_per_class=20, duration_s=60.0, speech_duty=0.5,
                              confound=synthgen.Confound.none(), seed=42)
    manifest = synthgen.synth_dataset(spec, corpora / "null")
    verdicts = []
    medians = []
    for repetition in range(10):
        rep = run_audit(detect_config(train=NULL_TRAIN,
                                      base_seed=1000 * repetition), manifest)
        verdicts.append(rep["verdict"])
        medians.append(rep["box_stats"]["median"])
    n_no_evidence = verdicts.count("no-evidence")
    medians_ok = all(0.40 <= m <= 0.60 for m in medians)
    ok = medians_ok and n_no_evidence >= 8
    report_line("null-calibration", ok,
                f"medians {[round(m, 3) for m in medians]}, "
                f"no-evidence {n_no_evidence}/10")
