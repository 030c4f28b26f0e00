"""Command-line entry point.

Exit codes: 0 success, 2 data errors (unreadable/invalid inputs), 3 config
errors (bad flags or flag combinations). Configuration precedence:
flags > config file (key=value lines) > built-in defaults.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .audio import WORKING_RATE, decode_audio, export_wav, load_manifest, resample
from .audit import (
    AuditConfig,
    DEFAULT_N_PERMUTATIONS,
    run_audit,
    run_probe,
    write_report,
)
from .classifier import TrainConfig
from .enhance import ENHANCEMENT_MODES, enhance
from .errors import LeakAuditError
from .features import extract_over_regions, mfcc
from .segment import load_annotation, load_regions, select_regions, write_regions
from .synthgen import Confound, SynthSpec, synth_dataset

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3

log = logging.getLogger("leakaudit")

_CONFIG_KEYS = {
    "feature", "enhancement", "regions", "segmentation", "participant-speaker",
    "k-folds", "seeds", "base-seed", "permutations", "homogenize-rate",
    "epochs", "batch-size", "learning-rate", "dtype", "jobs", "cache-dir",
    "band",
}


def _read_config_file(path):
    """Simple key=value overlay; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or key not in _CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: expected <key>=<value> with a known key")
        values[key] = value.strip()
    return values


def _build_parser():
    p = argparse.ArgumentParser(
        prog="leakaudit",
        description="Audit a labeled speech corpus for acoustic-condition leakage.")
    p.add_argument("--version", action="version", version=f"leakaudit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="config file overlay (key=value lines)")
        sp.add_argument("--verbose", action="count", default=0,
                        help="log more to stderr (repeatable)")

    a = sub.add_parser("audit", help="run the cross-validated leakage audit")
    a.add_argument("--manifest", required=True, help="dataset manifest CSV")
    a.add_argument("--out", default="reports", help="report directory (default: reports)")
    a.add_argument("--feature",
                   help="feature type(s), comma-separated: mfcc|external (default: mfcc)")
    a.add_argument("--enhancement",
                   help="pre-processing variant(s), comma-separated: "
                        "orig|nr|ln_nr|ln (default: orig)")
    a.add_argument("--regions",
                   help="region mode(s), comma-separated: speech|non_speech|"
                        "participant (default: non_speech)")
    a.add_argument("--segmentation", choices=["vad", "manual"],
                   help="region source (default: vad)")
    a.add_argument("--participant-speaker",
                   help="speaker label for participant mode (default: PAR)")
    a.add_argument("--k-folds", type=int, help="cross-validation folds (default: 8)")
    a.add_argument("--seeds", type=int, help="number of random seeds (default: 50)")
    a.add_argument("--base-seed", type=int, help="first seed (default: 0)")
    a.add_argument("--permutations", type=int,
                   help=f"label permutations (default: {DEFAULT_N_PERMUTATIONS}; 0 disables)")
    a.add_argument("--homogenize-rate", type=int,
                   help="bandwidth-homogenizing intermediate rate in Hz (default: off)")
    a.add_argument("--epochs", type=int, help="training epochs (default: 40)")
    a.add_argument("--batch-size", type=int, help="training batch size (default: 16)")
    a.add_argument("--learning-rate", type=float, help="optimizer step size (default: 1e-3)")
    a.add_argument("--dtype", choices=["float64", "float32"],
                   help="training precision (default: float64)")
    a.add_argument("--jobs", type=int,
                   help="parallel trial workers (default: available cores)")
    a.add_argument("--cache-dir", help="per-recording feature cache directory")
    add_common(a)

    pr = sub.add_parser("probe", help="per-recording high-band noise-floor probe")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--band", default=None,
                    help="low:high in Hz (default: 14000:16000)")
    pr.add_argument("--out", help="write the table as CSV here instead of stdout")
    add_common(pr)

    sy = sub.add_parser("synth", help="generate a synthetic validation corpus")
    sy.add_argument("--out", required=True, help="output corpus directory")
    sy.add_argument("--n-per-class", type=int, default=20)
    sy.add_argument("--duration", type=float, default=60.0, help="seconds per recording")
    sy.add_argument("--speech-duty", type=float, default=0.5)
    sy.add_argument("--confound", default="none",
                    choices=["none", "noise_floor", "bandwidth", "loudness"])
    sy.add_argument("--delta-db", type=float, default=10.0,
                    help="noise_floor/loudness class delta (default: 10)")
    sy.add_argument("--bandwidths", default="5512:8000",
                    help="bandwidth confound low:high in Hz (default: 5512:8000)")
    sy.add_argument("--strength", type=float, default=1.0,
                    help="confound/class correlation in [0,1] (default: 1)")
    sy.add_argument("--speech-rates", default=None,
                    help="plant per-class syllabic rates r0:r1 in Hz (default: off)")
    sy.add_argument("--seed", type=int, default=0)
    add_common(sy)

    se = sub.add_parser("segment", help="write regions for one file")
    se.add_argument("audio", help="input WAV")
    se.add_argument("--mode", default="speech",
                    choices=["speech", "non_speech", "participant"])
    se.add_argument("--source", default="vad", choices=["vad", "manual"])
    se.add_argument("--annotation", help="annotation CSV for manual source")
    se.add_argument("--participant-speaker", default="PAR")
    se.add_argument("--threshold", type=float, default=0.5,
                    help="VAD threshold (default: 0.5)")
    se.add_argument("--out", help="region CSV path (default: <audio>.regions.csv)")
    add_common(se)

    en = sub.add_parser("enhance", help="write an enhanced copy of one file")
    en.add_argument("audio", help="input WAV")
    en.add_argument("--mode", default="ln_nr", choices=list(ENHANCEMENT_MODES))
    en.add_argument("--out", help="output WAV path (default: <audio>.<mode>.wav)")
    add_common(en)

    fe = sub.add_parser("features", help="dump features for one file")
    fe.add_argument("audio", help="input WAV")
    fe.add_argument("--regions", help="region CSV restricting extraction")
    fe.add_argument("--out", help="output .npz path (default: <audio>.features.npz)")
    add_common(fe)

    return p


def _overlay(args, key, default, cast=str):
    """flags > config file > default."""
    flag_val = getattr(args, key.replace("-", "_"), None)
    if flag_val is not None:
        return flag_val
    if getattr(args, "_config_values", None) and key in args._config_values:
        return cast(args._config_values[key])
    return default


def _parse_band(text):
    lo, _, hi = text.partition(":")
    return (float(lo), float(hi))


def cmd_audit(args):
    if not Path(args.manifest).exists():
        print(f"error: manifest not found: {args.manifest}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = load_manifest(args.manifest)
    jobs = _overlay(args, "jobs", os.cpu_count() or 1, int)

    features = _overlay(args, "feature", "mfcc").split(",")
    enhancements = _overlay(args, "enhancement", "orig").split(",")
    region_modes = _overlay(args, "regions", "non_speech").split(",")
    configs = []
    for feature in features:
        for enhancement in enhancements:
            for regions in region_modes:
                configs.append(AuditConfig(
                    feature=feature.strip(),
                    enhancement=enhancement.strip(),
                    regions=regions.strip(),
                    segmentation_source=_overlay(args, "segmentation", "vad"),
                    participant_speaker=_overlay(args, "participant-speaker", "PAR"),
                    k_folds=_overlay(args, "k-folds", 8, int),
                    n_seeds=_overlay(args, "seeds", 50, int),
                    base_seed=_overlay(args, "base-seed", 0, int),
                    n_permutations=_overlay(args, "permutations",
                                            DEFAULT_N_PERMUTATIONS, int),
                    homogenize_rate=_overlay(args, "homogenize-rate", 0, int),
                    train=TrainConfig(
                        epochs=_overlay(args, "epochs", 40, int),
                        batch_size=_overlay(args, "batch-size", 16, int),
                        learning_rate=_overlay(args, "learning-rate", 1e-3, float),
                        dtype=_overlay(args, "dtype", "float64"),
                    ),
                    jobs=jobs,
                    cache_dir=_overlay(args, "cache-dir", None),
                ))
    try:
        for config in configs:
            if config.feature not in ("mfcc", "external"):
                raise ValueError(f"unknown feature {config.feature!r}")
            if config.enhancement not in ENHANCEMENT_MODES:
                raise ValueError(f"unknown enhancement {config.enhancement!r}")
            if config.regions not in ("speech", "non_speech", "participant"):
                raise ValueError(f"unknown region mode {config.regions!r}")
            config.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for config in configs:
        report = run_audit(config, manifest, manifest_path=args.manifest)
        json_path, md_path = write_report(report, args.out)
        print(f"[{config.feature}/{config.enhancement}/{config.regions}] "
              f"verdict: {report['verdict']}  "
              f"median AUC: {report['box_stats']['median']:.3f}  "
              f"p: {report['permutation_p']}")
        print(f"wrote {json_path}")
        print(f"wrote {md_path}")
    return EXIT_OK


def cmd_probe(args):
    if not Path(args.manifest).exists():
        print(f"error: manifest not found: {args.manifest}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = load_manifest(args.manifest)
    band = _parse_band(_overlay(args, "band", "14000:16000"))
    config = AuditConfig(probe_band=band)
    result = run_probe(config, manifest)
    labels = {e.audio_path: e.label for e in manifest.entries}
    rows = [["audio_path", "label", "band_power_db", "error"]]
    for e in manifest.entries:
        if e.audio_path in result["per_recording"]:
            rows.append([e.audio_path, labels[e.audio_path],
                         f"{result['per_recording'][e.audio_path]:.2f}", ""])
        else:
            rows.append([e.audio_path, labels[e.audio_path], "",
                         result["errors"].get(e.audio_path, "unknown")])
    if args.out:
        with open(args.out, "w", newline="", encoding="utf-8") as f:
            csv.writer(f).writerows(rows)
        print(f"wrote {args.out}")
    else:
        w = csv.writer(sys.stdout)
        w.writerows(rows)
    return EXIT_DATA if result["errors"] else EXIT_OK


def cmd_synth(args):
    if args.confound == "noise_floor":
        confound = Confound.noise_floor(args.delta_db)
    elif args.confound == "bandwidth":
        confound = Confound.bandwidth(*_parse_band(args.bandwidths))
    elif args.confound == "loudness":
        confound = Confound.loudness(args.delta_db)
    else:
        confound = Confound.none()
    rates = None
    if args.speech_rates:
        lo, _, hi = args.speech_rates.partition(":")
        rates = (float(lo), float(hi))
    spec = SynthSpec(
        n_per_class=args.n_per_class,
        duration_s=args.duration,
        speech_duty=args.speech_duty,
        confound=confound,
        confound_strength=args.strength,
        seed=args.seed,
        speech_rate_by_class=rates,
    )
    try:
        spec.validate()
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = synth_dataset(spec, args.out)
    print(f"wrote {len(manifest.entries)} recordings under {args.out}")
    return EXIT_OK


def cmd_segment(args):
    sample = decode_audio(args.audio)
    if sample.rate != WORKING_RATE:
        sample = resample(sample, WORKING_RATE)
    annotation = load_annotation(args.annotation) if args.annotation else None
    regions = select_regions(sample, args.mode, args.source, annotation=annotation,
                             participant_speaker=args.participant_speaker,
                             threshold=args.threshold)
    out = args.out or f"{args.audio}.regions.csv"
    write_regions(out, regions)
    print(f"wrote {out} ({len(regions)} intervals, {regions.duration_s:.2f} s)")
    return EXIT_OK


def cmd_enhance(args):
    sample = decode_audio(args.audio)
    if sample.rate != WORKING_RATE:
        sample = resample(sample, WORKING_RATE)
    out_sample = enhance(sample, args.mode)
    out = args.out or f"{args.audio}.{args.mode}.wav"
    export_wav(out, out_sample)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_features(args):
    sample = decode_audio(args.audio)
    if sample.rate != WORKING_RATE:
        sample = resample(sample, WORKING_RATE)
    if args.regions:
        regions = load_regions(args.regions)
        seq = extract_over_regions(sample, regions, extractor=mfcc)
    else:
        seq = mfcc(sample)
    out = args.out or f"{args.audio}.features.npz"
    np.savez(out, frames=seq.frames, hop_s=seq.hop_s, origin=seq.origin)
    print(f"wrote {out} ({len(seq)} frames x {seq.dim})")
    return EXIT_OK


_COMMANDS = {
    "audit": cmd_audit,
    "probe": cmd_probe,
    "synth": cmd_synth,
    "segment": cmd_segment,
    "enhance": cmd_enhance,
    "features": cmd_features,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    args._config_values = None
    if getattr(args, "config", None):
        try:
            args._config_values = _read_config_file(args.config)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](args)
    except LeakAuditError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
