"""Speech / non-speech / participant region selection.

The pretrained VAD the audit protocol assumes is replaced by a deterministic
energy scorer: per-window log energy in the 100-4000 Hz band, mapped through
a logistic calibrated against the recording's own noise floor (5th percentile
window energy, midpoint 6 dB above it). Like the model it stands in for, it
errs toward labeling noise as speech rather than the reverse. It assumes the
recording contains some low-energy stretches to calibrate against.
"""

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioSample
from .errors import (
    MissingAnnotationError,
    MissingSpeakerLabelsError,
    OutOfBoundsError,
    TooShortError,
)

VAD_WINDOW_S = 0.1
VAD_THRESHOLD = 0.5
VAD_BAND = (100.0, 4000.0)
VAD_MIN_GAP_S = 0.2        # gaps shorter than this are bridged, mirroring the IPU rule
IPU_MAX_PAUSE_S = 0.2

_CALIB_OFFSET_DB = 6.0     # logistic midpoint above the noise floor
_CALIB_SLOPE_DB = 2.0


@dataclass
class RegionSet:
    """Ordered, disjoint time intervals over one recording."""

    intervals: list            # [(start_s, end_s), ...] strictly increasing
    total_duration_s: float
    kind: str = "speech"       # speech | non_speech | participant

    def __post_init__(self):
        prev_end = 0.0
        for start, end in self.intervals:
            if not (0.0 <= start < end <= self.total_duration_s + 1e-9):
                raise OutOfBoundsError(
                    f"interval ({start}, {end}) outside [0, {self.total_duration_s}]")
            if start < prev_end - 1e-12:
                raise OutOfBoundsError("intervals overlap or are out of order")
            prev_end = end

    @property
    def duration_s(self) -> float:
        return sum(e - s for s, e in self.intervals)

    def __len__(self):
        return len(self.intervals)

    def fingerprint(self) -> bytes:
        """8-byte digest of the millisecond-rounded interval list.

        Embedded in embedding interchange files so features computed under a
        different segmentation are rejected instead of silently mixed.
        """
        h = hashlib.blake2b(digest_size=8)
        for start, end in self.intervals:
            h.update(struct.pack("<qq", round(start * 1000), round(end * 1000)))
        return h.digest()


@dataclass
class AnnotationUnit:
    start_s: float
    end_s: float
    speaker: str = ""
    kind: str = "speech"       # speech | cough | laugh | filled_pause


@dataclass
class Annotation:
    units: list = field(default_factory=list)


def load_annotation(path) -> Annotation:
    """Annotation CSV: header `start_s,end_s,speaker,kind`."""
    units = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for row in reader:
            units.append(AnnotationUnit(
                start_s=float(row["start_s"]),
                end_s=float(row["end_s"]),
                speaker=(row.get("speaker") or "").strip(),
                kind=(row.get("kind") or "speech").strip() or "speech",
            ))
    return Annotation(units=units)


def write_annotation(path, annotation: Annotation):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["start_s", "end_s", "speaker", "kind"])
        for u in annotation.units:
            w.writerow([f"{u.start_s:.6f}", f"{u.end_s:.6f}", u.speaker, u.kind])


def vad_scores(sample: AudioSample, window_s: float = VAD_WINDOW_S) -> np.ndarray:
    """Speech probability per non-overlapping window.

    Monotone in the window's 100-4000 Hz energy; the trailing sub-window
    remainder is dropped.
    """
    win = int(round(window_s * sample.rate))
    n = len(sample.samples) // win
    if n < 1:
        raise TooShortError(
            f"signal ({sample.duration_s:.3f} s) shorter than one VAD window")
    frames = sample.samples[:n * win].reshape(n, win)
    spec = np.abs(np.fft.rfft(frames, axis=1)) ** 2
    freqs = np.fft.rfftfreq(win, 1.0 / sample.rate)
    band = (freqs >= VAD_BAND[0]) & (freqs <= VAD_BAND[1])
    energy_db = 10.0 * np.log10(spec[:, band].sum(axis=1) + 1e-20)
    floor_db = np.percentile(energy_db, 5.0)
    mid = floor_db + _CALIB_OFFSET_DB
    return 1.0 / (1.0 + np.exp(-(energy_db - mid) / _CALIB_SLOPE_DB))


def vad_regions(scores, threshold: float = VAD_THRESHOLD, window_s: float = VAD_WINDOW_S,
                min_gap_s: float = 0.0, total_duration_s: float | None = None) -> RegionSet:
    """Threshold scores into speech intervals.

    Maximal runs of windows with score >= threshold become intervals; gaps
    shorter than min_gap_s are then bridged. min_gap_s defaults to 0 here;
    the pipeline applies VAD_MIN_GAP_S.
    """
    scores = np.asarray(scores, dtype=float)
    if total_duration_s is None:
        total_duration_s = len(scores) * window_s
    active = scores >= threshold
    intervals = []
    start = None
    for i, on in enumerate(active):
        if on and start is None:
            start = i
        elif not on and start is not None:
            intervals.append((start * window_s, i * window_s))
            start = None
    if start is not None:
        intervals.append((start * window_s, len(scores) * window_s))
    if min_gap_s > 0:
        intervals = _bridge_gaps(intervals, min_gap_s, strict=True)
    return RegionSet(intervals=intervals, total_duration_s=total_duration_s, kind="speech")


def _bridge_gaps(intervals, max_gap, strict):
    """Merge consecutive intervals whose gap is < max_gap (strict) or <= (not)."""
    merged = []
    for start, end in intervals:
        if merged:
            gap = start - merged[-1][1]
            if (gap < max_gap) if strict else (gap <= max_gap):
                merged[-1] = (merged[-1][0], max(end, merged[-1][1]))
                continue
        merged.append((start, end))
    return [(s, e) for s, e in merged]


def complement(regions: RegionSet, duration_s: float) -> RegionSet:
    """Set complement within [0, duration]; exact interval arithmetic."""
    out = []
    cursor = 0.0
    for start, end in regions.intervals:
        if end > duration_s + 1e-9 or start < -1e-9:
            raise OutOfBoundsError(f"interval ({start}, {end}) outside [0, {duration_s}]")
        if start > cursor:
            out.append((cursor, start))
        cursor = max(cursor, end)
    if cursor < duration_s:
        out.append((cursor, duration_s))
    kind = "non_speech" if regions.kind == "speech" else "speech"
    return RegionSet(intervals=out, total_duration_s=duration_s, kind=kind)


def merge_ipus(annotation: Annotation, max_pause_s: float = IPU_MAX_PAUSE_S,
               total_duration_s: float | None = None, kind: str = "speech") -> RegionSet:
    """Merge annotation units into inter-pause-unit speech intervals.

    Coughs, laughs and filled pauses count as speech; units whose gap is at
    most max_pause_s coalesce.
    """
    units = sorted(annotation.units, key=lambda u: (u.start_s, u.end_s))
    intervals = _bridge_gaps([(u.start_s, u.end_s) for u in units], max_pause_s, strict=False)
    if total_duration_s is None:
        total_duration_s = max((e for _, e in intervals), default=0.0)
    return RegionSet(intervals=intervals, total_duration_s=total_duration_s, kind=kind)


def select_regions(sample: AudioSample, mode: str, source: str,
                   annotation: Annotation | None = None,
                   participant_speaker: str = "PAR",
                   threshold: float = VAD_THRESHOLD,
                   window_s: float = VAD_WINDOW_S,
                   min_gap_s: float = VAD_MIN_GAP_S) -> RegionSet:
    """Resolve the configured region mode to a concrete RegionSet.

    mode: speech | non_speech | participant; source: vad | manual.
    Participant mode requires manual, speaker-labeled annotations.
    """
    if mode not in ("speech", "non_speech", "participant"):
        raise ValueError(f"unknown region mode {mode!r}")
    if source not in ("vad", "manual"):
        raise ValueError(f"unknown segmentation source {source!r}")

    duration = sample.duration_s
    if mode == "participant":
        if source != "manual":
            raise MissingSpeakerLabelsError(
                "participant mode needs manual annotations with speaker labels")
        if annotation is None:
            raise MissingAnnotationError("participant mode requires an annotation file")
        if any(not u.speaker for u in annotation.units):
            raise MissingSpeakerLabelsError("annotation units lack speaker labels")
        own = Annotation([u for u in annotation.units if u.speaker == participant_speaker])
        return merge_ipus(own, total_duration_s=duration, kind="participant")

    if source == "manual":
        if annotation is None:
            raise MissingAnnotationError("manual segmentation requires an annotation file")
        speech = merge_ipus(annotation, total_duration_s=duration)
    else:
        scores = vad_scores(sample, window_s)
        speech = vad_regions(scores, threshold, window_s,
                             min_gap_s=min_gap_s, total_duration_s=duration)
    if mode == "speech":
        return speech
    return complement(speech, duration)


# Region CSV interchange: written by `leakaudit segment`, consumed by the
# external embedding extractor. The fingerprint comment lets downstream
# tools stamp their output with the segmentation they saw.

def write_regions(path, regions: RegionSet):
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# fingerprint={regions.fingerprint().hex()}\n")
        f.write(f"# total_duration_s={regions.total_duration_s:.6f}\n")
        f.write(f"# kind={regions.kind}\n")
        w = csv.writer(f)
        w.writerow(["start_s", "end_s"])
        for start, end in regions.intervals:
            w.writerow([f"{start:.6f}", f"{end:.6f}"])


def load_regions(path) -> RegionSet:
    meta = {}
    intervals = []
    with open(path, newline="", encoding="utf-8") as f:
        rows = []
        for line in f:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            else:
                rows.append(line)
        for row in csv.reader(rows):
            if not row or row[0] == "start_s":
                continue
            intervals.append((float(row[0]), float(row[1])))
    duration = float(meta.get("total_duration_s", max((e for _, e in intervals), default=0.0)))
    return RegionSet(intervals=intervals, total_duration_s=duration,
                     kind=meta.get("kind", "speech"))
