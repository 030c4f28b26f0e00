"""Audio decoding, resampling, and the dataset manifest."""

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.signal import firwin, kaiser_beta, kaiserord, resample_poly

from . import wavio
from .errors import (
    DuplicatePathError,
    EmptyClassError,
    InvalidLabelError,
    InvalidRateError,
    MalformedManifestError,
)

#: Rate every recording is brought to before feature extraction.
WORKING_RATE = 16000

# Anti-alias filter design: stopband attenuation and the transition band as
# a fraction of the narrower Nyquist. The stopband edge is placed exactly at
# the band edge, so aliasing products stay below -STOPBAND_DB at the cost of
# a slightly early passband roll-off (from ~0.92 of the band edge).
STOPBAND_DB = 80.0
TRANSITION_FRAC = 0.08


@dataclass
class AudioSample:
    """Decoded mono waveform plus provenance."""

    samples: np.ndarray
    rate: int
    source_path: str = ""
    original_rate: int = 0
    channels_collapsed: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.original_rate == 0:
            self.original_rate = self.rate

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.rate

    def replace(self, samples, rate=None):
        """Same provenance, new waveform."""
        return AudioSample(
            samples=samples,
            rate=self.rate if rate is None else rate,
            source_path=self.source_path,
            original_rate=self.original_rate,
            channels_collapsed=self.channels_collapsed,
        )


@dataclass
class ManifestEntry:
    audio_path: str
    label: int
    speaker_id: str = ""
    annotation_path: str | None = None
    embedding_path: str | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class DatasetManifest:
    entries: list
    class_names: tuple = ("class0", "class1")

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries], dtype=int)

    def __len__(self):
        return len(self.entries)


MANIFEST_HEADER = [
    "audio_path", "label", "speaker_id",
    "annotation_path", "embedding_path", "meta_json",
]


def load_manifest(path) -> DatasetManifest:
    """Parse and validate the manifest CSV.

    Header must be exactly `audio_path,label,speaker_id,annotation_path,
    embedding_path,meta_json`. Optional fields may be empty; meta_json is a
    JSON object or empty.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise MalformedManifestError(f"cannot read manifest: {exc}") from exc
    if not rows or [c.strip() for c in rows[0]] != MANIFEST_HEADER:
        raise MalformedManifestError(
            f"bad manifest header, expected {','.join(MANIFEST_HEADER)}")

    entries = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(MANIFEST_HEADER):
            raise MalformedManifestError(
                f"line {lineno}: expected {len(MANIFEST_HEADER)} fields, got {len(row)}")
        audio_path, label_s, speaker, ann, emb, meta_s = (c.strip() for c in row)
        if label_s not in ("0", "1"):
            raise InvalidLabelError(f"line {lineno}: label must be 0 or 1, got {label_s!r}")
        if audio_path in seen:
            raise DuplicatePathError(f"line {lineno}: duplicate audio path {audio_path}")
        seen.add(audio_path)
        meta = {}
        if meta_s:
            try:
                meta = json.loads(meta_s)
            except json.JSONDecodeError as exc:
                raise MalformedManifestError(f"line {lineno}: bad meta_json: {exc}") from exc
            if not isinstance(meta, dict):
                raise MalformedManifestError(f"line {lineno}: meta_json must be an object")
        entries.append(ManifestEntry(
            audio_path=audio_path,
            label=int(label_s),
            speaker_id=speaker,
            annotation_path=ann or None,
            embedding_path=emb or None,
            meta={str(k): str(v) for k, v in meta.items()},
        ))

    labels = {e.label for e in entries}
    for cls in (0, 1):
        if cls not in labels:
            raise EmptyClassError(f"manifest has no entries with label {cls}")
    return DatasetManifest(entries=entries)


def write_manifest(path, manifest: DatasetManifest):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            w.writerow([
                e.audio_path, e.label, e.speaker_id,
                e.annotation_path or "", e.embedding_path or "",
                json.dumps(e.meta, sort_keys=True) if e.meta else "",
            ])


def decode_audio(path) -> AudioSample:
    """Decode a WAV file to a mono AudioSample (channels averaged)."""
    data, rate, _bits = wavio.read_wav(path)
    n_ch = data.shape[1]
    mono = data.mean(axis=1) if n_ch > 1 else data[:, 0]
    return AudioSample(
        samples=mono,
        rate=rate,
        source_path=str(path),
        original_rate=rate,
        channels_collapsed=n_ch > 1,
    )


def export_wav(path, sample: AudioSample, bits=16):
    wavio.write_wav(path, sample.samples, sample.rate, bits=bits)


@lru_cache(maxsize=32)
def _antialias_taps(up: int, down: int) -> np.ndarray:
    # Cutoff sits at the narrower of the two Nyquist bands; the transition
    # band is pulled entirely below it so the stopband starts at the edge.
    max_rate = max(up, down)
    f_edge = 1.0 / max_rate  # relative to the upsampled Nyquist
    width = TRANSITION_FRAC * f_edge
    numtaps, _ = kaiserord(STOPBAND_DB, width)
    numtaps |= 1
    return firwin(numtaps, f_edge - width / 2.0,
                  window=("kaiser", kaiser_beta(STOPBAND_DB)))


def resample(sample: AudioSample, target_rate: int) -> AudioSample:
    """Polyphase windowed-sinc resampling (Kaiser, >= 60 dB stopband)."""
    if target_rate <= 0:
        raise InvalidRateError(f"target rate must be positive, got {target_rate}")
    if target_rate == sample.rate:
        return sample.replace(sample.samples.copy())
    g = math.gcd(sample.rate, target_rate)
    up, down = target_rate // g, sample.rate // g
    taps = _antialias_taps(up, down)
    out = resample_poly(sample.samples, up, down, window=taps)
    return sample.replace(out, rate=target_rate)


def homogenize(sample: AudioSample, intermediate_rate: int, target_rate: int) -> AudioSample:
    """Bandwidth-homogenizing chain: down to intermediate_rate, up to target_rate.

    A recording whose rate is already below the intermediate cannot be
    homogenized to that bandwidth; rejecting it here lets the audit exclude
    and log it instead of silently upsampling.
    """
    if intermediate_rate != sample.rate and \
            intermediate_rate > min(sample.rate, target_rate):
        raise InvalidRateError(
            f"intermediate rate {intermediate_rate} exceeds source rate "
            f"{sample.rate}; recording cannot reach the homogenized bandwidth")
    narrowed = resample(sample, intermediate_rate)
    return resample(narrowed, target_rate)
