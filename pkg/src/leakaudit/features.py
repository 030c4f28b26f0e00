"""Per-region acoustic features: built-in MFCCs, external embedding files,
per-dimension normalization, and the high-band noise-floor probe."""

import logging
import struct
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct
from scipy.signal import welch

from .audio import AudioSample
from .errors import (
    BandAboveNyquistError,
    EmptyRegionsError,
    FormatMismatchError,
    RegionFingerprintMismatchError,
    TooFewFramesError,
    TooShortError,
)
from .segment import RegionSet

log = logging.getLogger(__name__)

MFCC_COEFFS = 20
MFCC_WINDOW_S = 0.020
MFCC_HOP_S = 0.010
MFCC_FFT = 512
N_MELS = 40
PREEMPHASIS = 0.97
_LOG_GUARD = 1e-10

PROBE_BAND = (14000.0, 16000.0)

INTERCHANGE_MAGIC = b"LEAK"
INTERCHANGE_VERSION = 1


@dataclass
class FeatureSequence:
    frames: np.ndarray      # (n_frames, dim), time-major
    hop_s: float
    origin: str = "mfcc"    # mfcc | external

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, nfft: int, rate: float) -> np.ndarray:
    """Triangular filters on a mel-spaced grid from 0 Hz to Nyquist,
    evaluated at the rfft bin frequencies. Shape (n_mels, nfft//2 + 1)."""
    points = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(rate / 2.0), n_mels + 2))
    bins = np.fft.rfftfreq(nfft, 1.0 / rate)
    fb = np.zeros((n_mels, len(bins)))
    for j in range(n_mels):
        lo, mid, hi = points[j], points[j + 1], points[j + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fb[j] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mfcc(sample: AudioSample, n_coeffs: int = MFCC_COEFFS,
         window_s: float = MFCC_WINDOW_S, hop_s: float = MFCC_HOP_S) -> FeatureSequence:
    """Mel-frequency cepstra: pre-emphasis, Hann window, power spectrum,
    mel filterbank, log, orthonormal DCT-II, first n_coeffs kept."""
    win = int(round(window_s * sample.rate))
    hop = int(round(hop_s * sample.rate))
    x = sample.samples
    if len(x) < win:
        raise TooShortError(
            f"signal ({len(x)} samples) shorter than one {win}-sample window")
    emphasized = np.concatenate(([x[0]], x[1:] - PREEMPHASIS * x[:-1]))
    n = (len(x) - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n)[:, None]
    window = np.hanning(win + 1)[:-1]
    frames = emphasized[idx] * window
    power = np.abs(np.fft.rfft(frames, n=MFCC_FFT, axis=1)) ** 2
    fb = mel_filterbank(N_MELS, MFCC_FFT, sample.rate)
    logmel = np.log(np.maximum(power @ fb.T, _LOG_GUARD))
    coeffs = dct(logmel, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return FeatureSequence(frames=coeffs, hop_s=hop_s, origin="mfcc")


def znormalize(features: FeatureSequence) -> FeatureSequence:
    """Zero mean, unit variance per dimension; constant dimensions map to
    all-zero instead of dividing by ~0."""
    if len(features) < 2:
        raise TooFewFramesError("normalization needs at least 2 frames")
    mean = features.frames.mean(axis=0)
    std = features.frames.std(axis=0)
    centered = features.frames - mean
    out = np.where(std > 1e-12, centered / np.where(std > 1e-12, std, 1.0), 0.0)
    return FeatureSequence(frames=out, hop_s=features.hop_s, origin=features.origin)


def extract_over_regions(sample: AudioSample, regions: RegionSet, extractor=None,
                         min_interval_s: float = MFCC_WINDOW_S,
                         normalize: bool = True) -> FeatureSequence:
    """Run the extractor on each interval independently, concatenate the
    frame blocks in interval order, then z-normalize per dimension.

    Intervals shorter than one feature window are dropped (counted in the
    log); extraction never sees audio outside the interval, so no context
    bleeds across region boundaries.
    """
    if extractor is None:
        extractor = mfcc
    blocks = []
    dropped = 0
    for start, end in regions.intervals:
        if end - start < min_interval_s - 1e-12:
            dropped += 1
            continue
        lo = int(round(start * sample.rate))
        hi = int(round(end * sample.rate))
        piece = sample.replace(sample.samples[lo:hi])
        blocks.append(extractor(piece))
    if dropped:
        log.info("dropped %d sub-window intervals from %s", dropped, sample.source_path)
    if not blocks:
        raise EmptyRegionsError("no usable interval after dropping sub-window ones")
    frames = np.concatenate([b.frames for b in blocks], axis=0)
    seq = FeatureSequence(frames=frames, hop_s=blocks[0].hop_s, origin=blocks[0].origin)
    return znormalize(seq) if normalize else seq


# --- embedding interchange ---------------------------------------------------
#
# Binary, little-endian: magic "LEAK", version u16, dim u32,
# hop_microseconds u32, region_fingerprint 8 bytes, block count u32; then per
# block: region index u32, frame count u32, frames f32 row-major. One file
# per recording.

def write_embeddings(path, blocks, dim: int, hop_s: float, fingerprint: bytes):
    """blocks: list of (region_index, frames) with frames shaped (n, dim)."""
    payload = bytearray()
    payload += INTERCHANGE_MAGIC
    payload += struct.pack("<HII", INTERCHANGE_VERSION, dim, int(round(hop_s * 1e6)))
    payload += fingerprint
    payload += struct.pack("<I", len(blocks))
    for region_index, frames in blocks:
        frames = np.ascontiguousarray(frames, dtype="<f4")
        if frames.ndim != 2 or frames.shape[1] != dim:
            raise ValueError(f"block {region_index} has shape {frames.shape}, want (*, {dim})")
        payload += struct.pack("<II", region_index, frames.shape[0])
        payload += frames.tobytes()
    with open(path, "wb") as f:
        f.write(payload)


def load_embeddings(path, regions: RegionSet) -> FeatureSequence:
    """Read an interchange file and concatenate its blocks in region order.

    The embedded fingerprint must match the RegionSet the caller derived;
    otherwise the embeddings were computed under a different segmentation.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 22 or raw[:4] != INTERCHANGE_MAGIC:
        raise FormatMismatchError(f"not an embedding interchange file: {path}")
    version, dim, hop_us = struct.unpack_from("<HII", raw, 4)
    if version != INTERCHANGE_VERSION:
        raise FormatMismatchError(f"unsupported interchange version {version}")
    fingerprint = raw[14:22]
    if fingerprint != regions.fingerprint():
        raise RegionFingerprintMismatchError(
            "embeddings were computed for a different segmentation")
    (n_blocks,) = struct.unpack_from("<I", raw, 22)
    pos = 26
    blocks = []
    for _ in range(n_blocks):
        if pos + 8 > len(raw):
            raise FormatMismatchError("truncated block header")
        region_index, n_frames = struct.unpack_from("<II", raw, pos)
        pos += 8
        nbytes = n_frames * dim * 4
        if pos + nbytes > len(raw):
            raise FormatMismatchError("truncated block payload")
        frames = np.frombuffer(raw, dtype="<f4", count=n_frames * dim, offset=pos)
        pos += nbytes
        if region_index >= len(regions.intervals):
            raise FormatMismatchError(
                f"block names region {region_index}, set has {len(regions.intervals)}")
        blocks.append((region_index, frames.reshape(n_frames, dim).astype(np.float64)))
    if pos != len(raw):
        raise FormatMismatchError(f"{len(raw) - pos} trailing bytes")
    if not blocks:
        raise EmptyRegionsError(f"no embedding blocks in {path}")
    blocks.sort(key=lambda b: b[0])
    frames = np.concatenate([b[1] for b in blocks], axis=0)
    return FeatureSequence(frames=frames, hop_s=hop_us / 1e6, origin="external")


def noise_floor_probe(sample: AudioSample, band=PROBE_BAND) -> float:
    """Power inside the band relative to full-band power, in dB.

    Runs on the decoded original-rate audio; the high-band floor only means
    anything before resampling throws the band away.
    """
    low, high = band
    if sample.rate < 2.0 * high:
        raise BandAboveNyquistError(
            f"band {band} needs rate >= {2 * high:.0f}, got {sample.rate}")
    nperseg = min(4096, len(sample.samples))
    freqs, psd = welch(sample.samples, fs=sample.rate, nperseg=nperseg)
    total = psd.sum()
    in_band = psd[(freqs >= low) & (freqs <= high)].sum()
    if total <= 0:
        return -200.0
    return float(10.0 * np.log10(max(in_band / total, 1e-20)))
