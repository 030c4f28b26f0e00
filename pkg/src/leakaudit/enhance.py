"""Pre-processing variants: sliding-window loudness normalization and
stationary-noise spectral subtraction.

The loudness measure is the K-weighted mean square (pre-filter re-derived
for the working rate via the bilinear transform, since the reference
coefficients are specified at 48 kHz only). The denoiser is classical
spectral subtraction; the enhancement stage is a named pipeline slot so an
external denoiser can be swapped in via file round-trip.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import sosfilt

from .audio import AudioSample
from .errors import InvalidRateError, RateMismatchError, TooShortError
from .segment import RegionSet

LOUDNESS_WINDOW_S = 0.4
LOUDNESS_HOP_S = 0.1
LOUDNESS_TARGET_LUFS = -23.0
LOUDNESS_GATE_LUFS = -70.0
GAIN_CLAMP_DB = 30.0

STFT_FRAME_S = 0.032
STFT_OVERLAP = 0.5
OVERSUBTRACTION = 1.5
SPECTRAL_FLOOR = 0.05

ENHANCEMENT_MODES = ("orig", "nr", "ln_nr", "ln")

GATED = -math.inf


@dataclass
class LoudnessProfile:
    window_loudness: np.ndarray   # LUFS per window; -inf marks gated windows
    window_s: float
    hop_s: float

    def gated(self) -> np.ndarray:
        return ~np.isfinite(self.window_loudness)


@dataclass
class NoiseProfile:
    magnitude_spectrum: np.ndarray   # mean |X| per bin, len fft_size//2 + 1
    fft_size: int
    rate: int


def _k_weighting_sos(rate: float) -> np.ndarray:
    """Two-stage pre-filter (high shelf + high pass) for an arbitrary rate."""
    # Stage 1: spectral-shaping high shelf.
    f0, gain_db, q = 1681.9744509555319, 3.99984385397, 0.7071752369554193
    k = math.tan(math.pi * f0 / rate)
    vh = 10.0 ** (gain_db / 20.0)
    vb = vh ** 0.499666774155
    a0 = 1.0 + k / q + k * k
    shelf = [(vh + vb * k / q + k * k) / a0,
             2.0 * (k * k - vh) / a0,
             (vh - vb * k / q + k * k) / a0,
             1.0,
             2.0 * (k * k - 1.0) / a0,
             (1.0 - k / q + k * k) / a0]
    # Stage 2: high pass.
    f0, q = 38.13547087613982, 0.5003270373253953
    k = math.tan(math.pi * f0 / rate)
    a0 = 1.0 + k / q + k * k
    highpass = [1.0, -2.0, 1.0,
                1.0,
                2.0 * (k * k - 1.0) / a0,
                (1.0 - k / q + k * k) / a0]
    return np.array([shelf, highpass])


def measure_loudness(sample: AudioSample, window_s: float = LOUDNESS_WINDOW_S,
                     hop_s: float = LOUDNESS_HOP_S) -> LoudnessProfile:
    """K-weighted loudness (LUFS) over sliding windows.

    Windows whose level falls below the -70 LUFS absolute gate are marked
    GATED (-inf).
    """
    if sample.rate < 8000:
        raise InvalidRateError(f"loudness needs >= 8 kHz, got {sample.rate}")
    win = int(round(window_s * sample.rate))
    hop = int(round(hop_s * sample.rate))
    if len(sample.samples) < win:
        raise TooShortError("signal shorter than one loudness window")
    weighted = sosfilt(_k_weighting_sos(sample.rate), sample.samples)
    sq = weighted * weighted
    csum = np.concatenate(([0.0], np.cumsum(sq)))
    starts = np.arange(0, len(sq) - win + 1, hop)
    mean_sq = (csum[starts + win] - csum[starts]) / win
    with np.errstate(divide="ignore"):
        lufs = -0.691 + 10.0 * np.log10(mean_sq)
    lufs[lufs < LOUDNESS_GATE_LUFS] = GATED
    return LoudnessProfile(window_loudness=lufs, window_s=window_s, hop_s=hop_s)


def loudness_normalize(sample: AudioSample, target_lufs: float = LOUDNESS_TARGET_LUFS,
                       window_s: float = LOUDNESS_WINDOW_S,
                       hop_s: float = LOUDNESS_HOP_S) -> AudioSample:
    """Drive each window's loudness to the target via interpolated gains.

    Per-window gains (clamped to +-30 dB) are linearly interpolated in dB
    between window centers; gated windows carry the previous gain forward so
    silence stays silent. Overlapping windows couple neighbouring
    corrections, so one measure/apply cycle over- or undershoots where
    loudness moves quickly; the damped refinement cycles converge to the
    sliding-window fixed point wherever loudness is continuous at the window
    scale. Instantaneous steps above ~20 dB keep a sub-LU residual in the
    straddling windows. Output is soft-limited into [-1, 1].
    """
    hop = int(round(hop_s * sample.rate))
    win = int(round(window_s * sample.rate))
    positions = np.arange(len(sample.samples), dtype=float)
    out = sample.samples
    for step in (1.0, 0.5, 0.5, 0.5, 0.5, 0.5):
        profile = measure_loudness(sample.replace(out), window_s, hop_s)
        gains_db = step * (target_lufs - profile.window_loudness)
        gains_db = np.clip(gains_db, -GAIN_CLAMP_DB, GAIN_CLAMP_DB)
        # Gated windows keep the previous gain (0 dB before the first sound).
        last = 0.0
        for i, g in enumerate(profile.window_loudness):
            if not np.isfinite(g):
                gains_db[i] = last
            else:
                last = gains_db[i]
        centers = np.arange(len(gains_db)) * hop + win / 2.0
        gain = 10.0 ** (np.interp(positions, centers, gains_db) / 20.0)
        out = out * gain
    return sample.replace(_soft_limit(out))


def _soft_limit(x: np.ndarray, knee: float = 0.95) -> np.ndarray:
    """Identity below the knee, tanh-compressed above, peak bounded at 1."""
    over = np.abs(x) > knee
    if not over.any():
        return x
    y = x.copy()
    a = np.abs(x[over])
    y[over] = np.sign(x[over]) * (knee + (1.0 - knee) * np.tanh((a - knee) / (1.0 - knee)))
    return y


def _frame_count(n: int, nfft: int, hop: int) -> int:
    return max(0, (n - nfft) // hop + 1)


def stft(x: np.ndarray, nfft: int, hop: int) -> np.ndarray:
    """Hann-windowed STFT, frames x bins. Input must cover one frame."""
    window = np.hanning(nfft + 1)[:-1]
    n = _frame_count(len(x), nfft, hop)
    idx = np.arange(nfft)[None, :] + hop * np.arange(n)[:, None]
    return np.fft.rfft(x[idx] * window, axis=1)


def istft(frames: np.ndarray, nfft: int, hop: int, length: int) -> np.ndarray:
    """Windowed overlap-add inverse, normalized by the accumulated
    squared window so the analysis/synthesis pair has unit gain."""
    window = np.hanning(nfft + 1)[:-1]
    chunks = np.fft.irfft(frames, n=nfft, axis=1) * window
    out = np.zeros((frames.shape[0] - 1) * hop + nfft)
    norm = np.zeros_like(out)
    for i, chunk in enumerate(chunks):
        out[i * hop:i * hop + nfft] += chunk
        norm[i * hop:i * hop + nfft] += window * window
    good = norm > 1e-10
    out[good] /= norm[good]
    return out[:length]


def _pad_for_stft(x: np.ndarray, nfft: int, hop: int):
    # One leading hop of zeros keeps every retained sample fully covered by
    # overlapping windows; trailing pad completes the final frame.
    lead = hop
    deficit = (-(len(x) + lead - nfft)) % hop
    return np.concatenate([np.zeros(lead), x, np.zeros(hop + deficit)]), lead


def estimate_noise_profile(sample: AudioSample, regions: RegionSet | None = None,
                           fft_size: int | None = None) -> NoiseProfile:
    """Mean magnitude spectrum of the noise frames.

    Frames are taken inside the given regions; with no regions, the
    lowest-energy decile of all frames stands in for noise.
    """
    nfft = fft_size or int(round(STFT_FRAME_S * sample.rate))
    hop = int(round(nfft * (1.0 - STFT_OVERLAP)))
    n = _frame_count(len(sample.samples), nfft, hop)
    if n < 1:
        raise TooShortError("signal shorter than one analysis frame")
    spec = np.abs(stft(sample.samples, nfft, hop))
    if regions is not None:
        starts = hop * np.arange(n)
        keep = np.zeros(n, dtype=bool)
        for s, e in regions.intervals:
            keep |= (starts >= s * sample.rate) & (starts + nfft <= e * sample.rate)
        spec = spec[keep]
    else:
        energy = (spec ** 2).sum(axis=1)
        decile = max(10, len(energy) // 10)
        spec = spec[np.argsort(energy, kind="stable")[:decile]]
    if spec.shape[0] < 10:
        raise TooShortError(
            f"need >= 10 noise frames, found {spec.shape[0]}")
    return NoiseProfile(magnitude_spectrum=spec.mean(axis=0), fft_size=nfft,
                        rate=sample.rate)


def spectral_subtract(sample: AudioSample, profile: NoiseProfile,
                      oversubtraction: float = OVERSUBTRACTION,
                      floor: float = SPECTRAL_FLOOR) -> AudioSample:
    """Subtract the noise magnitude estimate from every STFT frame.

    Magnitudes are reduced by oversubtraction x profile and clamped at
    floor x magnitude; phase is untouched. Output length equals input.
    """
    if profile.rate != sample.rate:
        raise RateMismatchError(
            f"profile at {profile.rate} Hz, sample at {sample.rate} Hz")
    nfft = profile.fft_size
    hop = int(round(nfft * (1.0 - STFT_OVERLAP)))
    x, lead = _pad_for_stft(sample.samples, nfft, hop)
    frames = stft(x, nfft, hop)
    mag = np.abs(frames)
    reduced = np.maximum(mag - oversubtraction * profile.magnitude_spectrum,
                         floor * mag)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(mag > 0, reduced / np.where(mag > 0, mag, 1.0), 0.0)
    out = istft(frames * scale, nfft, hop, len(x))
    return sample.replace(out[lead:lead + len(sample.samples)])


def enhance(sample: AudioSample, mode: str,
            noise_regions: RegionSet | None = None) -> AudioSample:
    """Apply one of the named pre-processing variants.

    orig: untouched. nr: spectral subtraction against the recording's own
    noise estimate. ln: sliding-window loudness normalization. ln_nr:
    loudness normalization first, then noise reduction.
    """
    if mode not in ENHANCEMENT_MODES:
        raise ValueError(f"unknown enhancement mode {mode!r}")
    if mode == "orig":
        return sample
    out = sample
    if mode in ("ln", "ln_nr"):
        out = loudness_normalize(out)
    if mode in ("nr", "ln_nr"):
        profile = estimate_noise_profile(out, regions=noise_regions)
        out = spectral_subtract(out, profile)
    return out
