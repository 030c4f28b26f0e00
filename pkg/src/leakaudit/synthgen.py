"""Synthetic corpora with controllable class-correlated acoustic confounds.

Recordings are speech-like bursts (amplitude-modulated formant-band noise
with IPU-like gaps) over a two-component noise bed: a fixed low-frequency
room tone plus a wideband floor. Confounds set a device-level parameter
(floor level, bandwidth, gain) by class for a controllable fraction of
recordings; speech content is drawn from one distribution for both classes
unless a speech-rate difference is explicitly planted.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfilt

from . import wavio
from .audio import AudioSample, DatasetManifest, ManifestEntry, resample, write_manifest
from .segment import Annotation, AnnotationUnit, write_annotation

RATE = 16000

BURST_LEVEL_DB = -20.0     # RMS of the speech surrogate before AM
FLOOR_LEVEL_DB = -50.0     # wideband noise floor (the confounded knob)
ROOM_LEVEL_DB = -60.0      # fixed low-frequency room tone
ROOM_CUTOFF_HZ = 500.0
BURST_BAND_HZ = (300.0, 3000.0)
DEFAULT_AM_RATE_HZ = 4.0   # syllabic envelope rate inside bursts
RAMP_S = 0.02

# Faint fixed-level background transients (clicks, hiss bursts) above the
# speech band. Their absolute level never depends on class; a raised noise
# floor simply masks them, which is what keeps a floor difference audible to
# the classifier after per-recording feature normalization. Sitting above
# 4 kHz they are invisible to the VAD's analysis band.
PIP_LEVEL_DB = -46.0
PIP_BAND_HZ = (4000.0, 7000.0)
PIP_RATE_PER_S = 0.4
PIP_LEN_S = (0.05, 0.15)


@dataclass
class Confound:
    kind: str = "none"            # none | noise_floor | bandwidth | loudness
    delta_db: float = 10.0        # noise_floor / loudness magnitude
    bandwidth_hz: tuple = (5512.0, 8000.0)   # class 0 vs class 1 band limit

    @classmethod
    def none(cls):
        return cls(kind="none")

    @classmethod
    def noise_floor(cls, delta_db: float):
        return cls(kind="noise_floor", delta_db=delta_db)

    @classmethod
    def bandwidth(cls, low_hz: float, high_hz: float):
        return cls(kind="bandwidth", bandwidth_hz=(low_hz, high_hz))

    @classmethod
    def loudness(cls, delta_db: float):
        return cls(kind="loudness", delta_db=delta_db)


@dataclass
class SynthSpec:
    n_per_class: int = 20
    duration_s: float = 60.0
    speech_duty: float = 0.5
    confound: Confound = field(default_factory=Confound.none)
    confound_strength: float = 1.0
    seed: int = 0
    rate: int = RATE
    # Optional planted speech-region difference: per-class syllabic AM rate
    # (Hz). Burst/gap lengths scale inversely so the duty stays equal; the
    # noise bed is untouched, so non-speech regions remain class-independent.
    speech_rate_by_class: tuple | None = None

    def validate(self):
        if self.duration_s < 10.0:
            raise ValueError("duration_s must be >= 10")
        if not 0.0 < self.speech_duty < 1.0:
            raise ValueError("speech_duty must be in (0, 1)")
        if not 0.0 <= self.confound_strength <= 1.0:
            raise ValueError("confound_strength must be in [0, 1]")


def _db_amp(db: float) -> float:
    return 10.0 ** (db / 20.0)


def _scaled_noise(rng, n, sos, rms_target):
    x = rng.standard_normal(n)
    if sos is not None:
        x = sosfilt(sos, x)
    rms = math.sqrt(float(np.mean(x * x)))
    return x * (rms_target / rms)


def _burst_schedule(rng, duration_s, duty, am_rate):
    """IPU-like alternation of gaps and bursts targeting the duty cycle.

    Faster AM implies proportionally shorter bursts and gaps, keeping the
    fraction of voiced time fixed.
    """
    cycle = 8.0 / am_rate
    intervals = []
    t = float(rng.uniform(0.3, 0.8))
    while t < duration_s - 0.5:
        burst = duty * cycle * rng.uniform(0.7, 1.3)
        burst = max(burst, 0.3)
        end = min(t + burst, duration_s - 0.1)
        if end - t >= 0.3:
            intervals.append((t, end))
        gap = (1.0 - duty) * cycle * rng.uniform(0.7, 1.3)
        t = end + max(gap, 0.3)
    return intervals


def _render_recording(rng, spec: SynthSpec, floor_db: float, am_rate: float):
    n = int(round(spec.duration_s * spec.rate))
    nyq = spec.rate / 2.0
    room_sos = butter(4, ROOM_CUTOFF_HZ / nyq, btype="low", output="sos")
    band_sos = butter(4, [BURST_BAND_HZ[0] / nyq, BURST_BAND_HZ[1] / nyq],
                      btype="band", output="sos")

    x = _scaled_noise(rng, n, None, _db_amp(floor_db))
    x += _scaled_noise(rng, n, room_sos, _db_amp(ROOM_LEVEL_DB))

    pip_sos = butter(4, [PIP_BAND_HZ[0] / nyq, min(PIP_BAND_HZ[1], 0.95 * nyq) / nyq],
                     btype="band", output="sos")
    n_pips = rng.poisson(PIP_RATE_PER_S * spec.duration_s)
    for _ in range(n_pips):
        plen = int(rng.uniform(*PIP_LEN_S) * spec.rate)
        lo = int(rng.uniform(0, n - plen))
        pip = _scaled_noise(rng, plen, pip_sos, _db_amp(PIP_LEVEL_DB))
        pip *= np.hanning(plen)
        x[lo:lo + plen] += pip

    intervals = _burst_schedule(rng, spec.duration_s, spec.speech_duty, am_rate)
    ramp = int(round(RAMP_S * spec.rate))
    for start, end in intervals:
        lo, hi = int(round(start * spec.rate)), int(round(end * spec.rate))
        seg = _scaled_noise(rng, hi - lo, band_sos, _db_amp(BURST_LEVEL_DB))
        t = np.arange(hi - lo) / spec.rate
        phase = rng.uniform(0.0, 2.0 * math.pi)
        seg *= 0.55 + 0.45 * np.sin(2.0 * math.pi * am_rate * t + phase)
        if hi - lo > 2 * ramp:
            edge = 0.5 - 0.5 * np.cos(np.linspace(0.0, math.pi, ramp))
            seg[:ramp] *= edge
            seg[-ramp:] *= edge[::-1]
        x[lo:hi] += seg
    return x, intervals


def _apply_bandwidth(x, rate, limit_hz):
    if limit_hz >= rate / 2.0:
        return x
    inner = AudioSample(x, rate)
    narrowed = resample(inner, int(round(2 * limit_hz)))
    return resample(narrowed, rate).samples[:len(x)]


def synth_dataset(spec: SynthSpec, out_dir) -> DatasetManifest:
    """Generate the corpus under out_dir and return its manifest.

    Writes wav/NNN.wav, ann/NNN.csv, and manifest.csv; regenerating with the
    same spec is bit-identical. Annotations carry the exact burst intervals.
    """
    spec.validate()
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    (out / "ann").mkdir(parents=True, exist_ok=True)

    entries = []
    index = 0
    for label in (0, 1):
        for _ in range(spec.n_per_class):
            rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index)))

            # Confound parameter: bound recordings take the class value, the
            # rest draw it at random, giving correlation ~= confound_strength.
            bound = rng.random() < spec.confound_strength
            side = label if bound else int(rng.integers(2))

            floor_db = FLOOR_LEVEL_DB
            gain_db = 0.0
            bandwidth = None
            c = spec.confound
            if c.kind == "noise_floor":
                floor_db += c.delta_db if side == 1 else 0.0
            elif c.kind == "bandwidth":
                bandwidth = c.bandwidth_hz[side]
            elif c.kind == "loudness":
                gain_db = c.delta_db if side == 1 else 0.0

            am_rate = DEFAULT_AM_RATE_HZ
            if spec.speech_rate_by_class is not None:
                am_rate = float(spec.speech_rate_by_class[label])

            x, intervals = _render_recording(rng, spec, floor_db, am_rate)
            if bandwidth is not None:
                x = _apply_bandwidth(x, spec.rate, bandwidth)
            if gain_db:
                x = x * _db_amp(gain_db)

            wav_path = out / "wav" / f"{index:03d}.wav"
            ann_path = out / "ann" / f"{index:03d}.csv"
            wavio.write_wav(wav_path, x, spec.rate, bits=16)
            units = [AnnotationUnit(start_s=s, end_s=e, speaker="PAR", kind="speech")
                     for s, e in intervals]
            write_annotation(ann_path, Annotation(units=units))

            entries.append(ManifestEntry(
                audio_path=str(wav_path),
                label=label,
                speaker_id=f"spk{index:03d}",
                annotation_path=str(ann_path),
                meta={"confound": c.kind, "side": str(side)},
            ))
            index += 1

    manifest = DatasetManifest(entries=entries)
    write_manifest(out / "manifest.csv", manifest)
    return manifest
