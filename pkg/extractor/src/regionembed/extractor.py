"""Per-region contextual embedding extraction.

Each selected region is fed to the pretrained model on its own, so no
context from outside the region can leak into its embeddings. Frame blocks
are written in region order to one interchange file per recording.
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .interchange import write_interchange
from .regions import load_region_csv

log = logging.getLogger(__name__)

SAMPLE_RATE = 16000


class ModelUnavailable(Exception):
    """The model identifier cannot be resolved or loaded."""


class RegionFileMissing(Exception):
    """No region CSV for a manifest recording."""


@dataclass
class ExtractJob:
    manifest: str
    regions_dir: str
    model: str           # HF hub id or local model directory
    out_dir: str
    layer: int | None = None   # encoder layer index; None = final output


class EmbeddingModel:
    """Wav2vec2-style encoder wrapper: raw 16 kHz mono floats in, one
    embedding row per ~20 ms out."""

    def __init__(self, identifier: str, layer: int | None = None):
        import torch
        from transformers import Wav2Vec2Model

        try:
            self.model = Wav2Vec2Model.from_pretrained(identifier)
        except Exception as exc:
            raise ModelUnavailable(f"cannot load {identifier!r}: {exc}") from exc
        self.model.eval()
        self.layer = layer
        self.torch = torch
        cfg = self.model.config
        self.dim = cfg.hidden_size
        self.stride = int(np.prod(cfg.conv_stride))
        # smallest input the conv stack maps to one frame
        receptive = 1
        for kernel, stride in zip(reversed(cfg.conv_kernel), reversed(cfg.conv_stride)):
            receptive = (receptive - 1) * stride + kernel
        self.min_samples = receptive

    @property
    def hop_s(self) -> float:
        return self.stride / SAMPLE_RATE

    def embed(self, samples: np.ndarray) -> np.ndarray:
        """(n,) float array -> (frames, dim) float32; empty for too-short input."""
        if len(samples) < self.min_samples:
            return np.zeros((0, self.dim), dtype=np.float32)
        x = self.torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32))
        with self.torch.no_grad():
            out = self.model(x[None], output_hidden_states=self.layer is not None)
        if self.layer is None:
            hidden = out.last_hidden_state
        else:
            hidden = out.hidden_states[self.layer]
        return hidden[0].numpy().astype(np.float32)


def _read_wav_mono(path) -> np.ndarray:
    from scipy.io import wavfile

    rate, data = wavfile.read(path)
    if rate != SAMPLE_RATE:
        raise ValueError(f"{path}: expected {SAMPLE_RATE} Hz input, got {rate}")
    data = np.asarray(data)
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype.kind == "i":
        data = data / float(1 << (8 * data.dtype.itemsize - 1))
    elif data.dtype.kind == "u":
        data = (data.astype(np.float64) - 128.0) / 128.0
    return data.astype(np.float64)


def _manifest_audio_paths(manifest_path):
    with open(manifest_path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if "audio_path" not in (reader.fieldnames or []):
            raise ValueError(f"{manifest_path}: not a dataset manifest")
        return [row["audio_path"] for row in reader if row.get("audio_path")]


def extract(job: ExtractJob) -> list:
    """Run the batch job; returns the list of written interchange paths.

    Region CSVs are looked up as <regions_dir>/<audio stem>.regions.csv;
    outputs land at <out_dir>/<audio stem>.lke.
    """
    model = EmbeddingModel(job.model, layer=job.layer)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for audio_path in _manifest_audio_paths(job.manifest):
        stem = Path(audio_path).stem
        region_path = Path(job.regions_dir) / f"{stem}.regions.csv"
        if not region_path.exists():
            raise RegionFileMissing(str(region_path))
        regions = load_region_csv(region_path)
        samples = _read_wav_mono(audio_path)

        blocks = []
        for index, (start, end) in enumerate(regions.intervals):
            lo = int(round(start * SAMPLE_RATE))
            hi = int(round(end * SAMPLE_RATE))
            frames = model.embed(samples[lo:hi])
            blocks.append((index, frames))
            log.debug("%s region %d: %d frames", stem, index, len(frames))

        out_path = out_dir / f"{stem}.lke"
        write_interchange(out_path, blocks, model.dim, model.hop_s,
                          regions.fingerprint)
        written.append(out_path)
        log.info("wrote %s (%d regions)", out_path, len(blocks))
    return written
