"""regionembed: batch per-region wav2vec2 embedding extraction."""

__version__ = "0.1.0"

from .extractor import ExtractJob, ModelUnavailable, RegionFileMissing, extract  # noqa: F401
