"""leakaudit: detect acoustic-condition leakage in labeled speech corpora."""

__version__ = "0.1.0"

from .audio import (  # noqa: F401
    AudioSample,
    DatasetManifest,
    ManifestEntry,
    WORKING_RATE,
    decode_audio,
    export_wav,
    homogenize,
    load_manifest,
    resample,
    write_manifest,
)
