"""Minimal PCM WAV reader/writer.

Supports the containers the auditor accepts: RIFF/WAVE with integer PCM at
8, 16 or 24 bits, or 32-bit IEEE float, any channel count and rate.
Integer samples map to [-1, 1) via division by 2^(bits-1); the mapping is
exact, so decode -> encode -> decode round trips bit-identically at equal
bit depth.
"""

import struct

import numpy as np

from .errors import CorruptFileError, UnsupportedFormatError

_FMT_PCM = 1
_FMT_FLOAT = 3

SUPPORTED_BIT_DEPTHS = (8, 16, 24, 32)  # 32 means IEEE float


def read_wav(path):
    """Read a WAV file.

    Returns (data, rate, bits) where data is float64 with shape
    (n_frames, n_channels), amplitudes in [-1, 1].
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise UnsupportedFormatError(f"not a RIFF/WAVE file: {path}")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size and cid == b"data":
            raise CorruptFileError(f"truncated data chunk: {path}")
        if cid == b"fmt ":
            if size < 16:
                raise CorruptFileError(f"fmt chunk too small: {path}")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise CorruptFileError(f"missing fmt or data chunk: {path}")

    audio_format, n_ch, rate, _byte_rate, block_align, bits = fmt
    if n_ch < 1 or rate < 1 or block_align < 1:
        raise CorruptFileError(f"nonsense fmt fields: {path}")
    if audio_format == _FMT_PCM and bits in (8, 16, 24):
        pass
    elif audio_format == _FMT_FLOAT and bits == 32:
        pass
    else:
        raise UnsupportedFormatError(
            f"unsupported codec (format={audio_format}, bits={bits}): {path}")

    n_frames = len(data) // block_align
    if n_frames == 0:
        raise CorruptFileError(f"empty data chunk: {path}")
    data = data[:n_frames * block_align]

    if bits == 8:
        x = np.frombuffer(data, dtype=np.uint8).astype(np.float64)
        x = (x - 128.0) / 128.0
    elif bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif bits == 24:
        b = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3)
        x = (b[:, 0].astype(np.int32)
             | (b[:, 1].astype(np.int32) << 8)
             | (b[:, 2].astype(np.int32) << 16))
        x = np.where(x >= 1 << 23, x - (1 << 24), x).astype(np.float64)
        x /= float(1 << 23)
    else:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
        x = np.clip(x, -1.0, 1.0)

    return x.reshape(n_frames, n_ch), rate, bits


def write_wav(path, data, rate, bits=16):
    """Write float samples in [-1, 1] as a WAV file.

    data: (n_frames,) or (n_frames, n_channels). bits in {8, 16, 24, 32};
    32 writes IEEE float, the rest integer PCM.
    """
    if bits not in SUPPORTED_BIT_DEPTHS:
        raise UnsupportedFormatError(f"cannot encode {bits}-bit WAV")
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n_frames, n_ch = x.shape

    if bits == 32:
        payload = x.astype("<f4").tobytes()
        audio_format = _FMT_FLOAT
    else:
        full = float(1 << (bits - 1))
        q = np.clip(np.rint(x * full), -full, full - 1).astype(np.int32)
        if bits == 8:
            payload = (q + 128).astype(np.uint8).tobytes()
        elif bits == 16:
            payload = q.astype("<i2").tobytes()
        else:
            b = q.astype("<i4").view(np.uint8).reshape(-1, 4)
            payload = np.ascontiguousarray(b[:, :3]).tobytes()
        audio_format = _FMT_PCM

    block_align = n_ch * bits // 8
    byte_rate = rate * block_align
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, n_ch, rate, byte_rate, block_align, bits,
        b"data", len(payload))
    with open(path, "wb") as f:
        f.write(hdr)
        f.write(payload)
        if len(payload) & 1:
            f.write(b"\x00")
