"""Writer for the auditor's embedding interchange format.

Binary, little-endian: magic "LEAK", version u16, dim u32, hop_microseconds
u32, region_fingerprint 8 bytes, block count u32; then per block: region
index u32, frame count u32, frames as 32-bit floats row-major. One file per
recording.
"""

import struct

import numpy as np

MAGIC = b"LEAK"
VERSION = 1


def write_interchange(path, blocks, dim, hop_s, fingerprint: bytes):
    """blocks: list of (region_index, frames) with frames shaped (n, dim)."""
    if len(fingerprint) != 8:
        raise ValueError("fingerprint must be 8 bytes")
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<HII", VERSION, dim, int(round(hop_s * 1e6)))
    payload += fingerprint
    payload += struct.pack("<I", len(blocks))
    for region_index, frames in blocks:
        frames = np.ascontiguousarray(frames, dtype="<f4")
        if frames.size and frames.shape[1] != dim:
            raise ValueError(f"block {region_index}: dim {frames.shape[1]} != {dim}")
        n = frames.shape[0] if frames.ndim == 2 else 0
        payload += struct.pack("<II", region_index, n)
        payload += frames.tobytes()
    with open(path, "wb") as f:
        f.write(payload)
