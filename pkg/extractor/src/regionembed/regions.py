"""Reader for the auditor's region CSV export.

Comment lines carry metadata (`# key=value`); the fingerprint is copied
into the interchange header verbatim so the auditor can verify that the
embeddings match the segmentation it derived.
"""

import csv
from dataclasses import dataclass


@dataclass
class RegionFile:
    intervals: list          # [(start_s, end_s), ...]
    fingerprint: bytes       # 8 bytes, from the export header
    total_duration_s: float


def load_region_csv(path) -> RegionFile:
    meta = {}
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            else:
                rows.append(line)
    intervals = []
    for row in csv.reader(rows):
        if not row or row[0] == "start_s":
            continue
        intervals.append((float(row[0]), float(row[1])))
    if "fingerprint" not in meta:
        raise ValueError(f"{path}: no fingerprint header")
    fingerprint = bytes.fromhex(meta["fingerprint"])
    duration = float(meta.get("total_duration_s",
                              max((e for _, e in intervals), default=0.0)))
    return RegionFile(intervals=intervals, fingerprint=fingerprint,
                      total_duration_s=duration)
