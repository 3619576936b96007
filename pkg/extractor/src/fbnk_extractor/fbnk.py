"""Writer for the FBNK feature-bank format.

This is the whole contract with the consuming toolkit, implemented from
the published byte layout: magic "FBNK", version u16 (=1), header-length
u32, UTF-8 JSON header {client_id, n, d, C, stage_dims, backbone_id,
normalized, normalization_mode}, then n*d float64 row-major features and
n uint32 labels, all little-endian.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MAGIC = b"FBNK"
VERSION = 1


def write_fbnk(
    path: str | Path,
    client_id: str,
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    stage_dims: list[int],
    backbone_id: str,
) -> int:
    """Write an (unnormalized) feature bank; returns the byte count."""
    feats = np.ascontiguousarray(features, dtype="<f8")
    labs = np.ascontiguousarray(labels, dtype="<u4")
    n, d = feats.shape
    if labs.shape != (n,):
        raise ValueError(f"labels shape {labs.shape} does not match {n} feature rows")
    if sum(stage_dims) != d:
        raise ValueError(f"stage_dims {stage_dims} do not sum to feature dim {d}")
    header = {
        "client_id": client_id,
        "n": n,
        "d": d,
        "C": int(num_classes),
        "stage_dims": [int(s) for s in stage_dims],
        "backbone_id": backbone_id,
        "normalized": False,
        "normalization_mode": None,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        [
            MAGIC,
            VERSION.to_bytes(2, "little"),
            len(header_bytes).to_bytes(4, "little"),
            header_bytes,
            feats.tobytes(),
            labs.tobytes(),
        ]
    )
    Path(path).write_bytes(blob)
    return len(blob)
