"""FBNK binary file format for feature banks.

Layout (little-endian): magic b"FBNK", format version u16, header length
u32, header as UTF-8 JSON, features as n*d float64 row-major, labels as
n uint32. Roundtrips are bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .bank import FeatureBank
from .exceptions import (
    BadMagicError,
    IntegrityError,
    InvalidInputError,
    TruncatedFileError,
    UnsupportedVersionError,
)

MAGIC = b"FBNK"
VERSION = 1


def bank_to_bytes(bank: FeatureBank) -> bytes:
    header = {
        "client_id": bank.client_id,
        "n": bank.num_samples,
        "d": bank.feature_dim,
        "C": bank.num_classes,
        "stage_dims": list(bank.stage_dims),
        "backbone_id": bank.backbone_id,
        "normalized": bank.normalized,
        "normalization_mode": bank.normalization_mode,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    if bank.labels.size and bank.labels.max() >= 2**32:
        raise InvalidInputError("labels exceed the u32 range of the file format")
    parts = [
        MAGIC,
        VERSION.to_bytes(2, "little"),
        len(header_bytes).to_bytes(4, "little"),
        header_bytes,
        np.ascontiguousarray(bank.features, dtype="<f8").tobytes(),
        np.ascontiguousarray(bank.labels, dtype="<u4").tobytes(),
    ]
    return b"".join(parts)


def bank_from_bytes(data: bytes) -> FeatureBank:
    if len(data) < 10:
        raise TruncatedFileError(f"file too short to hold the fixed header ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"expected magic {MAGIC!r}, found {data[:4]!r}")
    version = int.from_bytes(data[4:6], "little")
    if version != VERSION:
        raise UnsupportedVersionError(f"unknown format version {version}")
    header_len = int.from_bytes(data[6:10], "little")
    if len(data) < 10 + header_len:
        raise TruncatedFileError("file ends inside the JSON header")
    try:
        header = json.loads(data[10 : 10 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise IntegrityError(f"header is not valid JSON: {exc}") from exc

    try:
        n = int(header["n"])
        d = int(header["d"])
        num_classes = int(header["C"])
        stage_dims = tuple(int(s) for s in header["stage_dims"])
        client_id = str(header["client_id"])
        backbone_id = str(header["backbone_id"])
        normalized = bool(header["normalized"])
        normalization_mode = header["normalization_mode"]
    except (KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"header is missing or mistypes a field: {exc}") from exc
    if n < 0 or d < 0:
        raise IntegrityError(f"negative dimensions in header: n={n}, d={d}")

    offset = 10 + header_len
    feat_bytes = n * d * 8
    label_bytes = n * 4
    if len(data) < offset + feat_bytes + label_bytes:
        raise TruncatedFileError(
            f"payload truncated: need {feat_bytes + label_bytes} bytes after header, "
            f"have {len(data) - offset}"
        )
    if len(data) > offset + feat_bytes + label_bytes:
        raise IntegrityError("trailing bytes after the declared payload")
    features = np.frombuffer(data, dtype="<f8", count=n * d, offset=offset).reshape(n, d)
    labels = np.frombuffer(data, dtype="<u4", count=n, offset=offset + feat_bytes)

    try:
        return FeatureBank(
            client_id=client_id,
            features=features,
            labels=labels.astype(np.int64),
            num_classes=num_classes,
            stage_dims=stage_dims,
            backbone_id=backbone_id,
            normalized=normalized,
            normalization_mode=normalization_mode,
        )
    except InvalidInputError as exc:
        raise IntegrityError(f"payload violates bank invariants: {exc}") from exc


def write_bank(bank: FeatureBank, path: str | Path) -> None:
    Path(path).write_bytes(bank_to_bytes(bank))


def read_bank(path: str | Path) -> FeatureBank:
    return bank_from_bytes(Path(path).read_bytes())
