"""Closed-form broad-learning classifier.

Training is a ridge-regularized least-squares solve against one-hot label
targets; prediction is a matrix product followed by a per-row argmax.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg

from .exceptions import (
    BadMagicError,
    IncompatibilityError,
    IntegrityError,
    InvalidInputError,
    TruncatedFileError,
    UnsupportedVersionError,
)

logger = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-12
DEFAULT_LAMBDA = 1e-6

MAGIC = b"BLWT"
VERSION = 1


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class BlWeights:
    """The (feature_dim, num_classes) weight matrix of a trained classifier.

    This is the only object a client ever uploads. `lam` is the effective
    regularization used at solve time; `normalization_mode` names the row
    transform the training bank was under, so weights trained in different
    feature spaces cannot be mixed silently.
    """

    values: np.ndarray
    lam: float
    normalization_mode: str
    warning: str | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise InvalidInputError(f"weights must be a non-empty 2-D matrix, got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("weights contain non-finite values")
        object.__setattr__(self, "values", _readonly(vals))

    @property
    def feature_dim(self) -> int:
        return self.values.shape[0]

    @property
    def num_classes(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Prediction:
    """Raw class scores plus the argmax labels (ties break to the lowest index)."""

    scores: np.ndarray
    labels: np.ndarray


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """(n, num_classes) float64 indicator matrix, one 1.0 per row."""
    labs = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labs.size and (labs.min() < 0 or labs.max() >= num_classes):
        raise InvalidInputError(
            f"labels must be in [0, {num_classes}), got range [{labs.min()}, {labs.max()}]"
        )
    out = np.zeros((labs.size, num_classes), dtype=np.float64)
    out[np.arange(labs.size), labs] = 1.0
    return out


def _spd_solve(gram: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    c, low = scipy.linalg.cho_factor(gram, lower=False, check_finite=False)
    return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)


def solve_ridge(
    features: np.ndarray,
    targets: np.ndarray,
    lam: float = DEFAULT_LAMBDA,
    normalization_mode: str = "l2",
) -> BlWeights:
    """Solve min_W ||features @ W - targets||^2 + lam * ||W||^2 in closed form.

    Picks the smaller symmetric system by shape: the (d, d) normal equations
    when n >= d, otherwise the equivalent (n, n) Gram-dual form. Both are
    solved through a Cholesky factorization; no inverse is materialized. If
    the factorization fails on a near-singular system, the solve is retried
    once with lam * 1e3 and the returned weights carry a warning.
    """
    B = np.asarray(features, dtype=np.float64)
    Y = np.asarray(targets, dtype=np.float64)
    if B.ndim != 2 or Y.ndim != 2:
        raise InvalidInputError(f"expected 2-D features and targets, got {B.shape}, {Y.shape}")
    if B.shape[0] != Y.shape[0]:
        raise InvalidInputError(f"row mismatch: features {B.shape[0]} vs targets {Y.shape[0]}")
    if not np.all(np.isfinite(B)) or not np.all(np.isfinite(Y)):
        raise InvalidInputError("non-finite entries in features or targets")
    if lam <= 0.0:
        raise InvalidInputError(f"lambda must be > 0, got {lam}")
    lam = max(float(lam), LAMBDA_FLOOR)

    n, d = B.shape
    warning = None
    for attempt, effective in enumerate((lam, lam * 1e3)):
        try:
            if n >= d:
                gram = B.T @ B
                gram[np.diag_indices_from(gram)] += effective
                W = _spd_solve(gram, B.T @ Y)
            else:
                gram = B @ B.T
                gram[np.diag_indices_from(gram)] += effective
                W = B.T @ _spd_solve(gram, Y)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(W)):
            if attempt == 1:
                warning = (
                    f"factorization needed lambda inflated from {lam:g} to {effective:g}"
                )
                logger.warning("ridge solve: %s", warning)
            return BlWeights(
                values=W,
                lam=effective,
                normalization_mode=normalization_mode,
                warning=warning,
            )
    raise InvalidInputError(
        f"ridge system unsolvable even at lambda={lam * 1e3:g}; input is pathological"
    )


def predict(features: np.ndarray, weights: BlWeights) -> Prediction:
    """Score rows against the weight matrix and take the per-row argmax."""
    B = np.asarray(features, dtype=np.float64)
    if B.ndim != 2 or B.shape[1] != weights.feature_dim:
        raise InvalidInputError(
            f"test features must be (m, {weights.feature_dim}), got {B.shape}"
        )
    scores = B @ weights.values
    return Prediction(scores=scores, labels=np.argmax(scores, axis=1))


def weights_to_bytes(weights: BlWeights) -> bytes:
    """Serialize to the BLWT wire format; this byte length is what a client uploads."""
    header = {
        "d": weights.feature_dim,
        "C": weights.num_classes,
        "lambda": weights.lam,
        "normalization_mode": weights.normalization_mode,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return b"".join(
        [
            MAGIC,
            VERSION.to_bytes(2, "little"),
            len(header_bytes).to_bytes(4, "little"),
            header_bytes,
            np.ascontiguousarray(weights.values, dtype="<f8").tobytes(),
        ]
    )


def weights_from_bytes(data: bytes) -> BlWeights:
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
        d = int(header["d"])
        num_classes = int(header["C"])
        lam = float(header["lambda"])
        mode = str(header["normalization_mode"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise IntegrityError(f"bad BLWT header: {exc}") from exc
    offset = 10 + header_len
    expected = d * num_classes * 8
    if len(data) < offset + expected:
        raise TruncatedFileError(
            f"payload truncated: need {expected} bytes after header, have {len(data) - offset}"
        )
    if len(data) > offset + expected:
        raise IntegrityError("trailing bytes after the declared payload")
    values = np.frombuffer(data, dtype="<f8", count=d * num_classes, offset=offset)
    try:
        return BlWeights(values=values.reshape(d, num_classes), lam=lam, normalization_mode=mode)
    except InvalidInputError as exc:
        raise IntegrityError(f"payload violates weight invariants: {exc}") from exc


def write_weights(weights: BlWeights, path: str | Path) -> None:
    Path(path).write_bytes(weights_to_bytes(weights))


def read_weights(path: str | Path) -> BlWeights:
    return weights_from_bytes(Path(path).read_bytes())


def check_compatible(a: BlWeights, b: BlWeights) -> None:
    """Raise unless two weight matrices live in the same feature space."""
    if a.values.shape != b.values.shape:
        raise IncompatibilityError(f"weight shapes differ: {a.values.shape} vs {b.values.shape}")
    if a.normalization_mode != b.normalization_mode:
        raise IncompatibilityError(
            f"normalization modes differ: {a.normalization_mode!r} vs {b.normalization_mode!r}"
        )
