"""Feature banks and the deterministic transforms applied to them.

A feature bank is one client's matrix of pooled, concatenated deep features
plus integer class labels. Banks are immutable once constructed; every
transform returns a new bank.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .exceptions import IncompatibilityError, InvalidInputError, InvalidStateError

NORMALIZATION_MODES = ("l2", "zscore", "identity")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class FeatureBank:
    """One client's local features and labels.

    features is an (n, d) float64 matrix, labels an (n,) int64 vector with
    values in [0, num_classes). stage_dims records how the feature columns
    decompose into backbone stages; an empty tuple means unknown.
    """

    client_id: str
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    stage_dims: tuple[int, ...] = ()
    backbone_id: str = ""
    normalized: bool = False
    normalization_mode: str | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise InvalidInputError(f"features must be 2-D, got shape {feats.shape}")
        if labs.ndim != 1 or labs.shape[0] != feats.shape[0]:
            raise InvalidInputError(
                f"labels must be 1-D with one entry per feature row, got {labs.shape} vs {feats.shape}"
            )
        if self.num_classes < 2:
            raise InvalidInputError(f"num_classes must be >= 2, got {self.num_classes}")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("features contain non-finite values")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise InvalidInputError(
                f"labels must be in [0, {self.num_classes}), got range "
                f"[{labs.min()}, {labs.max()}]"
            )
        if self.stage_dims:
            if any(s <= 0 for s in self.stage_dims):
                raise InvalidInputError(f"stage_dims must be positive, got {self.stage_dims}")
            if sum(self.stage_dims) != feats.shape[1]:
                raise InvalidInputError(
                    f"sum(stage_dims)={sum(self.stage_dims)} != feature dim {feats.shape[1]}"
                )
        if self.normalized and self.normalization_mode not in NORMALIZATION_MODES:
            raise InvalidInputError(
                f"normalized bank must record a mode from {NORMALIZATION_MODES}"
            )
        object.__setattr__(self, "features", _readonly(feats))
        object.__setattr__(self, "labels", _readonly(labs))
        object.__setattr__(self, "stage_dims", tuple(int(s) for s in self.stage_dims))

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray, client_id: str | None = None) -> "FeatureBank":
        """New bank holding the given sample rows, metadata preserved."""
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            client_id=self.client_id if client_id is None else client_id,
            features=self.features[idx],
            labels=self.labels[idx],
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def pool_stage(stage: np.ndarray) -> np.ndarray:
    """Average a (height, width, channels) stage map over its spatial cells.

    Accumulates per channel in extended precision and divides once, so the
    result is independent of spatial traversal order.
    """
    t = np.asarray(stage, dtype=np.float64)
    if t.ndim != 3:
        raise InvalidInputError(f"stage tensor must be (H, W, C), got shape {t.shape}")
    h, w, _ = t.shape
    if h * w == 0:
        raise InvalidInputError("stage tensor has zero spatial area")
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("stage tensor contains non-finite values")
    acc = t.astype(np.longdouble).sum(axis=(0, 1))
    return np.asarray(acc / np.longdouble(h * w), dtype=np.float64)


def concat_stages(stages: list[np.ndarray]) -> np.ndarray:
    """Concatenate per-stage pooled vectors in list order."""
    if not stages:
        raise InvalidInputError("need at least one stage vector")
    vecs = [np.asarray(v, dtype=np.float64).reshape(-1) for v in stages]
    return np.concatenate(vecs)


def normalize_bank(bank: FeatureBank, mode: str = "l2") -> FeatureBank:
    """Apply the row transform recorded as the bank's normalization.

    Modes: "l2" scales each sample row to unit Euclidean norm (zero rows are
    left unchanged); "zscore" standardizes each feature column with the
    bank's own mean and standard deviation (zero-variance columns become 0);
    "identity" leaves values untouched but still marks the bank normalized.
    """
    if bank.normalized:
        raise InvalidStateError(
            f"bank {bank.client_id!r} is already normalized (mode={bank.normalization_mode})"
        )
    if mode not in NORMALIZATION_MODES:
        raise InvalidInputError(f"unknown normalization mode {mode!r}")
    feats = bank.features
    if mode == "l2":
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        safe = np.where(norms == 0.0, 1.0, norms)
        out = feats / safe
    elif mode == "zscore":
        mean = feats.mean(axis=0)
        std = feats.std(axis=0)
        safe = np.where(std == 0.0, 1.0, std)
        out = (feats - mean) / safe
        out[:, std == 0.0] = 0.0
    else:
        out = feats.copy()
    return replace(bank, features=out, normalized=True, normalization_mode=mode)


def merge_banks(banks: list[FeatureBank], client_id: str = "merged") -> FeatureBank:
    """Stack several compatible banks into one (row order follows the list)."""
    if not banks:
        raise InvalidInputError("need at least one bank to merge")
    first = banks[0]
    for b in banks[1:]:
        if b.feature_dim != first.feature_dim or b.num_classes != first.num_classes:
            raise IncompatibilityError(
                f"bank {b.client_id!r} has shape ({b.feature_dim}, {b.num_classes}) "
                f"!= ({first.feature_dim}, {first.num_classes})"
            )
        if b.normalized != first.normalized or b.normalization_mode != first.normalization_mode:
            raise IncompatibilityError(
                f"bank {b.client_id!r} normalization differs from {first.client_id!r}"
            )
    return replace(
        first,
        client_id=client_id,
        features=np.vstack([b.features for b in banks]),
        labels=np.concatenate([b.labels for b in banks]),
        stage_dims=first.stage_dims,
    )


def _largest_remainder_allocation(
    class_sizes: np.ndarray, total: int, lo: np.ndarray, hi: np.ndarray
) -> np.ndarray:
    """Integer per-class quotas q with lo <= q <= hi, sum(q) == total.

    Quotas start from the proportional share and are adjusted by largest
    fractional remainder; ties resolve to the lower class index.
    """
    if not lo.sum() <= total <= hi.sum():
        raise InvalidInputError("allocation infeasible under the per-class bounds")
    sizes = class_sizes.astype(np.float64)
    quota = sizes * (total / sizes.sum())
    base = np.clip(np.floor(quota).astype(np.int64), lo, hi)
    remainder = quota - np.floor(quota)
    order = sorted(range(len(sizes)), key=lambda c: (-remainder[c], c))
    deficit = total - int(base.sum())
    while deficit > 0:
        for c in order:
            if deficit > 0 and base[c] < hi[c]:
                base[c] += 1
                deficit -= 1
    while deficit < 0:
        for c in reversed(order):
            if deficit < 0 and base[c] > lo[c]:
                base[c] -= 1
                deficit += 1
    return base


def split_train_test(
    bank: FeatureBank, ratio: float, seed: int
) -> tuple[FeatureBank, FeatureBank]:
    """Stratified train/test split; `ratio` is the train fraction.

    Each class present in the bank keeps at least one sample on both sides
    whenever it has two or more samples. Deterministic per seed.
    """
    if not 0.0 < ratio < 1.0:
        raise InvalidInputError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    counts = bank.class_counts()
    present = np.flatnonzero(counts)
    if present.size == 0:
        raise InvalidInputError("cannot split an empty bank")
    sizes = counts[present]
    target = int(round(ratio * bank.num_samples))
    lo = np.where(sizes >= 2, 1, 0)
    hi = np.where(sizes >= 2, sizes - 1, sizes)
    target = int(np.clip(target, lo.sum(), hi.sum()))
    quotas = _largest_remainder_allocation(sizes, target, lo, hi)

    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for cls, q in zip(present, quotas):
        members = np.flatnonzero(bank.labels == cls)
        rng.shuffle(members)
        train_idx.append(members[:q])
        test_idx.append(members[q:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return bank.take(train), bank.take(test)


def subsample(bank: FeatureBank, proportion: float, seed: int) -> FeatureBank:
    """Stratified subset keeping roughly `proportion` of the samples.

    Every class present keeps at least one sample; proportion 1.0 returns the
    full bank (row order may be permuted). Deterministic per seed.
    """
    if not 0.0 < proportion <= 1.0:
        raise InvalidInputError(f"proportion must be in (0, 1], got {proportion}")
    target = int(round(proportion * bank.num_samples))
    if target == 0:
        raise InvalidInputError(
            f"proportion {proportion} of {bank.num_samples} samples rounds to zero"
        )
    rng = np.random.default_rng(seed)
    counts = bank.class_counts()
    present = np.flatnonzero(counts)
    sizes = counts[present]
    lo = np.ones_like(sizes)
    target = int(np.clip(target, lo.sum(), sizes.sum()))
    quotas = _largest_remainder_allocation(sizes, target, lo, sizes)

    keep: list[np.ndarray] = []
    for cls, q in zip(present, quotas):
        members = np.flatnonzero(bank.labels == cls)
        rng.shuffle(members)
        keep.append(members[:q])
    return bank.take(np.sort(np.concatenate(keep)))
