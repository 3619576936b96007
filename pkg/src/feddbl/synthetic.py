"""Deterministic synthetic federations for tests and desk-scale experiments.

Class-conditional distributions are isotropic unit Gaussians around means
placed at a controlled pairwise distance, so linear separability (and hence
expected classifier quality) is a direct function of the separation knob.
"""

from __future__ import annotations

import numpy as np

from .bank import FeatureBank
from .exceptions import InvalidInputError


def _class_means(rng: np.random.Generator, dim: int, num_classes: int, separation: float):
    # Orthonormal directions scaled by separation/sqrt(2) put every pair of
    # means at exactly `separation` apart.
    raw = rng.standard_normal((dim, dim))
    q, _ = np.linalg.qr(raw)
    return q[:, :num_classes].T * (separation / np.sqrt(2.0))


def _balanced_class_counts(rng: np.random.Generator, size: int, num_classes: int) -> np.ndarray:
    counts = np.ones(num_classes, dtype=np.int64)
    extra = rng.multinomial(size - num_classes, np.full(num_classes, 1.0 / num_classes))
    return counts + extra


def _draw_bank(
    rng: np.random.Generator,
    client_id: str,
    means: np.ndarray,
    counts: np.ndarray,
    dim: int,
) -> FeatureBank:
    num_classes = means.shape[0]
    labels = np.repeat(np.arange(num_classes), counts)
    features = means[labels] + rng.standard_normal((labels.size, dim))
    perm = rng.permutation(labels.size)
    return FeatureBank(
        client_id=client_id,
        features=features[perm],
        labels=labels[perm],
        num_classes=num_classes,
        backbone_id="synthetic-gaussian",
    )


def gen_synthetic_federation(
    seed: int,
    num_clients: int,
    dim: int,
    num_classes: int,
    sizes: list[int],
    separation: float,
    test_size: int | None = None,
) -> tuple[list[FeatureBank], FeatureBank]:
    """Build per-client banks plus a held-out test bank from one mixture.

    Every client receives every class at least once. Fully deterministic
    given the seed. The default test bank holds 30% of the combined client
    sample count.
    """
    if num_clients < 1:
        raise InvalidInputError(f"need at least one client, got {num_clients}")
    if num_classes < 2:
        raise InvalidInputError(f"need at least two classes, got {num_classes}")
    if num_classes > dim:
        raise InvalidInputError(
            f"mean construction needs num_classes <= dim, got {num_classes} > {dim}"
        )
    if len(sizes) != num_clients:
        raise InvalidInputError(f"expected {num_clients} sizes, got {len(sizes)}")
    if any(s < num_classes for s in sizes):
        raise InvalidInputError(
            f"every client needs at least {num_classes} samples (one per class), got {sizes}"
        )
    if separation < 0:
        raise InvalidInputError(f"separation must be >= 0, got {separation}")

    rng = np.random.default_rng(seed)
    means = _class_means(rng, dim, num_classes, separation)
    banks = [
        _draw_bank(rng, f"client-{k:02d}", means, _balanced_class_counts(rng, sizes[k], num_classes), dim)
        for k in range(num_clients)
    ]
    if test_size is None:
        test_size = max(num_classes, int(round(0.3 * sum(sizes))))
    test_bank = _draw_bank(
        rng, "test", means, _balanced_class_counts(rng, test_size, num_classes), dim
    )
    return banks, test_bank
