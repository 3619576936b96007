"""Server/client orchestration: one-round collection of client weights,
sample-count-weighted aggregation, personalization, and byte accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bank import FeatureBank, normalize_bank
from .exceptions import ClientError, IncompatibilityError, InvalidInputError
from .solver import BlWeights, check_compatible, one_hot, solve_ridge, weights_to_bytes

ROUNDS = 1  # the whole point: every client uploads exactly once


@dataclass(frozen=True, eq=False)
class ClientUpdate:
    """What one client uploads: its weights, sample count and payload size."""

    client_id: str
    num_samples: int
    weights: BlWeights
    upload_bytes: int

    def __post_init__(self):
        if self.num_samples < 1:
            raise InvalidInputError(f"client {self.client_id!r} reports {self.num_samples} samples")
        if self.upload_bytes != len(weights_to_bytes(self.weights)):
            raise InvalidInputError(
                f"client {self.client_id!r}: upload_bytes={self.upload_bytes} does not match "
                f"the serialized weight length"
            )

    @classmethod
    def from_weights(cls, client_id: str, num_samples: int, weights: BlWeights) -> "ClientUpdate":
        return cls(
            client_id=client_id,
            num_samples=num_samples,
            weights=weights,
            upload_bytes=len(weights_to_bytes(weights)),
        )


@dataclass(frozen=True, eq=False)
class GlobalModel:
    """Aggregated weights plus provenance of the contributing clients."""

    weights: BlWeights
    total_samples: int
    contributors: tuple[tuple[str, int], ...]
    rounds: int = ROUNDS


@dataclass(frozen=True)
class OverheadReport:
    """Exact upload byte accounting for one federation run."""

    per_client_upload_bytes: dict[str, int]
    rounds: int
    total_upload_bytes_per_client: int
    comparison_baseline_bytes: int | None = None

    def to_dict(self) -> dict:
        out = {
            "schema_version": 1,
            "kind": "overhead-report",
            "rounds": self.rounds,
            "per_client_upload_bytes": dict(sorted(self.per_client_upload_bytes.items())),
            "total_upload_bytes_per_client": self.total_upload_bytes_per_client,
            "total_upload_kb_per_client": format_kb(self.total_upload_bytes_per_client),
        }
        if self.comparison_baseline_bytes is not None:
            out["comparison_baseline_bytes"] = self.comparison_baseline_bytes
            out["reduction_ratio"] = (
                self.comparison_baseline_bytes / self.total_upload_bytes_per_client
            )
        return out


def format_kb(num_bytes: int) -> str:
    """Decimal kilobytes (1 KB = 1000 B), one decimal place."""
    return f"{num_bytes / 1000:.1f}KB"


def weight_bytes(dim: int, num_classes: int, elem_bytes: int = 8, header_bytes: int = 0) -> int:
    """Payload size of one weight upload; header_bytes=0 gives the bare matrix."""
    if dim <= 0 or num_classes <= 0 or elem_bytes <= 0 or header_bytes < 0:
        raise InvalidInputError("dimensions and element size must be positive")
    return dim * num_classes * elem_bytes + header_bytes


def overhead_ratio(baseline_model_bytes: int, baseline_rounds: int, upload_bytes: int) -> float:
    """How many times smaller the one-round upload is than an iterative baseline."""
    if baseline_model_bytes <= 0 or baseline_rounds <= 0 or upload_bytes <= 0:
        raise InvalidInputError("byte counts and round counts must be positive")
    return (baseline_model_bytes * baseline_rounds) / upload_bytes


def aggregate(updates: list[ClientUpdate]) -> GlobalModel:
    """Convex combination of client weights, weighted by sample counts.

    The reduction runs in sorted-client_id order with Kahan-compensated
    summation, so the result is bit-identical for any input permutation.
    """
    if not updates:
        raise InvalidInputError("cannot aggregate an empty update list")
    ordered = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in ordered]
    if len(set(ids)) != len(ids):
        raise IncompatibilityError(f"duplicate client ids in aggregation: {ids}")
    first = ordered[0].weights
    for u in ordered[1:]:
        try:
            check_compatible(first, u.weights)
        except IncompatibilityError as exc:
            raise IncompatibilityError(f"client {u.client_id!r}: {exc}") from exc

    total = sum(u.num_samples for u in ordered)
    acc = np.zeros_like(first.values)
    comp = np.zeros_like(first.values)
    for u in ordered:
        term = (u.num_samples / total) * u.weights.values
        fresh = acc + term
        comp += np.where(np.abs(acc) >= np.abs(term), (acc - fresh) + term, (term - fresh) + acc)
        acc = fresh
    values = acc + comp

    return GlobalModel(
        weights=BlWeights(
            values=values,
            lam=first.lam,
            normalization_mode=first.normalization_mode,
        ),
        total_samples=total,
        contributors=tuple((u.client_id, u.num_samples) for u in ordered),
    )


def personalize(local: BlWeights, global_: BlWeights, mix: float) -> BlWeights:
    """Blend a client's local weights with the global ones.

    mix=1 returns the local weights exactly, mix=0 the global ones; in
    between the blend is computed as global + mix*(local - global), which is
    the same convex combination but keeps personalize(w, w, mix) == w exact.
    """
    check_compatible(local, global_)
    if not 0.0 <= mix <= 1.0:
        raise InvalidInputError(f"mix must be in [0, 1], got {mix}")
    if mix == 1.0:
        return local
    if mix == 0.0:
        return global_
    values = global_.values + mix * (local.values - global_.values)
    return BlWeights(values=values, lam=local.lam, normalization_mode=local.normalization_mode)


def run_feddbl(
    banks: list[FeatureBank],
    lam: float,
    normalization_mode: str = "l2",
    skip_failed: bool = False,
    comparison_baseline_bytes: int | None = None,
) -> tuple[GlobalModel, list[ClientUpdate], OverheadReport]:
    """The full one-round protocol over in-memory banks.

    Per client: normalize (unless the bank already is), one-hot the labels,
    solve the ridge system, serialize. Then aggregate all uploads. With
    skip_failed=True a failing client is dropped and the total sample count
    renormalized instead of aborting the round.
    """
    if not banks:
        raise InvalidInputError("need at least one client bank")
    dims = {(b.feature_dim, b.num_classes) for b in banks}
    if len(dims) != 1:
        raise IncompatibilityError(f"banks disagree on (feature_dim, num_classes): {sorted(dims)}")

    updates: list[ClientUpdate] = []
    failures: list[ClientError] = []
    for bank in banks:
        try:
            updates.append(client_update(bank, lam, normalization_mode))
        except ClientError as exc:
            if not skip_failed:
                raise
            failures.append(exc)
    if not updates:
        raise InvalidInputError("every client failed; nothing to aggregate")

    global_model = aggregate(updates)
    sizes = {u.upload_bytes for u in updates}
    report = OverheadReport(
        per_client_upload_bytes={u.client_id: u.upload_bytes for u in updates},
        rounds=ROUNDS,
        total_upload_bytes_per_client=max(sizes) * ROUNDS,
        comparison_baseline_bytes=comparison_baseline_bytes,
    )
    return global_model, updates, report


def client_update(bank: FeatureBank, lam: float, normalization_mode: str = "l2") -> ClientUpdate:
    """One client's side of the protocol, errors tagged with its id."""
    try:
        prepared = ensure_normalized(bank, normalization_mode)
        targets = one_hot(prepared.labels, prepared.num_classes)
        weights = solve_ridge(
            prepared.features,
            targets,
            lam=lam,
            normalization_mode=prepared.normalization_mode,
        )
    except ClientError:
        raise
    except Exception as exc:
        raise ClientError(bank.client_id, str(exc)) from exc
    return ClientUpdate.from_weights(bank.client_id, prepared.num_samples, weights)


def ensure_normalized(bank: FeatureBank, mode: str) -> FeatureBank:
    """Normalize if needed; an already-normalized bank must match the mode."""
    if bank.normalized:
        if bank.normalization_mode != mode:
            raise ClientError(
                bank.client_id,
                f"bank is normalized with {bank.normalization_mode!r} but the round "
                f"requested {mode!r}",
            )
        return bank
    try:
        return normalize_bank(bank, mode)
    except Exception as exc:
        raise ClientError(bank.client_id, str(exc)) from exc
