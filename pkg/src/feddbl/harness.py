"""Experiment harness: fold splits, proportion sweeps, personalization and
client-scaling comparisons, all emitted as deterministic JSON reports."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .bank import FeatureBank, merge_banks, split_train_test, subsample
from .exceptions import InvalidInputError
from .federation import aggregate, ensure_normalized, personalize, run_feddbl
from .metrics import accuracy, confusion, macro_f1, mcc
from .paillier import keygen
from .secure import (
    FixedPointCodec,
    decrypt_aggregate,
    encrypt_update,
    encrypted_aggregate,
    update_to_bytes,
)
from .solver import predict

DEFAULT_PROPORTIONS = (0.01, 0.05, 0.1, 0.3, 0.5, 0.7, 1.0)
METRIC_FNS = (("accuracy", accuracy), ("macro_f1", macro_f1), ("mcc", mcc))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a sweep needs beyond the banks themselves."""

    lam: float = 1e-6
    normalization_mode: str = "l2"
    proportions: tuple[float, ...] = DEFAULT_PROPORTIONS
    folds: int = 5
    seeds: tuple[int, ...] = ()
    split_ratio: float = 0.7
    personalize_mix: float | None = None
    encrypted: bool = False
    key_bits: int = 512
    frac_bits: int = 32

    def __post_init__(self):
        props = tuple(float(p) for p in self.proportions)
        if not props:
            raise InvalidInputError("need at least one proportion")
        if list(props) != sorted(props):
            raise InvalidInputError(f"proportions must be sorted ascending, got {props}")
        if any(not 0.0 < p <= 1.0 for p in props):
            raise InvalidInputError(f"proportions must lie in (0, 1], got {props}")
        if self.folds < 1:
            raise InvalidInputError(f"folds must be >= 1, got {self.folds}")
        if self.seeds and len(self.seeds) != self.folds:
            raise InvalidInputError(
                f"{len(self.seeds)} seeds given for {self.folds} folds"
            )
        if not 0.0 < self.split_ratio < 1.0:
            raise InvalidInputError(f"split_ratio must be in (0, 1), got {self.split_ratio}")
        if self.personalize_mix is not None and not 0.0 <= self.personalize_mix <= 1.0:
            raise InvalidInputError(f"personalize_mix must be in [0, 1], got {self.personalize_mix}")
        object.__setattr__(self, "proportions", props)
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @property
    def fold_seeds(self) -> tuple[int, ...]:
        return self.seeds if self.seeds else tuple(range(1, self.folds + 1))

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "normalization_mode": self.normalization_mode,
            "proportions": list(self.proportions),
            "folds": self.folds,
            "seeds": list(self.fold_seeds),
            "split_ratio": self.split_ratio,
            "personalize_mix": self.personalize_mix,
            "encrypted": self.encrypted,
            "key_bits": self.key_bits,
            "frac_bits": self.frac_bits,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {
            "lambda": "lam",
            "normalization_mode": "normalization_mode",
            "proportions": "proportions",
            "folds": "folds",
            "seeds": "seeds",
            "split_ratio": "split_ratio",
            "personalize_mix": "personalize_mix",
            "encrypted": "encrypted",
            "key_bits": "key_bits",
            "frac_bits": "frac_bits",
        }
        kwargs = {}
        for key, attr in known.items():
            if key in d and d[key] is not None:
                value = d[key]
                if key in ("proportions", "seeds"):
                    value = tuple(value)
                kwargs[attr] = value
        return cls(**kwargs)


def derive_seed(base: int, *tags) -> int:
    """Stable per-stage seed derivation (crc32 of a tagged string)."""
    return zlib.crc32(":".join([str(base), *map(str, tags)]).encode())


def _global_weights(updates, cfg: ExperimentConfig, fold_seed: int):
    """Aggregate the round's client updates, plaintext or through the
    encrypted path depending on the config. Returns (weights, extras)."""
    if not cfg.encrypted:
        return aggregate(updates).weights, {}
    keys = keygen(cfg.key_bits, seed=derive_seed(fold_seed, "keygen"))
    total = sum(u.num_samples for u in updates)
    codec = FixedPointCodec.for_max_samples(total, frac_bits=cfg.frac_bits)
    encrypted = [
        encrypt_update(u.weights, keys.public, codec, u.client_id, u.num_samples)
        for u in updates
    ]
    cts, total_out = encrypted_aggregate(encrypted, keys.public)
    weights = decrypt_aggregate(
        keys.secret, cts, encrypted[0].layout, total_out, encrypted[0].weights_meta
    )
    payload = max(len(update_to_bytes(e)) for e in encrypted)
    return weights, {"encrypted_upload_bytes_per_client": payload}


def _metric_row(true, pred, num_classes) -> dict[str, float]:
    m = confusion(true, pred, num_classes)
    return {name: fn(m) for name, fn in METRIC_FNS}


def _run_round(
    train_banks: list[FeatureBank],
    test_banks: list[FeatureBank],
    proportion: float,
    fold_seed: int,
    cfg: ExperimentConfig,
    global_only: bool = False,
):
    """One (fold, proportion) cell: subsample, solve, aggregate, evaluate.

    Returns {variant: {scope: {metric: value}}} plus round extras.
    global_only skips the local/personalized variants, which require the
    training clients to coincide with the test-bank owners.
    """
    subs = [
        subsample(b, proportion, derive_seed(fold_seed, "subsample", proportion, b.client_id))
        for b in train_banks
    ]
    model, updates, _ = run_feddbl(subs, cfg.lam, cfg.normalization_mode)
    global_weights, extras = _global_weights(updates, cfg, fold_seed)
    by_client = {u.client_id: u for u in updates}
    num_classes = train_banks[0].num_classes

    cells: dict[str, dict[str, dict[str, float]]] = {}

    pooled = merge_banks(test_banks, client_id="pooled")
    global_scope = {
        t.client_id: _metric_row(t.labels, predict(t.features, global_weights).labels, num_classes)
        for t in test_banks
    }
    global_scope["pooled"] = _metric_row(
        pooled.labels, predict(pooled.features, global_weights).labels, num_classes
    )
    cells["global"] = global_scope
    if global_only:
        extras["train_samples"] = int(sum(s.num_samples for s in subs))
        return cells, extras

    def union_variant(weight_for_client):
        scope = {}
        union_true, union_pred = [], []
        for t in test_banks:
            w = weight_for_client(t.client_id)
            pred = predict(t.features, w).labels
            scope[t.client_id] = _metric_row(t.labels, pred, num_classes)
            union_true.append(t.labels)
            union_pred.append(pred)
        scope["pooled"] = _metric_row(
            np.concatenate(union_true), np.concatenate(union_pred), num_classes
        )
        return scope

    cells["local"] = union_variant(lambda cid: by_client[cid].weights)
    if cfg.personalize_mix is not None:
        mix = cfg.personalize_mix
        cells["personalized"] = union_variant(
            lambda cid: personalize(by_client[cid].weights, global_weights, mix)
        )

    extras["train_samples"] = int(sum(s.num_samples for s in subs))
    return cells, extras


def _prepare_fold(banks: list[FeatureBank], fold_seed: int, cfg: ExperimentConfig):
    trains, tests = [], []
    for bank in banks:
        train, test = split_train_test(
            bank, cfg.split_ratio, derive_seed(fold_seed, "split", bank.client_id)
        )
        trains.append(train)
        tests.append(ensure_normalized(test, cfg.normalization_mode))
    return trains, tests


def _summarize(cell_rows: list[dict[str, float]]) -> dict:
    out = {}
    for name, _ in METRIC_FNS:
        values = [row[name] for row in cell_rows]
        out[name] = {
            "mean": float(np.mean(values)),
            "min": min(values),
            "max": max(values),
            "per_fold": values,
        }
    return out


def _collect(results_per_fold, cfg: ExperimentConfig, banks) -> list[dict]:
    cells = []
    scopes = sorted(b.client_id for b in banks) + ["pooled"]
    variants = ["global", "local"] + (
        ["personalized"] if cfg.personalize_mix is not None else []
    )
    for proportion in cfg.proportions:
        for variant in variants:
            for scope in scopes:
                rows = [
                    fold_result[proportion][variant][scope]
                    for fold_result in results_per_fold
                    if proportion in fold_result
                ]
                if not rows:
                    continue
                cells.append(
                    {
                        "proportion": proportion,
                        "variant": variant,
                        "scope": scope,
                        "metrics": _summarize(rows),
                    }
                )
    return cells


def run_sweep(banks: list[FeatureBank], cfg: ExperimentConfig) -> dict:
    """The data-efficiency protocol: per fold, split each client's bank,
    then sweep training-set proportions and score global/local (and
    optionally personalized) models on per-client and pooled test sets."""
    if not banks:
        raise InvalidInputError("need at least one bank")
    banks = sorted(banks, key=lambda b: b.client_id)
    fold_entries = []
    results_per_fold = []
    train_sizes: dict[float, int] = {}
    for fold, seed in enumerate(cfg.fold_seeds):
        try:
            trains, tests = _prepare_fold(banks, seed, cfg)
            fold_result = {}
            for p in cfg.proportions:
                cells, extras = _run_round(trains, tests, p, seed, cfg)
                fold_result[p] = cells
                train_sizes.setdefault(p, extras["train_samples"])
            results_per_fold.append(fold_result)
            fold_entries.append({"fold": fold, "seed": seed, "status": "ok"})
        except Exception as exc:
            fold_entries.append(
                {
                    "fold": fold,
                    "seed": seed,
                    "status": "failed",
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    if not results_per_fold:
        raise InvalidInputError(
            f"every fold failed; first error: {fold_entries[0].get('error')}"
        )
    return {
        "schema_version": 1,
        "kind": "sweep-report",
        "config": cfg.to_dict(),
        "clients": sorted(b.client_id for b in banks),
        "folds": fold_entries,
        "train_samples_at_proportion": {str(p): train_sizes[p] for p in cfg.proportions if p in train_sizes},
        "cells": _collect(results_per_fold, cfg, banks),
    }


def partition_bank(bank: FeatureBank, parts: int, seed: int) -> list[FeatureBank]:
    """Stratified split of one bank into `parts` child banks.

    Every child receives every class, so each class needs at least `parts`
    samples. parts=1 returns the bank unchanged. Sample counts are
    preserved exactly.
    """
    if parts < 1:
        raise InvalidInputError(f"parts must be >= 1, got {parts}")
    if parts == 1:
        return [bank]
    counts = bank.class_counts()
    present = np.flatnonzero(counts)
    short = [int(c) for c in present if counts[c] < parts]
    if short:
        raise InvalidInputError(
            f"bank {bank.client_id!r}: classes {short} have fewer than {parts} samples; "
            f"cannot give every child every class"
        )
    rng = np.random.default_rng(seed)
    buckets: list[list[np.ndarray]] = [[] for _ in range(parts)]
    for cls in present:
        members = np.flatnonzero(bank.labels == cls)
        rng.shuffle(members)
        for j in range(parts):
            buckets[j].append(members[j::parts])
    children = []
    for j, chunks in enumerate(buckets):
        idx = np.sort(np.concatenate(chunks))
        children.append(bank.take(idx, client_id=f"{bank.client_id}-s{j:02d}"))
    return children


def run_client_scaling(
    banks: list[FeatureBank], cfg: ExperimentConfig, factors: tuple[int, ...] = (1, 5, 10, 15, 20)
) -> dict:
    """Repartition each parent bank into child clients and rerun the round
    at each factor, holding the pooled test sets fixed for comparability."""
    if not banks:
        raise InvalidInputError("need at least one bank")
    if any(f < 1 for f in factors):
        raise InvalidInputError(f"factors must be >= 1, got {factors}")
    banks = sorted(banks, key=lambda b: b.client_id)
    fold_entries = []
    rows_by_cell: dict[tuple[int, float], list[dict]] = {
        (f, p): [] for f in factors for p in cfg.proportions
    }
    for fold, seed in enumerate(cfg.fold_seeds):
        try:
            trains, tests = _prepare_fold(banks, seed, cfg)
            fold_rows: dict[tuple[int, float], dict] = {}
            for factor in factors:
                children = [
                    child
                    for parent in trains
                    for child in partition_bank(
                        parent, factor, derive_seed(seed, "partition", factor, parent.client_id)
                    )
                ]
                for p in cfg.proportions:
                    cells, _ = _run_round(children, tests, p, seed, cfg, global_only=True)
                    fold_rows[(factor, p)] = cells["global"]["pooled"]
            for key, row in fold_rows.items():
                rows_by_cell[key].append(row)
            fold_entries.append({"fold": fold, "seed": seed, "status": "ok"})
        except Exception as exc:
            fold_entries.append(
                {
                    "fold": fold,
                    "seed": seed,
                    "status": "failed",
                    "error": f"{type(exc).__name__}: {exc}",
                }
            )
    if not any(rows for rows in rows_by_cell.values()):
        raise InvalidInputError(
            f"every fold failed; first error: {fold_entries[0].get('error')}"
        )
    results = [
        {
            "factor": factor,
            "total_clients": factor * len(banks),
            "proportion": p,
            "metrics": _summarize(rows),
        }
        for (factor, p), rows in rows_by_cell.items()
        if rows
    ]
    return {
        "schema_version": 1,
        "kind": "client-scaling-report",
        "config": cfg.to_dict(),
        "factors": list(factors),
        "parent_clients": sorted(b.client_id for b in banks),
        "folds": fold_entries,
        "results": results,
    }
