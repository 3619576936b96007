import numpy as np
import pytest

from feddbl.bank import merge_banks, normalize_bank
from feddbl.bank_io import bank_to_bytes
from feddbl.exceptions import InvalidInputError
from feddbl.federation import client_update, run_feddbl
from feddbl.metrics import evaluate
from feddbl.solver import predict
from feddbl.synthetic import gen_synthetic_federation

SEED1_ARGS = dict(seed=1, num_clients=3, dim=16, num_classes=4, sizes=[120, 90, 150], separation=6.0)


def global_test_accuracy(banks, test):
    model, updates, _ = run_feddbl(banks, lam=1e-6)
    tn = normalize_bank(test, "l2")
    pred = predict(tn.features, model.weights)
    return evaluate(tn.labels, pred.labels, tn.num_classes)["accuracy"], model, updates, tn


def test_same_seed_gives_byte_identical_banks():
    a_banks, a_test = gen_synthetic_federation(**SEED1_ARGS)
    b_banks, b_test = gen_synthetic_federation(**SEED1_ARGS)
    for a, b in zip(a_banks + [a_test], b_banks + [b_test]):
        assert bank_to_bytes(a) == bank_to_bytes(b)


def test_different_seed_differs():
    a = gen_synthetic_federation(**SEED1_ARGS)[0][0]
    b = gen_synthetic_federation(**{**SEED1_ARGS, "seed": 2})[0][0]
    assert bank_to_bytes(a) != bank_to_bytes(b)


def test_every_client_has_every_class():
    banks, test = gen_synthetic_federation(**SEED1_ARGS)
    for b in banks + [test]:
        assert np.all(b.class_counts() >= 1)


def test_sizes_respected():
    banks, _ = gen_synthetic_federation(**SEED1_ARGS)
    assert [b.num_samples for b in banks] == SEED1_ARGS["sizes"]


def test_zero_separation_is_chance_level():
    banks, test = gen_synthetic_federation(2, 2, 8, 4, [200, 200], 0.0)
    acc, _, _, _ = global_test_accuracy(banks, test)
    assert abs(acc - 0.25) < 0.15  # 1/C up to sampling noise


def test_seed1_separation6_pipeline_anchor():
    # Frozen on first run: well-separated classes solve perfectly at this scale.
    banks, test = gen_synthetic_federation(**SEED1_ARGS)
    acc, _, _, _ = global_test_accuracy(banks, test)
    assert acc > 0.9
    assert acc == pytest.approx(1.0, abs=1e-12)


def test_merged_bank_training_anchor():
    banks, test = gen_synthetic_federation(**SEED1_ARGS)
    merged = merge_banks(banks)
    update = client_update(merged, 1e-6)
    tn = normalize_bank(test, "l2")
    acc = evaluate(tn.labels, predict(tn.features, update.weights).labels, 4)["accuracy"]
    assert acc > 0.9
    assert acc == pytest.approx(1.0, abs=1e-12)


def test_global_close_to_best_single_client():
    # Frozen on first run: global 0.98582, best single client 1.0.
    banks, test = gen_synthetic_federation(1, 4, 16, 4, [120, 90, 150, 110], 6.0)
    acc, model, updates, tn = global_test_accuracy(banks, test)
    singles = [
        evaluate(tn.labels, predict(tn.features, u.weights).labels, 4)["accuracy"]
        for u in updates
    ]
    assert acc >= max(singles) - 0.02
    assert acc == pytest.approx(0.9858156028368794, abs=1e-9)


def test_undersized_client_rejected():
    with pytest.raises(InvalidInputError):
        gen_synthetic_federation(1, 2, 8, 4, [3, 50], 2.0)


def test_more_classes_than_dims_rejected():
    with pytest.raises(InvalidInputError):
        gen_synthetic_federation(1, 1, 3, 4, [10], 2.0)


def test_negative_separation_rejected():
    with pytest.raises(InvalidInputError):
        gen_synthetic_federation(1, 1, 8, 2, [10], -1.0)
