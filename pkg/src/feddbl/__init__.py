"""One-round federated broad learning over frozen deep-feature banks."""

from .bank import (
    FeatureBank,
    concat_stages,
    merge_banks,
    normalize_bank,
    pool_stage,
    split_train_test,
    subsample,
)
from .bank_io import read_bank, write_bank
from .federation import (
    ClientUpdate,
    GlobalModel,
    OverheadReport,
    aggregate,
    overhead_ratio,
    personalize,
    run_feddbl,
    weight_bytes,
)
from .metrics import ConfusionMatrix, accuracy, confusion, evaluate, macro_f1, mcc
from .solver import BlWeights, Prediction, one_hot, predict, read_weights, solve_ridge, write_weights
from .synthetic import gen_synthetic_federation

__version__ = "0.1.0"

__all__ = [
    "FeatureBank",
    "BlWeights",
    "Prediction",
    "ClientUpdate",
    "GlobalModel",
    "OverheadReport",
    "ConfusionMatrix",
    "pool_stage",
    "concat_stages",
    "normalize_bank",
    "merge_banks",
    "split_train_test",
    "subsample",
    "read_bank",
    "write_bank",
    "one_hot",
    "solve_ridge",
    "predict",
    "read_weights",
    "write_weights",
    "aggregate",
    "personalize",
    "run_feddbl",
    "weight_bytes",
    "overhead_ratio",
    "confusion",
    "accuracy",
    "macro_f1",
    "mcc",
    "evaluate",
    "gen_synthetic_federation",
    "__version__",
]
