import numpy as np
import pytest

from feddbl.bank import FeatureBank


def make_bank(rng, n=20, d=6, num_classes=3, client_id="c0", **kw):
    labels = np.concatenate([np.arange(num_classes), rng.integers(0, num_classes, n - num_classes)])
    rng.shuffle(labels)
    return FeatureBank(
        client_id=client_id,
        features=rng.standard_normal((n, d)),
        labels=labels,
        num_classes=num_classes,
        **kw,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
