import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """Two classes, three tiny images each, deterministic pixels."""
    root = tmp_path_factory.mktemp("toy-images")
    rng = np.random.default_rng(7)
    for cls in ("stroma", "tumor"):
        folder = root / cls
        folder.mkdir()
        for i in range(3):
            pixels = rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(folder / f"img{i}.png")
    return root
