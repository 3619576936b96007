from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class ExtractorConfig:
    """One extraction run: where the images are, which backbone taps to
    pool, and where the FBNK file goes.

    stage_dims, when given, is a declaration checked against the
    backbone's actual widths on the first batch; a mismatch is a config
    error, not a silent relabeling.
    """

    input_root: Path
    output_path: Path
    client_id: str
    backbone: str = "resnet18"
    weights: str = "pretrained"
    seed: int = 0
    stages: tuple[int, ...] = (1, 2, 3, 4)
    stage_dims: tuple[int, ...] | None = None
    batch_size: int = 16
    device: str = "cpu"
    image_size: int = 224
    on_error: str = "abort"  # or "skip"

    def __post_init__(self):
        object.__setattr__(self, "input_root", Path(self.input_root))
        object.__setattr__(self, "output_path", Path(self.output_path))
        object.__setattr__(self, "stages", tuple(int(s) for s in self.stages))
        if not self.stages:
            raise ValueError("need at least one stage to extract")
        if list(self.stages) != sorted(set(self.stages)):
            raise ValueError(f"stages must be strictly increasing, got {self.stages}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.on_error not in ("abort", "skip"):
            raise ValueError(f"on_error must be 'abort' or 'skip', got {self.on_error!r}")
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")
