"""The extraction pipeline: walk a class-per-subfolder image tree, run the
backbone stage-wise, pool and concatenate, write one FBNK row per image."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .backbones import load_backbone
from .config import ExtractorConfig
from .fbnk import write_fbnk

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}

# ImageNet statistics; applied regardless of weight source so that a run is
# a pure function of (images, backbone, seed).
_MEAN = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
_STD = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)


class ConfigError(ValueError):
    pass


def list_dataset(root: Path) -> tuple[list[str], list[tuple[Path, int]]]:
    """Class names from sorted subfolder order; (path, label) per image."""
    if not root.is_dir():
        raise ConfigError(f"input root {root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if len(classes) < 2:
        raise ConfigError(f"need at least two class subfolders under {root}, found {classes}")
    samples = []
    for label, name in enumerate(classes):
        for path in sorted((root / name).iterdir()):
            if path.suffix.lower() in IMAGE_SUFFIXES and path.is_file():
                samples.append((path, label))
    if not samples:
        raise ConfigError(f"no images with suffixes {sorted(IMAGE_SUFFIXES)} under {root}")
    return classes, samples


def _load_image(path: Path, size: int) -> torch.Tensor:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    arr = torch.from_numpy(np.asarray(rgb, dtype=np.float32) / 255.0).permute(2, 0, 1)
    return (arr - _MEAN) / _STD


def extract(config: ExtractorConfig) -> Path:
    """Run one extraction; returns the written FBNK path."""
    classes, samples = list_dataset(config.input_root)
    backbone = load_backbone(config.backbone, config.weights, config.seed)
    if any(s < 1 or s > backbone.num_stages for s in config.stages):
        raise ConfigError(
            f"backbone {config.backbone} has stages 1..{backbone.num_stages}, "
            f"requested {config.stages}"
        )
    size = getattr(backbone, "input_size", config.image_size)
    expected_dims = tuple(backbone.stage_dim(s) for s in config.stages)
    if config.stage_dims is not None and tuple(config.stage_dims) != expected_dims:
        raise ConfigError(
            f"declared stage_dims {tuple(config.stage_dims)} do not match the backbone's "
            f"actual widths {expected_dims}"
        )
    device = torch.device(config.device)
    backbone.to(device)

    rows: list[np.ndarray] = []
    labels: list[int] = []
    batch_imgs: list[torch.Tensor] = []
    batch_labels: list[int] = []

    def flush():
        if not batch_imgs:
            return
        batch = torch.stack(batch_imgs).to(device)
        stage_outputs = backbone.stage_features(batch, list(config.stages))
        pooled = torch.cat(stage_outputs, dim=1).cpu().to(torch.float64).numpy()
        if pooled.shape[1] != sum(expected_dims):
            raise ConfigError(
                f"backbone produced dim {pooled.shape[1]}, expected {sum(expected_dims)}"
            )
        rows.extend(pooled)
        labels.extend(batch_labels)
        batch_imgs.clear()
        batch_labels.clear()

    for path, label in samples:
        try:
            tensor = _load_image(path, size)
        except Exception as exc:
            if config.on_error == "abort":
                raise ConfigError(f"unreadable image {path}: {exc}") from exc
            logger.warning("skipping unreadable image %s: %s", path, exc)
            continue
        batch_imgs.append(tensor)
        batch_labels.append(label)
        if len(batch_imgs) == config.batch_size:
            flush()
    flush()

    if not rows:
        raise ConfigError("every image failed to load; nothing to write")
    features = np.stack(rows)
    backbone_id = (
        f"{config.backbone}[stages={','.join(map(str, config.stages))}]"
        f"/{config.weights}"
        + (f"-seed{config.seed}" if config.weights == "random" else "")
    )
    config.output_path.parent.mkdir(parents=True, exist_ok=True)
    written = write_fbnk(
        config.output_path,
        client_id=config.client_id,
        features=features,
        labels=np.asarray(labels, dtype=np.int64),
        num_classes=len(classes),
        stage_dims=list(expected_dims),
        backbone_id=backbone_id,
    )
    logger.info(
        "wrote %s: n=%d d=%d classes=%s (%d bytes)",
        config.output_path,
        features.shape[0],
        features.shape[1],
        classes,
        written,
    )
    return config.output_path
