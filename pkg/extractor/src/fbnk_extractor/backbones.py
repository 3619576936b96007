"""Backbone registry with per-stage feature taps.

Residual networks expose the four post-block stage maps, pooled spatially;
the transformer entry pools each selected encoder block over its patch
tokens. Weights are either the published pretrained ones (needs network or
a populated torch hub cache) or a seeded random initialization, which is
what deterministic offline tests use.
"""

from __future__ import annotations

import torch
import torchvision.models as tvm

_RESNETS = {
    "resnet18": (tvm.resnet18, tvm.ResNet18_Weights, (64, 128, 256, 512)),
    "resnet34": (tvm.resnet34, tvm.ResNet34_Weights, (64, 128, 256, 512)),
    "resnet50": (tvm.resnet50, tvm.ResNet50_Weights, (256, 512, 1024, 2048)),
}

_VIT_STAGES = 12  # encoder blocks in vit_b_16


class ResNetStages(torch.nn.Module):
    def __init__(self, name: str, weights: str, seed: int):
        super().__init__()
        ctor, weight_enum, self.stage_widths = _RESNETS[name]
        if weights == "pretrained":
            self.net = ctor(weights=weight_enum.DEFAULT)
        else:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self.net = ctor(weights=None)
        self.net.eval()
        self.num_stages = 4

    @torch.no_grad()
    def stage_features(self, batch: torch.Tensor, stages: list[int]) -> list[torch.Tensor]:
        net = self.net
        x = net.maxpool(net.relu(net.bn1(net.conv1(batch))))
        outputs = []
        for idx, layer in enumerate(
            (net.layer1, net.layer2, net.layer3, net.layer4), start=1
        ):
            x = layer(x)
            if idx in stages:
                outputs.append(torch.mean(x, dim=(2, 3)))  # global average pool
        return outputs

    def stage_dim(self, stage: int) -> int:
        return self.stage_widths[stage - 1]


class ViTStages(torch.nn.Module):
    """vit_b_16 with token-mean pooling of each selected encoder block."""

    def __init__(self, weights: str, seed: int):
        super().__init__()
        if weights == "pretrained":
            self.net = tvm.vit_b_16(weights=tvm.ViT_B_16_Weights.DEFAULT)
        else:
            with torch.random.fork_rng():
                torch.manual_seed(seed)
                self.net = tvm.vit_b_16(weights=None)
        self.net.eval()
        self.num_stages = _VIT_STAGES
        self.input_size = 224  # patch grid is fixed by the architecture

    @torch.no_grad()
    def stage_features(self, batch: torch.Tensor, stages: list[int]) -> list[torch.Tensor]:
        net = self.net
        x = net._process_input(batch)
        cls_token = net.class_token.expand(x.shape[0], -1, -1)
        x = torch.cat([cls_token, x], dim=1)
        x = x + net.encoder.pos_embedding
        x = net.encoder.dropout(x)
        outputs = []
        for idx, block in enumerate(net.encoder.layers, start=1):
            x = block(x)
            if idx in stages:
                outputs.append(torch.mean(x[:, 1:, :], dim=1))  # mean over patch tokens
        return outputs

    def stage_dim(self, stage: int) -> int:
        return self.net.hidden_dim


def load_backbone(name: str, weights: str, seed: int):
    if weights not in ("pretrained", "random"):
        raise ValueError(f"weights must be 'pretrained' or 'random', got {weights!r}")
    if name in _RESNETS:
        return ResNetStages(name, weights, seed)
    if name == "vit_b_16":
        return ViTStages(weights, seed)
    known = sorted([*_RESNETS, "vit_b_16"])
    raise ValueError(f"unknown backbone {name!r}; known: {known}")
