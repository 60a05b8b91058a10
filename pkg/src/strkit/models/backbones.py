"""Convolutional feature extractors.

All variants map a (B, 1, 32, 100) input to a sequence of 26 feature
vectors: a 7-layer VGG-style stack (dim 512), a 29-layer residual stack
(dim 512), and a 3-layer "mini" stack (dim 64) small enough for CPU
test runs. Width arithmetic relies on the 32x100 input; other sizes are
rejected at forward time.
"""

from __future__ import annotations

import torch
import torch.nn as nn

SEQUENCE_STEPS = 26

_FEATURE_DIMS = {"vgg7": 512, "resnet29": 512, "mini": 64}


def feature_dim(kind: str) -> int:
    try:
        return _FEATURE_DIMS[kind]
    except KeyError:
        raise ValueError(f"unknown feature extractor {kind!r}") from None


def he_init_convs(module: nn.Module) -> None:
    """He-normal initialization (std = sqrt(2 / fan_in)) for every conv."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class _SequenceExtractor(nn.Module):
    """Wraps a conv stack; flattens (B, D, 1, W) maps to (B, W, D)."""

    kind: str = ""

    def __init__(self, net: nn.Module, out_dim: int):
        super().__init__()
        self.net = net
        self.out_dim = out_dim
        he_init_convs(self)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        if images.dim() != 4 or images.shape[1] != 1 or images.shape[2:] != (32, 100):
            raise ValueError(
                f"expected input of shape (B, 1, 32, 100), got {tuple(images.shape)}"
            )
        features = self.net(images)
        if features.shape[2] != 1:
            raise RuntimeError(f"feature map height {features.shape[2]} != 1")
        return features.squeeze(2).permute(0, 2, 1)  # (B, W, D)


class Vgg7Extractor(_SequenceExtractor):
    """7 conv layers; 32x100 -> 26 steps of dim 512."""

    kind = "vgg7"

    def __init__(self):
        net = nn.Sequential(
            nn.Conv2d(1, 64, 3, 1, 1), nn.ReLU(True),
            nn.MaxPool2d(2, 2),  # 16 x 50
            nn.Conv2d(64, 128, 3, 1, 1), nn.ReLU(True),
            nn.MaxPool2d(2, 2),  # 8 x 25
            nn.Conv2d(128, 256, 3, 1, 1), nn.ReLU(True),
            nn.Conv2d(256, 256, 3, 1, 1), nn.ReLU(True),
            nn.MaxPool2d((2, 2), (2, 1), (0, 1)),  # 4 x 26
            nn.Conv2d(256, 512, 3, 1, 1, bias=False), nn.BatchNorm2d(512), nn.ReLU(True),
            nn.Conv2d(512, 512, 3, 1, 1, bias=False), nn.BatchNorm2d(512), nn.ReLU(True),
            nn.MaxPool2d((2, 1), (2, 1)),  # 2 x 26
            nn.Conv2d(512, 512, (2, 1), 1, 0), nn.ReLU(True),  # 1 x 26
        )
        super().__init__(net, 512)


class MiniExtractor(_SequenceExtractor):
    """3 conv layers, dim 64; sized for desk-scale CPU training."""

    kind = "mini"

    def __init__(self):
        net = nn.Sequential(
            nn.Conv2d(1, 16, 3, 1, 1), nn.ReLU(True),
            nn.MaxPool2d(2, 2),  # 16 x 50
            nn.Conv2d(16, 32, 3, 1, 1), nn.ReLU(True),
            nn.MaxPool2d(2, 2),  # 8 x 25
            nn.Conv2d(32, 64, 3, 1, 1), nn.ReLU(True),
            nn.MaxPool2d((8, 2), (8, 1), (0, 1)),  # 1 x 26
        )
        super().__init__(net, 64)


class _BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_planes: int, planes: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, 1, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.relu = nn.ReLU(True)
        if in_planes != planes:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_planes, planes, 1, 1, bias=False), nn.BatchNorm2d(planes)
            )
        else:
            self.downsample = None

    def forward(self, x):
        residual = x if self.downsample is None else self.downsample(x)
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + residual)


class ResNet29Extractor(_SequenceExtractor):
    """29 conv layers with residual blocks (1/2/5/3 per stage).

    Channel plan 32-64-128-256-512; the plan itself is a documented
    choice of this codebase, not a normative contract.
    """

    kind = "resnet29"

    def __init__(self):
        layers = []
        layers += [
            nn.Conv2d(1, 32, 3, 1, 1, bias=False), nn.BatchNorm2d(32), nn.ReLU(True),
            nn.Conv2d(32, 64, 3, 1, 1, bias=False), nn.BatchNorm2d(64), nn.ReLU(True),
        ]
        layers += [nn.MaxPool2d(2, 2)]  # 16 x 50
        layers += [_BasicBlock(64, 128)]
        layers += [nn.Conv2d(128, 128, 3, 1, 1, bias=False), nn.BatchNorm2d(128), nn.ReLU(True)]
        layers += [nn.MaxPool2d(2, 2)]  # 8 x 25
        layers += [_BasicBlock(128, 256), _BasicBlock(256, 256)]
        layers += [nn.Conv2d(256, 256, 3, 1, 1, bias=False), nn.BatchNorm2d(256), nn.ReLU(True)]
        layers += [nn.MaxPool2d((2, 2), (2, 1), (0, 1))]  # 4 x 26
        layers += [_BasicBlock(256, 512)] + [_BasicBlock(512, 512) for _ in range(4)]
        layers += [nn.Conv2d(512, 512, 3, 1, 1, bias=False), nn.BatchNorm2d(512), nn.ReLU(True)]
        layers += [_BasicBlock(512, 512) for _ in range(3)]
        layers += [
            nn.Conv2d(512, 512, 2, (2, 1), (0, 1), bias=False),  # 2 x 27
            nn.BatchNorm2d(512), nn.ReLU(True),
            nn.Conv2d(512, 512, 2, 1, 0, bias=False),  # 1 x 26
            nn.BatchNorm2d(512), nn.ReLU(True),
        ]
        super().__init__(nn.Sequential(*layers), 512)


def build_feature_extractor(kind: str) -> _SequenceExtractor:
    if kind == "vgg7":
        return Vgg7Extractor()
    if kind == "resnet29":
        return ResNet29Extractor()
    if kind == "mini":
        return MiniExtractor()
    raise ValueError(f"unknown feature extractor {kind!r}")
