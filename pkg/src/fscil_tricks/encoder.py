"""Reference encoders.

The default desk-scale encoder is a small four-stage convolutional network
with GroupNorm (stateless, so masked and unmasked forward passes share no
running statistics). A compact ResNet-18 is available for larger runs.
Each architecture declares which parameter-name prefixes count as shallow
for incremental-tuning freezes.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from fscil_tricks.errors import ConfigError
from fscil_tricks.seeding import derive_seed


def images_to_tensor(images: np.ndarray | list[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """Stack H x W x C float images into a B x C x H x W tensor."""
    arr = np.stack(images) if isinstance(images, (list, tuple)) else images
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def _conv_block(cin: int, cout: int, pool: bool) -> nn.Sequential:
    layers: list[nn.Module] = [
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.GroupNorm(4, cout),
        nn.ReLU(inplace=True),
    ]
    if pool:
        layers.append(nn.MaxPool2d(2))
    return nn.Sequential(*layers)


class ToyConvNet(nn.Module):
    """Four-stage convolutional embedding network for small images."""

    FROZEN_PREFIXES = ("stem", "block1", "block2")

    def __init__(self, embedding_dim: int = 64, in_channels: int = 3, width: int = 16):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.stem = _conv_block(in_channels, width, pool=False)
        self.block1 = _conv_block(width, 2 * width, pool=True)
        self.block2 = _conv_block(2 * width, 4 * width, pool=True)
        self.block3 = _conv_block(4 * width, 4 * width, pool=False)
        self.head = nn.Linear(4 * width, embedding_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        x = self.block1(x)
        x = self.block2(x)
        x = self.block3(x)
        x = torch.flatten(nn.functional.adaptive_avg_pool2d(x, 1), 1)
        return self.head(x)


class _BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.shortcut = nn.Sequential()
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = torch.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return torch.relu(out + self.shortcut(x))


class ResNet18(nn.Module):
    """ResNet-18 with a 3x3 stem (small-image variant) and embedding head."""

    FROZEN_PREFIXES = ("stem", "layer1", "layer2", "layer3")

    def __init__(self, embedding_dim: int = 64, in_channels: int = 3):
        super().__init__()
        self.embedding_dim = embedding_dim
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, 64, 3, padding=1, bias=False),
            nn.BatchNorm2d(64),
            nn.ReLU(inplace=True),
        )
        self.layer1 = self._make_layer(64, 64, stride=1)
        self.layer2 = self._make_layer(64, 128, stride=2)
        self.layer3 = self._make_layer(128, 256, stride=2)
        self.layer4 = self._make_layer(256, 512, stride=2)
        self.head = nn.Linear(512, embedding_dim)

    @staticmethod
    def _make_layer(cin: int, cout: int, stride: int) -> nn.Sequential:
        return nn.Sequential(_BasicBlock(cin, cout, stride), _BasicBlock(cout, cout))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.stem(x)
        x = self.layer1(x)
        x = self.layer2(x)
        x = self.layer3(x)
        x = self.layer4(x)
        x = torch.flatten(nn.functional.adaptive_avg_pool2d(x, 1), 1)
        return self.head(x)


ARCHITECTURES = {"toyconv": ToyConvNet, "resnet18": ResNet18}


def make_encoder(arch: str, embedding_dim: int, seed: int) -> nn.Module:
    """Build an encoder with seed-deterministic initialization."""
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown encoder arch {arch!r}; known: {sorted(ARCHITECTURES)}")
    torch.manual_seed(derive_seed("encoder-init", arch, seed))
    return ARCHITECTURES[arch](embedding_dim=embedding_dim)


def make_linear_head(in_dim: int, out_dim: int, seed: int, *purpose: object) -> nn.Linear:
    torch.manual_seed(derive_seed("head-init", in_dim, out_dim, seed, *purpose))
    return nn.Linear(in_dim, out_dim)


def default_frozen_prefixes(encoder: nn.Module) -> tuple[str, ...]:
    prefixes = getattr(encoder, "FROZEN_PREFIXES", None)
    if prefixes is None:
        raise ConfigError(f"{type(encoder).__name__} declares no shallow-layer prefixes")
    return tuple(prefixes)
