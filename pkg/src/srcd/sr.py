"""Adversarial super-resolution: generator and discriminator forward models."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn


@dataclass
class GeneratorConfig:
    scale_n: int = 4
    base_channels: int = 64
    n_residual_blocks: int = 5

    def __post_init__(self):
        if self.scale_n not in (4, 8):
            raise ValueError(f"scale_n must be 4 or 8, got {self.scale_n}")
        if self.n_residual_blocks < 1:
            raise ValueError("need at least one residual block")

    @property
    def upsample_stages(self) -> int:
        m = int(math.log2(self.scale_n))
        assert 2 ** m == self.scale_n
        return m


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(channels)
        self.act = nn.PReLU(init=0.25)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x):
        y = self.bn1(self.conv1(x))
        y = self.act(y)
        y = self.bn2(self.conv2(y))
        return x + y


class UpsampleStage(nn.Module):
    """Conv to 4x channels, depth-to-space by 2, activation."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels * 4, 3, padding=1)
        self.shuffle = nn.PixelShuffle(2)
        self.act = nn.PReLU(init=0.25)

    def forward(self, x):
        return self.act(self.shuffle(self.conv(x)))


class Generator(nn.Module):
    """Maps an LR image [B,3,h,w] to an SR image [B,3,h*N,w*N] in [0,1]."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.base_channels
        self.head = nn.Conv2d(3, c, 9, padding=4)
        self.head_act = nn.PReLU(init=0.25)
        self.blocks = nn.Sequential(*[ResidualBlock(c) for _ in range(cfg.n_residual_blocks)])
        self.upsample = nn.Sequential(*[UpsampleStage(c) for _ in range(cfg.upsample_stages)])
        self.tail = nn.Conv2d(c, 3, 9, padding=4)

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        if lr.dim() != 4 or lr.size(1) != 3:
            raise ValueError(f"expected [B,3,h,w] input, got {tuple(lr.shape)}")
        if lr.size(2) < 8 or lr.size(3) < 8:
            raise ValueError(f"input spatial size must be >= 8, got {tuple(lr.shape[2:])}")
        shallow = self.head_act(self.head(lr))
        deep = self.blocks(shallow)
        x = self.upsample(shallow + deep)
        x = self.tail(x)
        return (torch.tanh(x) + 1.0) / 2.0


_DISC_CHANNELS = (64, 64, 128, 128, 256, 256, 512, 512)
_DISC_STRIDES = (1, 2, 1, 2, 1, 2, 1, 2)


class Discriminator(nn.Module):
    """Eight-conv classifier emitting one real-image probability per batch element."""

    def __init__(self, leaky_slope: float = 0.2, channels=_DISC_CHANNELS,
                 fc_width: int = 1024):
        super().__init__()
        layers = []
        in_c = 3
        for i, (out_c, stride) in enumerate(zip(channels, _DISC_STRIDES)):
            layers.append(nn.Conv2d(in_c, out_c, 3, stride=stride, padding=1))
            if i > 0:
                layers.append(nn.BatchNorm2d(out_c))
            layers.append(nn.LeakyReLU(leaky_slope))
            in_c = out_c
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc1 = nn.Linear(channels[-1], fc_width)
        self.act = nn.LeakyReLU(leaky_slope)
        self.fc2 = nn.Linear(fc_width, 1)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        if img.dim() != 4 or img.size(1) != 3:
            raise ValueError(f"expected [B,3,H,W] input, got {tuple(img.shape)}")
        if img.size(2) < 32 or img.size(3) < 32:
            raise ValueError(f"input spatial size must be >= 32, got {tuple(img.shape[2:])}")
        x = self.features(img)
        x = self.pool(x).flatten(1)
        x = self.fc2(self.act(self.fc1(x)))
        return torch.sigmoid(x).squeeze(1)
