"""Siamese change detection: feature pyramid extractor, stacked attention, distance map."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


class ChannelAttention(nn.Module):
    """Sigmoid channel gate from avg- and max-pooled descriptors through a shared MLP."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1, bias=False),
            nn.ReLU(),
            nn.Conv2d(hidden, channels, 1, bias=False),
        )

    def forward(self, x):
        avg = self.mlp(F.adaptive_avg_pool2d(x, 1))
        mx = self.mlp(F.adaptive_max_pool2d(x, 1))
        return torch.sigmoid(avg + mx)


class SpatialAttention(nn.Module):
    """Sigmoid spatial gate from stacked channel-wise avg and max maps, 3x3 conv."""

    def __init__(self):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, 3, padding=1, bias=False)

    def forward(self, x):
        avg = x.mean(dim=1, keepdim=True)
        mx = x.max(dim=1, keepdim=True).values
        return torch.sigmoid(self.conv(torch.cat([avg, mx], dim=1)))


class CBAM(nn.Module):
    """Channel gating then spatial gating; output shape equals input shape."""

    def __init__(self, channels: int, reduction: int = 16):
        super().__init__()
        if channels < 1:
            raise ValueError("channels must be >= 1")
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = SpatialAttention()

    def forward(self, x):
        x = x * self.channel(x)
        x = x * self.spatial(x)
        return x


class BasicBlock(nn.Module):
    def __init__(self, in_c: int, out_c: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_c, out_c, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_c)
        self.conv2 = nn.Conv2d(out_c, out_c, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_c)
        if stride != 1 or in_c != out_c:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_c, out_c, 1, stride=stride, bias=False),
                nn.BatchNorm2d(out_c),
            )
        else:
            self.downsample = None

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return F.relu(y + identity)


class SiameseExtractor(nn.Module):
    """Shared-weight pyramid extractor.

    Stem: 7x7 stride-1 conv + BN + ReLU + 3x3 stride-2 max-pool; four residual
    stages with strides 1,2,2,1 yield levels at 1/2, 1/4, 1/8, 1/8 of the input
    with channels 64,128,256,512 (scaled by base_width/64 for reduced configs).
    """

    STAGE_STRIDES = (1, 2, 2, 1)

    def __init__(self, base_width: int = 64, blocks_per_stage: int = 2):
        super().__init__()
        w = base_width
        self.level_channels = (w, w * 2, w * 4, w * 8)
        self.conv1 = nn.Conv2d(3, w, 7, stride=1, padding=3, bias=False)
        self.bn1 = nn.BatchNorm2d(w)
        self.maxpool = nn.MaxPool2d(3, stride=2, padding=1)
        in_c = w
        for i, (out_c, stride) in enumerate(zip(self.level_channels, self.STAGE_STRIDES)):
            blocks = [BasicBlock(in_c, out_c, stride)]
            blocks += [BasicBlock(out_c, out_c) for _ in range(blocks_per_stage - 1)]
            setattr(self, f"layer{i + 1}", nn.Sequential(*blocks))
            in_c = out_c

    def forward(self, img: torch.Tensor):
        if img.size(2) % 8 or img.size(3) % 8:
            raise ValueError(f"input size must be divisible by 8, got {tuple(img.shape[2:])}")
        x = self.maxpool(F.relu(self.bn1(self.conv1(img))))
        l1 = self.layer1(x)
        l2 = self.layer2(l1)
        l3 = self.layer3(l2)
        l4 = self.layer4(l3)
        return l1, l2, l3, l4

    def load_pretrained(self, state_dict) -> None:
        """Optional hook for externally supplied backbone weights (same layer names)."""
        self.load_state_dict(state_dict, strict=False)


class StackedAttention(nn.Module):
    """Four per-level CBAMs, resize to 1/2 resolution, concat, fifth CBAM on the result."""

    def __init__(self, level_channels=(64, 128, 256, 512), reduction: int = 16):
        super().__init__()
        self.level_cbams = nn.ModuleList([CBAM(c, reduction) for c in level_channels])
        self.fused_cbam = CBAM(sum(level_channels), reduction)

    def forward(self, levels):
        if len(levels) != len(self.level_cbams):
            raise ValueError("expected a complete pyramid")
        target = levels[0].shape[2:]
        refined = []
        for lvl, cbam in zip(levels, self.level_cbams):
            r = cbam(lvl)
            if r.shape[2:] != target:
                r = F.interpolate(r, size=target, mode="bilinear", align_corners=False)
            refined.append(r)
        return self.fused_cbam(torch.cat(refined, dim=1))


def fuse_plain(levels):
    """Resize-and-concatenate fusion with no attention gating (SAM-off ablation)."""
    target = levels[0].shape[2:]
    out = []
    for lvl in levels:
        if lvl.shape[2:] != target:
            lvl = F.interpolate(lvl, size=target, mode="bilinear", align_corners=False)
        out.append(lvl)
    return torch.cat(out, dim=1)


class ChangeNet(nn.Module):
    """Siamese extractor plus (optional) stacked attention; emits the fused feature.

    With use_sam=False no attention parameters are allocated and fusion is a
    plain resize-and-concatenate.
    """

    def __init__(self, base_width: int = 64, blocks_per_stage: int = 2,
                 use_sam: bool = True, reduction: int = 16):
        super().__init__()
        self.extractor = SiameseExtractor(base_width, blocks_per_stage)
        self.use_sam = use_sam
        if use_sam:
            self.attention = StackedAttention(self.extractor.level_channels, reduction)

    @property
    def fused_channels(self) -> int:
        return sum(self.extractor.level_channels)

    def forward(self, img: torch.Tensor) -> torch.Tensor:
        levels = self.extractor(img)
        if self.use_sam:
            return self.attention(levels)
        return fuse_plain(levels)


def distance_map(f1: torch.Tensor, f2: torch.Tensor, out_size=None) -> torch.Tensor:
    """Per-pixel Euclidean distance between feature maps, upsampled to out_size.

    Input [B,C,h,w] pairs; output [B,1,H,W] (or [B,1,h,w] when out_size is None).
    """
    if f1.shape != f2.shape:
        raise ValueError(f"feature shapes differ: {tuple(f1.shape)} vs {tuple(f2.shape)}")
    dt = ((f1 - f2) ** 2).sum(dim=1, keepdim=True).sqrt()
    if out_size is not None and tuple(dt.shape[2:]) != tuple(out_size):
        dt = F.interpolate(dt, size=tuple(out_size), mode="bilinear", align_corners=False)
    return dt


def threshold_segment(dt: torch.Tensor, theta: float) -> torch.Tensor:
    """Binary change mask: 1 where the distance exceeds theta."""
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    return (dt > theta).to(torch.uint8)
