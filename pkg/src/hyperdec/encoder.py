"""Five-block convolutional encoder with multi-kernel aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn

KERNEL_SIZES = (1, 3, 5, 7)


@dataclass
class FeaturePyramid:
    maps: list[torch.Tensor]
    provenance: object = None

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.maps[i]

    def __len__(self) -> int:
        return len(self.maps)

    @property
    def shapes(self) -> list[tuple[int, int, int]]:
        """(H, W, C) per level."""
        return [(m.shape[2], m.shape[3], m.shape[1]) for m in self.maps]


class MKAB(nn.Module):
    """Parallel group convs (1/3/5/7) followed by a max-minus-mean channel gate.

    The gate is ``1 + sigmoid(.)`` so each channel is scaled into (1, 2).
    """

    def __init__(self, channels: int, reduction: int = 4):
        super().__init__()
        if channels % len(KERNEL_SIZES):
            raise ValueError(f"MKAB channels must be divisible by 4, got {channels}")
        g = channels // len(KERNEL_SIZES)
        self.group = g
        self.paths = nn.ModuleList(
            nn.Conv2d(g, g, k, padding=k // 2, bias=False) for k in KERNEL_SIZES
        )
        self.bn = nn.BatchNorm2d(channels)
        self.act = nn.ReLU(inplace=False)
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(nn.Linear(channels, hidden), nn.ReLU(), nn.Linear(hidden, channels))

    def attention(self, f: torch.Tensor) -> torch.Tensor:
        gmp = f.amax(dim=(2, 3))
        gap = f.mean(dim=(2, 3))
        return 1.0 + torch.sigmoid(self.mlp(gmp - gap))

    def forward(self, f: torch.Tensor) -> torch.Tensor:
        if f.shape[1] != self.group * len(KERNEL_SIZES):
            raise ValueError(f"expected {self.group * 4} channels, got {f.shape[1]}")
        groups = torch.split(f, self.group, dim=1)
        f = torch.cat([conv(x) for conv, x in zip(self.paths, groups)], dim=1)
        f = self.act(self.bn(f))
        return f * self.attention(f)[:, :, None, None]


def mkab_forward(f_in: torch.Tensor, block: MKAB) -> torch.Tensor:
    return block(f_in)


def conv_bn_relu(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(),
    )


class EncoderBlock(nn.Sequential):
    def __init__(self, cin: int, cout: int, downsample: bool):
        super().__init__(
            conv_bn_relu(cin, cout, stride=2 if downsample else 1),
            conv_bn_relu(cout, cout),
            MKAB(cout),
        )


class Encoder(nn.Module):
    def __init__(self, channels: Sequence[int], in_channels: int = 2):
        super().__init__()
        if len(channels) != 5:
            raise ValueError("encoder needs exactly five channel counts")
        self.channels = tuple(channels)
        cins = (in_channels, *channels[:-1])
        self.blocks = nn.ModuleList(
            EncoderBlock(cin, cout, downsample=i > 0) for i, (cin, cout) in enumerate(zip(cins, channels))
        )

    def forward(self, x_sf: torch.Tensor) -> FeaturePyramid:
        h, w = x_sf.shape[-2:]
        if h % 16 or w % 16:
            raise ValueError(f"input spatial dims must be divisible by 16, got {h}x{w}")
        maps = []
        f = x_sf
        for block in self.blocks:
            f = block(f)
            maps.append(f)
        return FeaturePyramid(maps)


def encode(x_sf: torch.Tensor, encoder: Encoder) -> FeaturePyramid:
    return encoder(x_sf)
