"""Image-awareness condition tokens: multi-scale patches + high-frequency patches + position."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import torch
import torch.nn as nn

from .encoder import FeaturePyramid

NUM_SCALES = 4


@dataclass
class ConditionTokens:
    tokens: torch.Tensor  # (B, L, C_T)

    @property
    def length(self) -> int:
        return self.tokens.shape[1]


def sincos_1d(dim: int, positions: torch.Tensor) -> torch.Tensor:
    omega = torch.arange(dim // 2, dtype=torch.float64) / (dim / 2.0)
    omega = 1.0 / 10000**omega
    out = positions.to(torch.float64)[:, None] * omega[None, :]
    return torch.cat([torch.sin(out), torch.cos(out)], dim=1)


@lru_cache(maxsize=16)
def sincos_2d(dim: int, gh: int, gw: int) -> torch.Tensor:
    """(gh*gw, dim) row-major table; first half encodes row, second half column."""
    if dim % 4:
        raise ValueError("embedding dim must be divisible by 4")
    rows = torch.arange(gh).repeat_interleave(gw)
    cols = torch.arange(gw).repeat(gh)
    return torch.cat([sincos_1d(dim // 2, rows), sincos_1d(dim // 2, cols)], dim=1)


def grid_size(h: int, w: int, patch_div: int) -> tuple[int, int]:
    gh, gw = h // patch_div, w // patch_div
    if gh < 1 or gw < 1:
        raise ValueError(f"input {h}x{w} too small for patch_div {patch_div}")
    return gh, gw


class Conditioner(nn.Module):
    """Projects f2..f5 and the two-channel input onto a common token grid.

    All scales land on an (H/patch_div, W/patch_div) grid so the three
    summands line up; the high-frequency tokens are tiled once per scale.
    """

    def __init__(self, encoder_channels: Sequence[int], token_dim: int, patch_div: int = 32, in_channels: int = 2):
        super().__init__()
        self.token_dim = token_dim
        self.patch_div = patch_div
        # f_i (1-based) has stride 2**(i-1); kernel = patch_div / 2**(i-1)
        self.scale_proj = nn.ModuleList()
        for i in range(2, 6):
            k = patch_div // 2 ** (i - 1)
            self.scale_proj.append(nn.Conv2d(encoder_channels[i - 1], token_dim, k, stride=k))
        self.hf_proj = nn.Conv2d(in_channels, token_dim, patch_div, stride=patch_div)

    @staticmethod
    def _flatten(t: torch.Tensor) -> torch.Tensor:
        return t.flatten(2).transpose(1, 2)

    def positional(self, h: int, w: int, dtype=torch.float32, device=None) -> torch.Tensor:
        gh, gw = grid_size(h, w, self.patch_div)
        pe = sincos_2d(self.token_dim, gh, gw).to(dtype=dtype, device=device)
        return pe.repeat(NUM_SCALES, 1)

    def forward(self, pyr: FeaturePyramid, x_sf: torch.Tensor) -> ConditionTokens:
        h, w = x_sf.shape[-2:]
        gh, gw = grid_size(h, w, self.patch_div)
        blocks = []
        for proj, f in zip(self.scale_proj, pyr.maps[1:]):
            t = proj(f)
            if t.shape[-2:] != (gh, gw):
                raise ValueError(f"scale grid {tuple(t.shape[-2:])} != {(gh, gw)}")
            blocks.append(self._flatten(t))
        c_im = torch.cat(blocks, dim=1)
        c_hf = self._flatten(self.hf_proj(x_sf)).repeat(1, NUM_SCALES, 1)
        c_pe = self.positional(h, w, dtype=c_im.dtype, device=c_im.device)
        return ConditionTokens(c_im + c_hf + c_pe[None])


def build_condition(pyr: FeaturePyramid, x_sf: torch.Tensor, conditioner: Conditioner) -> ConditionTokens:
    return conditioner(pyr, x_sf)
