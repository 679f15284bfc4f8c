"""Execute a materialized per-input decoder over the feature pyramid."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .encoder import FeaturePyramid
from .layout import DecoderSchema, MaterializedDecoder

BN_EPS = 1e-5


@dataclass
class TargetMask:
    logits: torch.Tensor  # (B, 1, H, W)

    @property
    def probabilities(self) -> torch.Tensor:
        return torch.sigmoid(self.logits)


def per_sample_conv2d(x: torch.Tensor, weight: torch.Tensor, depthwise: bool = False) -> torch.Tensor:
    """Convolve sample b of ``x`` with ``weight[b]`` (B, out, in, k, k) in one grouped call."""
    b, c, h, w = x.shape
    out, k = weight.shape[1], weight.shape[-1]
    groups = b * c if depthwise else b
    y = F.conv2d(x.reshape(1, b * c, h, w), weight.reshape(b * out, *weight.shape[2:]), padding=k // 2, groups=groups)
    return y.view(b, out, h, w)


def per_sample_conv1d(x: torch.Tensor, weight: torch.Tensor) -> torch.Tensor:
    """Per-sample, per-channel 1-D conv: x (B, C, N), weight (B, C, 1, k)."""
    b, c, n = x.shape
    k = weight.shape[-1]
    y = F.conv1d(x.reshape(1, b * c, n), weight.reshape(b * c, 1, k), padding=k // 2, groups=b * c)
    return y.view(b, c, n)


def per_image_bn(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    # statistics per image and channel: generated weights differ per sample,
    # so running or cross-sample statistics are meaningless
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), keepdim=True, unbiased=False)
    x = (x - mean) / torch.sqrt(var + BN_EPS)
    return x * gamma[:, :, None, None] + beta[:, :, None, None]


def position_attention_gate(f: torch.Tensor, w_h: torch.Tensor, w_w: torch.Tensor) -> torch.Tensor:
    """Sigmoid gate from generated 1-D convs over the H- and W-profiles of ``f``."""
    col = per_sample_conv1d(f.mean(dim=3), w_h)  # (B, C, H)
    row = per_sample_conv1d(f.mean(dim=2), w_w)  # (B, C, W)
    return torch.sigmoid(col[:, :, :, None] + row[:, :, None, :])


class DecoderRunner:
    """Walks the schema stage by stage for one materialized decoder."""

    def __init__(self, dec: MaterializedDecoder):
        self.dec = dec
        self.index = {(u.stage, u.branch): i for i, u in enumerate(dec.schema.units)}

    def has(self, stage: int, branch: str) -> bool:
        return (stage, branch) in self.index

    def conv(self, x: torch.Tensor, stage: int, branch: str, depthwise: bool = False, bn_relu: bool = False):
        i = self.index[(stage, branch)]
        y = per_sample_conv2d(x, self.dec.kernels[i], depthwise=depthwise)
        if bn_relu:
            y = F.relu(per_image_bn(y, self.dec.gammas[i], self.dec.betas[i]))
        return y

    def kernel(self, stage: int, branch: str) -> torch.Tensor:
        return self.dec.kernels[self.index[(stage, branch)]]

    def stage(self, x: torch.Tensor, s: int) -> torch.Tensor:
        x = self.conv(x, s, "conv", bn_relu=True)
        if self.has(s, "dw3"):
            x = self.conv(x, s, "dw3", depthwise=True) + self.conv(x, s, "dw5", depthwise=True)
            x = self.conv(x, s, "pw_down", bn_relu=True)
            x = self.conv(x, s, "pw_up", bn_relu=True)
        if self.has(s, "att_h"):
            x = x * position_attention_gate(x, self.kernel(s, "att_h"), self.kernel(s, "att_w"))
        return x


class DecoderStatics(nn.Module):
    """Static (not generated) decoder pieces: skip projections, entry projection, output head."""

    def __init__(self, encoder_channels: Sequence[int], width: int, num_stages: int = 4, prior: float = 0.01):
        super().__init__()
        self.num_stages = num_stages
        self.entry = nn.Conv2d(encoder_channels[4], width, 1)
        # stage s fuses f^(4-s) (1-based), i.e. encoder_channels[3 - s]
        self.skips = nn.ModuleList(nn.Conv2d(encoder_channels[3 - s], width, 1) for s in range(num_stages))
        self.head = nn.Conv2d(width, 1, 3, padding=1)
        nn.init.constant_(self.head.bias, -math.log((1 - prior) / prior))


def decode_mask(
    pyr: FeaturePyramid,
    dec: MaterializedDecoder,
    schema: DecoderSchema,
    statics: DecoderStatics,
) -> TargetMask:
    if dec.schema != schema:
        raise ValueError("materialized decoder was built for a different schema")
    if pyr.provenance is not None and dec.provenance is not None and pyr.provenance is not dec.provenance:
        raise ValueError("feature pyramid and decoder come from different inputs")
    if dec.batch_size != pyr[0].shape[0]:
        raise ValueError(f"decoder batch {dec.batch_size} != pyramid batch {pyr[0].shape[0]}")
    runner = DecoderRunner(dec)
    x = statics.entry(pyr[4])
    for s in range(statics.num_stages):
        skip = pyr[3 - s]
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        x = runner.stage(x + statics.skips[s](skip), s)
    full = pyr[0].shape[-2:]
    if x.shape[-2:] != full:
        x = F.interpolate(x, size=full, mode="bilinear", align_corners=False)
    return TargetMask(statics.head(x))
