"""End-to-end model: frequency input -> encoder -> condition -> hypernetwork -> meta-decoder."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .conditioner import Conditioner
from .config import ModelConfig
from .encoder import Encoder, FeaturePyramid
from .frequency import highpass_filter, normalize_image
from .hypernet import HyperNetwork, StaticParameters
from .layout import DecoderLayout, build_schema, compute_layout, materialize_decoder
from .meta_decoder import DecoderStatics, TargetMask, decode_mask


@dataclass
class ForwardTrace:
    x_sf: torch.Tensor
    pyramid: FeaturePyramid
    condition: torch.Tensor
    params: torch.Tensor
    norm: torch.Tensor
    mask: TargetMask


class HyperSegModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.schema = build_schema(cfg.decoder_variant, cfg.decoder_width, cfg.num_decoder_stages)
        self.layout: DecoderLayout = compute_layout(self.schema, cfg)
        self.encoder = Encoder(cfg.encoder_channels)
        self.conditioner = Conditioner(cfg.encoder_channels, cfg.token_dim, cfg.patch_div)
        if cfg.static_decoder:
            self.generator = StaticParameters(self.layout)
        else:
            self.generator = HyperNetwork(self.layout, cfg.token_dim, cfg.num_heads, cfg.head_dim, cfg.num_layers)
        self.statics = DecoderStatics(cfg.encoder_channels, cfg.decoder_width, cfg.num_decoder_stages)

    def spatial_frequency_input(self, images: torch.Tensor) -> torch.Tensor:
        """Raw intensities (B, 1, H, W) -> normalized two-channel input."""
        if images.dim() == 3:
            images = images[:, None]
        return highpass_filter(normalize_image(images), self.cfg.sigma_hp)

    def trace(self, images: torch.Tensor) -> ForwardTrace:
        x_sf = self.spatial_frequency_input(images)
        pyr = self.encoder(x_sf)
        pyr.provenance = x_sf
        c = self.conditioner(pyr, x_sf).tokens
        params, norm = self.generator(c)
        dec = materialize_decoder(self.layout, self.schema, params, norm, provenance=x_sf)
        mask = decode_mask(pyr, dec, self.schema, self.statics)
        return ForwardTrace(x_sf, pyr, c, params, norm, mask)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Mask logits (B, 1, H, W)."""
        return self.trace(images).mask.logits

    @torch.no_grad()
    def generated_parameters(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x_sf = self.spatial_frequency_input(images)
        pyr = self.encoder(x_sf)
        return self.generator(self.conditioner(pyr, x_sf).tokens)


def build_model(cfg: ModelConfig, dtype: torch.dtype = torch.float32) -> HyperSegModel:
    torch.manual_seed(cfg.seed)
    return HyperSegModel(cfg).to(dtype)
