"""Querying transformer that turns learnable decoder tokens into decoder parameters."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .layout import DecoderLayout


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int, head_dim: int):
        super().__init__()
        self.num_heads = num_heads
        self.head_dim = head_dim
        inner = num_heads * head_dim
        self.q = nn.Linear(dim, inner)
        self.k = nn.Linear(dim, inner)
        self.v = nn.Linear(dim, inner)
        self.out = nn.Linear(inner, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.num_heads, self.head_dim).transpose(1, 2)

    def forward(self, query: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        q, k, v = self._split(self.q(query)), self._split(self.k(context)), self._split(self.v(context))
        # default scale is 1/sqrt(head_dim)
        o = F.scaled_dot_product_attention(q, k, v)
        b, _, n, _ = o.shape
        return self.out(o.transpose(1, 2).reshape(b, n, -1))


class TransformerLayer(nn.Module):
    """Pre-norm self-attention -> cross-attention -> FFN, each with a residual."""

    def __init__(self, dim: int, num_heads: int, head_dim: int, ffn_ratio: int = 4):
        super().__init__()
        self.norm_self = nn.LayerNorm(dim)
        self.self_attn = Attention(dim, num_heads, head_dim)
        self.norm_cross = nn.LayerNorm(dim)
        self.norm_context = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, num_heads, head_dim)
        self.norm_ffn = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_ratio * dim), nn.GELU(), nn.Linear(ffn_ratio * dim, dim))

    def forward(self, f: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        x = self.norm_self(f)
        f = self.self_attn(x, x) + f
        f = self.cross_attn(self.norm_cross(f), self.norm_context(c)) + f
        return self.ffn(self.norm_ffn(f)) + f


class ParameterHeads(nn.Module):
    """Shared row head C_T -> P and a norm-token head C_T -> bn_param_count.

    A constant +1 is added to every gamma output so BN scales start near 1.
    """

    def __init__(self, dim: int, layout: DecoderLayout):
        super().__init__()
        self.layout = layout
        self.norm = nn.LayerNorm(dim)
        self.row_head = nn.Linear(dim, layout.row_width)
        self.norm_head = nn.Linear(dim, layout.bn_param_count)
        shift = torch.zeros(layout.bn_param_count)
        for (start, stop), off in zip(layout.unit_rows, layout.bn_offsets):
            if off is not None:
                shift[off : off + stop - start] = 1.0
        self.register_buffer("gamma_shift", shift)

    def forward(self, q_out: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if q_out.shape[-2] != self.layout.n_rows + 1:
            raise ValueError(f"expected {self.layout.n_rows + 1} decoder tokens, got {q_out.shape[-2]}")
        q = self.norm(q_out)
        params = self.row_head(q[..., :-1, :])
        norm = self.norm_head(q[..., -1, :]) + self.gamma_shift
        return params, norm


class HyperNetwork(nn.Module):
    def __init__(self, layout: DecoderLayout, dim: int, num_heads: int, head_dim: int, num_layers: int):
        super().__init__()
        self.layout = layout
        self.q_init = nn.Parameter(torch.randn(layout.n_rows + 1, dim) * 0.02)
        self.layers = nn.ModuleList(TransformerLayer(dim, num_heads, head_dim) for _ in range(num_layers))
        self.heads = ParameterHeads(dim, layout)

    def generate_tokens(self, c: torch.Tensor) -> torch.Tensor:
        f = self.q_init.expand(c.shape[0], -1, -1)
        for layer in self.layers:
            f = layer(f, c)
        return f

    def forward(self, c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.heads(self.generate_tokens(c))


def generate_decoder_tokens(c: torch.Tensor, hypernet: HyperNetwork) -> torch.Tensor:
    return hypernet.generate_tokens(c)


def project_tokens(q_out: torch.Tensor, hypernet: HyperNetwork) -> tuple[torch.Tensor, torch.Tensor]:
    return hypernet.heads(q_out)


class StaticParameters(nn.Module):
    """Ablation: one learned parameter matrix shared by every input."""

    def __init__(self, layout: DecoderLayout):
        super().__init__()
        self.layout = layout
        self.params = nn.Parameter(torch.randn(layout.n_rows, layout.row_width) * 0.1)
        heads = ParameterHeads(1, layout)
        self.norm = nn.Parameter(heads.gamma_shift.clone())

    def forward(self, c: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b = c.shape[0]
        return self.params.expand(b, -1, -1), self.norm.expand(b, -1)
