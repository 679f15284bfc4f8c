"""Structured 2D decoder representation.

Every generated kernel occupies one row of an ``N_q x P`` matrix, with
``P = C_dec * 9`` (a full 3x3 kernel). Smaller kernels read a prefix of
their row; the rest of the row is slack. BatchNorm affine parameters come
from a separate norm vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

KINDS = {
    # kind: (kernel size, spatial dims)
    "conv3_full": (3, 2),
    "conv3_depthwise": (3, 2),
    "conv5_depthwise": (5, 2),
    "conv1_pointwise": (1, 2),
    "attention_conv1d": (3, 1),
}
BN_KINDS = ("conv3_full", "conv1_pointwise")


@dataclass(frozen=True)
class Unit:
    stage: int
    branch: str
    kind: str
    out_channels: int
    in_channels: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown unit kind {self.kind!r}")

    @property
    def kernel_size(self) -> int:
        return KINDS[self.kind][0]

    @property
    def kernel_shape(self) -> tuple[int, ...]:
        k, ndim = KINDS[self.kind]
        return (self.in_channels,) + (k,) * ndim

    @property
    def kernel_elems(self) -> int:
        k, ndim = KINDS[self.kind]
        return self.in_channels * k**ndim

    @property
    def has_bn(self) -> bool:
        return self.kind in BN_KINDS

    @property
    def name(self) -> str:
        return f"s{self.stage}.{self.branch}"


@dataclass(frozen=True)
class DecoderSchema:
    units: tuple[Unit, ...]
    variant: str = "custom"
    width: int = 0

    def unit(self, stage: int, branch: str) -> int:
        for i, u in enumerate(self.units):
            if u.stage == stage and u.branch == branch:
                return i
        raise KeyError(f"no unit {branch!r} in stage {stage}")


def build_schema(variant: str, width: int, num_stages: int = 4) -> DecoderSchema:
    """Units per stage, in execution order, for one of the three variants."""
    if variant not in ("basic", "multiscale", "spatial_attention"):
        raise ValueError(f"unknown decoder variant {variant!r}")
    c, half = width, width // 2
    units = []
    for s in range(num_stages):
        units.append(Unit(s, "conv", "conv3_full", c, c))
        if variant in ("multiscale", "spatial_attention"):
            units += [
                Unit(s, "dw3", "conv3_depthwise", c, 1),
                Unit(s, "dw5", "conv5_depthwise", c, 1),
                Unit(s, "pw_down", "conv1_pointwise", half, c),
                Unit(s, "pw_up", "conv1_pointwise", c, half),
            ]
        if variant == "spatial_attention":
            units += [
                Unit(s, "att_h", "attention_conv1d", c, 1),
                Unit(s, "att_w", "attention_conv1d", c, 1),
            ]
    return DecoderSchema(tuple(units), variant=variant, width=width)


@dataclass(frozen=True)
class DecoderLayout:
    n_rows: int  # N_q
    row_width: int  # P
    unit_rows: tuple[tuple[int, int], ...]  # [start, stop) per unit
    bn_offsets: tuple[int | None, ...]  # start of each unit's gamma block
    bn_param_count: int

    def row_map(self, r: int) -> tuple[int, int]:
        """Row index -> (unit index, kernel index)."""
        if not 0 <= r < self.n_rows:
            raise IndexError(r)
        for ui, (start, stop) in enumerate(self.unit_rows):
            if start <= r < stop:
                return ui, r - start
        raise AssertionError("unreachable")


def compute_layout(schema: DecoderSchema, cfg) -> DecoderLayout:
    """``cfg`` is a ModelConfig or a bare decoder width."""
    width = cfg if isinstance(cfg, int) else cfg.decoder_width
    p = width * 9
    rows, bn_offsets = [], []
    r = bn = 0
    for u in schema.units:
        if u.kernel_elems > p:
            raise ValueError(f"unit {u.name} needs {u.kernel_elems} slots, row width is {p}")
        rows.append((r, r + u.out_channels))
        r += u.out_channels
        if u.has_bn:
            bn_offsets.append(bn)
            bn += 2 * u.out_channels
        else:
            bn_offsets.append(None)
    layout = DecoderLayout(r, p, tuple(rows), tuple(bn_offsets), bn)
    if all(u.kind == "conv3_full" and u.in_channels == width for u in schema.units):
        assert layout.n_rows * layout.row_width == sum(u.out_channels * u.kernel_elems for u in schema.units)
    return layout


@dataclass
class MaterializedDecoder:
    schema: DecoderSchema
    kernels: list[torch.Tensor]  # per unit: (B, out, *kernel_shape)
    gammas: list[torch.Tensor | None]  # per unit: (B, out) or None
    betas: list[torch.Tensor | None]
    provenance: object = None

    @property
    def batch_size(self) -> int:
        return self.kernels[0].shape[0]


def materialize_decoder(
    layout: DecoderLayout,
    schema: DecoderSchema,
    tokens: torch.Tensor,
    norm_vector: torch.Tensor,
    provenance: object = None,
) -> MaterializedDecoder:
    """Slice a (B, N_q, P) parameter matrix and (B, bn) norm vector into per-unit tensors.

    A 2-D ``tokens`` / 1-D ``norm_vector`` is treated as a batch of one.
    """
    if tokens.dim() == 2:
        tokens = tokens[None]
    if norm_vector.dim() == 1:
        norm_vector = norm_vector[None]
    b = tokens.shape[0]
    if tuple(tokens.shape[1:]) != (layout.n_rows, layout.row_width):
        raise ValueError(f"parameter matrix {tuple(tokens.shape[1:])} != {(layout.n_rows, layout.row_width)}")
    if norm_vector.shape != (b, layout.bn_param_count):
        raise ValueError(f"norm vector {tuple(norm_vector.shape)} != {(b, layout.bn_param_count)}")
    if len(schema.units) != len(layout.unit_rows):
        raise ValueError("schema does not match layout")
    kernels, gammas, betas = [], [], []
    for u, (start, stop), off in zip(schema.units, layout.unit_rows, layout.bn_offsets):
        if stop - start != u.out_channels:
            raise ValueError(f"layout rows for {u.name} do not match its out_channels")
        w = tokens[:, start:stop, : u.kernel_elems]
        kernels.append(w.reshape(b, u.out_channels, *u.kernel_shape))
        if off is None:
            gammas.append(None)
            betas.append(None)
        else:
            gammas.append(norm_vector[:, off : off + u.out_channels])
            betas.append(norm_vector[:, off + u.out_channels : off + 2 * u.out_channels])
    return MaterializedDecoder(schema, kernels, gammas, betas, provenance)


def flatten_decoder(dec: MaterializedDecoder, layout: DecoderLayout) -> tuple[torch.Tensor, torch.Tensor]:
    """Inverse of materialize_decoder; slack entries come back as zeros."""
    b = dec.batch_size
    ref = dec.kernels[0]
    tokens = ref.new_zeros(b, layout.n_rows, layout.row_width)
    norm = ref.new_zeros(b, layout.bn_param_count)
    for u, k, g, be, (start, stop), off in zip(
        dec.schema.units, dec.kernels, dec.gammas, dec.betas, layout.unit_rows, layout.bn_offsets
    ):
        tokens[:, start:stop, : u.kernel_elems] = k.reshape(b, u.out_channels, -1)
        if off is not None:
            norm[:, off : off + u.out_channels] = g
            norm[:, off + u.out_channels : off + 2 * u.out_channels] = be
    return tokens, norm


def layout_table(schema: DecoderSchema, layout: DecoderLayout) -> list[dict]:
    rows = []
    for u, (start, stop) in zip(schema.units, layout.unit_rows):
        rows.append(
            {
                "unit": u.name,
                "kind": u.kind,
                "rows": stop - start,
                "used_width": u.kernel_elems,
                "slack": layout.row_width - u.kernel_elems,
                "bn_params": 2 * u.out_channels if u.has_bn else 0,
            }
        )
    return rows
