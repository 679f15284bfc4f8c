"""Validated model/training configuration and the plain-text config file format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

VARIANTS = ("basic", "multiscale", "spatial_attention")


class ConfigError(ValueError):
    """Raised with the name of the first violated invariant."""


@dataclass(frozen=True)
class ModelConfig:
    profile: str = "paper"
    input_size: tuple[int, int] = (256, 256)
    encoder_channels: tuple[int, ...] = (32, 64, 128, 256, 512)
    sigma_hp: float = 5.0
    token_dim: int = 384
    num_heads: int = 6
    head_dim: int = 64
    num_layers: int = 6
    decoder_width: int = 64
    decoder_variant: str = "spatial_attention"
    num_decoder_stages: int = 4
    patch_div: int = 32
    lambda_dice: float = 0.5
    lr_init: float = 8e-4
    epochs: int = 800
    max_steps: int = 0
    batch_size: int = 8
    seed: int = 0
    static_decoder: bool = False

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["input_size"] = list(self.input_size)
        d["encoder_channels"] = list(self.encoder_channels)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


PROFILES: dict[str, dict[str, Any]] = {
    "paper": {},
    "desk": {
        "input_size": (64, 64),
        "encoder_channels": (8, 16, 32, 64, 128),
        "decoder_width": 32,
        "token_dim": 96,
        "num_heads": 6,
        "head_dim": 16,
        "num_layers": 3,
        "epochs": 50,
    },
    # smallest geometry that exercises every stage; used for gradient checks
    "tiny": {
        "input_size": (16, 16),
        "encoder_channels": (4, 8, 12, 16, 20),
        "decoder_width": 8,
        "token_dim": 8,
        "num_heads": 2,
        "head_dim": 4,
        "num_layers": 1,
        "patch_div": 16,
        "epochs": 1,
        "batch_size": 2,
    },
}

_FIELDS = {f.name: f for f in fields(ModelConfig)}


def _parse_int_list(value: Any) -> tuple[int, ...]:
    if isinstance(value, str):
        text = value.strip().strip("[]()")
        parts = [p for p in text.replace("x", ",").replace("×", ",").split(",") if p.strip()]
        return tuple(int(p) for p in parts)
    if isinstance(value, int):
        return (value,)
    return tuple(int(v) for v in value)


def _parse_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"static_decoder: cannot parse boolean from {value!r}")


def _coerce(name: str, value: Any) -> Any:
    try:
        if name == "input_size":
            size = _parse_int_list(value)
            if len(size) == 1:
                size = (size[0], size[0])
            if len(size) != 2:
                raise ConfigError("input_size must be one or two integers")
            return size
        if name == "encoder_channels":
            return _parse_int_list(value)
        if name == "static_decoder":
            return _parse_bool(value)
        kind = type(getattr(ModelConfig(), name))
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{name} must be an integer, got {value!r}")
            return int(str(value).strip()) if isinstance(value, str) else int(value)
        if kind is float:
            return float(value)
        return str(value).strip()
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{name}: cannot parse {value!r}") from exc


def _check(cfg: ModelConfig) -> None:
    ch = cfg.encoder_channels
    if len(ch) != 5 or any(b <= a for a, b in zip(ch, ch[1:])) or ch[0] <= 0:
        raise ConfigError("encoder_channels has exactly 5 entries, strictly increasing")
    if any(c % 4 for c in ch):
        raise ConfigError("encoder_channels divisible by 4 (multi-kernel groups)")
    if cfg.token_dim != cfg.num_heads * cfg.head_dim:
        raise ConfigError(
            f"C_T = num_heads × head_dim violated: {cfg.token_dim} != "
            f"{cfg.num_heads} × {cfg.head_dim}"
        )
    if cfg.token_dim % 4:
        raise ConfigError("token_dim divisible by 4 (2D sine-cosine embedding)")
    if cfg.decoder_width < 3:
        raise ConfigError("C_dec ≥ 3")
    if cfg.decoder_variant not in VARIANTS:
        raise ConfigError(f"decoder_variant one of {VARIANTS}, got {cfg.decoder_variant!r}")
    if cfg.decoder_variant != "basic" and cfg.decoder_width % 2:
        raise ConfigError("decoder_width even for multiscale variants (pointwise compression)")
    h, w = cfg.input_size
    if h <= 0 or w <= 0 or h % 16 or w % 16:
        raise ConfigError("input_size divisible by 16")
    pd = cfg.patch_div
    if pd < 16 or pd & (pd - 1):
        raise ConfigError("patch_div a power of two ≥ 16")
    if h % pd or w % pd:
        raise ConfigError("input_size divisible by patch_div (equal token counts per scale)")
    if not 1 <= cfg.num_decoder_stages <= 4:
        raise ConfigError("num_decoder_stages in [1, 4]")
    if cfg.num_heads < 1 or cfg.head_dim < 1 or cfg.num_layers < 0:
        raise ConfigError("num_heads, head_dim ≥ 1 and num_layers ≥ 0")
    if cfg.sigma_hp <= 0:
        raise ConfigError("sigma_hp > 0")
    if cfg.lambda_dice < 0:
        raise ConfigError("lambda_dice ≥ 0")
    if cfg.lr_init < 0:
        raise ConfigError("lr_init ≥ 0")
    if cfg.epochs < 1 or cfg.batch_size < 1 or cfg.max_steps < 0:
        raise ConfigError("epochs ≥ 1, batch_size ≥ 1, max_steps ≥ 0")


def validate_config(raw: Mapping[str, Any] | None = None) -> ModelConfig:
    """Build a ModelConfig from a key-value map.

    ``profile`` selects the preset that fills defaults; every other key
    overrides it. Values may be typed or strings (as read from a file/CLI).
    """
    raw = dict(raw or {})
    unknown = sorted(k for k in raw if k not in _FIELDS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    profile = str(raw.get("profile", "paper")).strip()
    if profile not in PROFILES:
        raise ConfigError(f"profile one of {sorted(PROFILES)}, got {profile!r}")
    values: dict[str, Any] = dict(PROFILES[profile])
    values.update({k: v for k, v in raw.items() if k != "profile"})
    coerced = {k: _coerce(k, v) for k, v in values.items()}
    cfg = ModelConfig(profile=profile, **coerced)
    _check(cfg)
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


def load_config_file(path: str | Path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: ModelConfig) -> str:
    lines = []
    for name, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ", ".join(str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
