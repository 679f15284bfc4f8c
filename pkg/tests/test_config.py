import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdec.config import ConfigError, ModelConfig, dump_config, parse_config_text, validate_config


def test_paper_profile_defaults():
    cfg = validate_config({"profile": "paper"})
    assert cfg.encoder_channels == (32, 64, 128, 256, 512)
    assert cfg.sigma_hp == 5
    assert cfg.lambda_dice == 0.5
    assert (cfg.num_heads, cfg.head_dim, cfg.num_layers) == (6, 64, 6)
    assert cfg.token_dim == 384
    assert cfg.lr_init == 8e-4
    assert cfg.epochs == 800


def test_desk_profile():
    cfg = validate_config({"profile": "desk"})
    assert cfg.input_size == (64, 64)
    assert cfg.encoder_channels == (8, 16, 32, 64, 128)
    assert (cfg.decoder_width, cfg.token_dim, cfg.num_heads, cfg.head_dim, cfg.num_layers) == (32, 96, 6, 16, 3)


def test_input_size_not_divisible_by_16():
    with pytest.raises(ConfigError, match="input_size divisible by 16"):
        validate_config({"profile": "paper", "input_size": 250})


def test_head_product_mismatch():
    with pytest.raises(ConfigError, match="C_T = num_heads × head_dim"):
        validate_config({"profile": "desk", "num_heads": 5})


@pytest.mark.parametrize(
    "override, message",
    [
        ({"encoder_channels": "8,16,16,64,128"}, "strictly increasing"),
        ({"encoder_channels": "8,16,32,64"}, "exactly 5 entries"),
        ({"decoder_width": 2, "decoder_variant": "basic"}, "C_dec ≥ 3"),
        ({"decoder_variant": "fancy"}, "decoder_variant"),
        ({"sigma_hp": 0}, "sigma_hp"),
    ],
)
def test_invariant_violations(override, message):
    with pytest.raises(ConfigError, match=message):
        validate_config({"profile": "desk", **override})


def test_unknown_key_is_an_error():
    with pytest.raises(ConfigError, match="unknown config key"):
        validate_config({"profile": "desk", "lerning_rate": 1e-3})


def test_string_values_are_coerced():
    cfg = validate_config({"profile": "desk", "input_size": "128 x 96", "lr_init": "5e-4", "static_decoder": "true"})
    assert cfg.input_size == (128, 96)
    assert cfg.lr_init == 5e-4
    assert cfg.static_decoder is True


def test_config_file_parsing_with_comments():
    raw = parse_config_text("# comment\nprofile = desk\nnum_layers = 2  # fewer\n\n")
    assert raw == {"profile": "desk", "num_layers": "2"}
    with pytest.raises(ConfigError):
        parse_config_text("just words")


@pytest.mark.parametrize("profile", ["paper", "desk", "tiny"])
def test_validate_is_idempotent(profile):
    cfg = validate_config({"profile": profile})
    assert validate_config(cfg.to_dict()) == cfg


@settings(max_examples=50, deadline=None)
@given(
    lr=st.floats(min_value=0, max_value=1, allow_nan=False),
    lam=st.floats(min_value=0, max_value=10, allow_nan=False),
    sigma=st.floats(min_value=1e-3, max_value=1e3, allow_nan=False),
    layers=st.integers(0, 8),
    seed=st.integers(0, 2**31 - 1),
)
def test_file_round_trip_is_lossless(lr, lam, sigma, layers, seed):
    cfg = validate_config(
        {"profile": "desk", "lr_init": lr, "lambda_dice": lam, "sigma_hp": sigma, "num_layers": layers, "seed": seed}
    )
    again = validate_config(parse_config_text(dump_config(cfg)))
    assert again == cfg


def test_config_is_immutable():
    cfg = validate_config({"profile": "desk"})
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg.lr_init = 1.0  # type: ignore[misc]
    assert isinstance(cfg, ModelConfig)
