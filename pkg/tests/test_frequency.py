import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperdec.frequency import gaussian_highpass_mask, highpass, highpass_filter, normalize_image


def test_mask_center_is_zero():
    m = gaussian_highpass_mask(64, 64, 5)
    assert m.center == (32, 32)
    assert m.values[32, 32] == 0.0
    assert m.value_at(32, 32) == 0.0


def test_mask_at_sigma_sqrt2():
    m = gaussian_highpass_mask(64, 64, 5)
    # squared distance 50 = 2 sigma^2 -> 1 - e^-1
    assert m.value_at(32 + 5 * math.sqrt(2), 32) == pytest.approx(0.6321205588285577, abs=1e-12)
    assert m.values[37, 37] == pytest.approx(1 - math.exp(-1), abs=1e-12)


def test_mask_corner_is_nearly_one():
    m = gaussian_highpass_mask(64, 64, 5)
    assert m.values[0, 0] >= 0.999
    assert m.values[0, 0] == pytest.approx(1 - math.exp(-2048 / 50), abs=1e-15)


def test_mask_radial_symmetry_and_monotonicity():
    m = gaussian_highpass_mask(33, 33, 4.0)
    v = m.values
    assert np.allclose(v, v[::-1, :]) and np.allclose(v, v[:, ::-1]) and np.allclose(v, v.T)
    yy, xx = np.mgrid[0:33, 0:33]
    d = np.hypot(yy - 16, xx - 16).ravel()
    order = np.argsort(d, kind="stable")
    assert np.all(np.diff(v.ravel()[order]) >= -1e-15)
    assert v.min() >= 0 and v.max() < 1


def test_mask_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        gaussian_highpass_mask(8, 8, 0)


def test_constant_image_is_suppressed():
    c = 3.7
    x = torch.full((64, 64), c, dtype=torch.float64)
    out = highpass_filter(x, 5.0)
    assert out.shape == (2, 64, 64)
    assert torch.equal(out[0], x)
    assert out[1].abs().max().item() <= 1e-5 * abs(c)


def test_impulse_energy_matches_parseval():
    x = torch.zeros(64, 64, dtype=torch.float64)
    x[32, 32] = 1.0
    hp = highpass(x, 5.0)
    # oracle: |F(impulse)| = 1 on every bin, so energy = sum(M^2) / (H W)
    u = np.arange(64)[:, None] - 32
    v = np.arange(64)[None, :] - 32
    mask = 1 - np.exp(-(u**2 + v**2) / 50.0)
    expected = float((mask**2).sum() / (64 * 64))
    assert (hp**2).sum().item() == pytest.approx(expected, rel=1e-10)


def test_identity_mask_round_trip():
    x = torch.randn(2, 1, 32, 48, dtype=torch.float64, generator=torch.Generator().manual_seed(0))
    out = highpass_filter(x, mask=torch.ones(32, 48))
    assert torch.allclose(out[:, 1], x[:, 0], rtol=1e-5, atol=1e-12)


def test_rejects_non_finite():
    x = torch.zeros(16, 16)
    x[0, 0] = float("nan")
    with pytest.raises(ValueError):
        highpass_filter(x)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(-5, 5), seed=st.integers(0, 10_000))
def test_linearity(a, b, seed):
    g = torch.Generator().manual_seed(seed)
    x = torch.randn(32, 32, dtype=torch.float64, generator=g)
    y = torch.randn(32, 32, dtype=torch.float64, generator=g)
    lhs = highpass(a * x + b * y, 5.0)
    rhs = a * highpass(x, 5.0) + b * highpass(y, 5.0)
    scale = max(1.0, rhs.abs().max().item())
    assert (lhs - rhs).abs().max().item() <= 1e-5 * scale


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), offset=st.floats(-100, 100))
def test_zero_mean(seed, offset):
    x = torch.randn(32, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(seed)) + offset
    hp = highpass(x, 5.0)
    scale = x.pow(2).mean().sqrt().item()
    assert abs(hp.mean().item()) <= 1e-5 * scale


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), dy=st.integers(-20, 20), dx=st.integers(-20, 20))
def test_circular_shift_covariance(seed, dy, dx):
    x = torch.randn(32, 32, dtype=torch.float64, generator=torch.Generator().manual_seed(seed))
    shifted = highpass(torch.roll(x, (dy, dx), dims=(0, 1)), 5.0)
    assert torch.allclose(shifted, torch.roll(highpass(x, 5.0), (dy, dx), dims=(0, 1)), atol=1e-10)


def test_normalize_image_zero_mean_unit_var():
    x = torch.rand(3, 1, 16, 16, dtype=torch.float64) * 7 + 2
    n = normalize_image(x)
    assert torch.allclose(n.mean(dim=(-2, -1)), torch.zeros(3, 1, dtype=torch.float64), atol=1e-12)
    assert torch.allclose(n.std(dim=(-2, -1), unbiased=False), torch.ones(3, 1, dtype=torch.float64), atol=1e-5)
    assert torch.equal(normalize_image(torch.full((1, 8, 8), 4.0)), torch.zeros(1, 8, 8))
