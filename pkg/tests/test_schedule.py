import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from avatex.diffusion import CLEAN_T, LatentCode, add_noise, make_schedule, schedule_from_betas
from avatex.errors import ConfigError


def test_linear_first_step_closed_form():
    s = make_schedule("linear", 1000, 1e-4, 0.02)
    assert s.alpha_bars[0] == pytest.approx(1 - 1e-4, abs=1e-15)


def test_linear_two_step_example():
    s = make_schedule("linear", 2, 0.5, 0.5)
    assert np.allclose(s.alpha_bars, [0.5, 0.25], atol=1e-15)


def test_scaled_linear_cumprod_oracle():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    # independent oracle: direct running product
    prod = 1.0
    for b in s.betas:
        prod *= 1.0 - b
    assert s.alpha_bars[-1] == pytest.approx(prod, rel=1e-12)
    assert (np.diff(s.alpha_bars) < 0).all()


def test_cumprod_identity_tight():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    ref = np.cumprod(1.0 - s.betas)
    assert np.abs(s.alpha_bars - ref).max() <= 1e-12


@given(kind=st.sampled_from(["linear", "scaled_linear"]),
       t_train=st.integers(2, 300),
       b0=st.floats(1e-5, 0.4), spread=st.floats(0.0, 0.5))
@settings(max_examples=40, deadline=None)
def test_schedule_invariants_property(kind, t_train, b0, spread):
    b1 = min(b0 * (1 + spread), 0.99)
    s = make_schedule(kind, t_train, b0, b1)
    assert ((s.betas > 0) & (s.betas < 1)).all()
    assert (np.diff(s.alpha_bars) < 0).all()
    assert np.abs(s.alpha_bars - np.cumprod(1 - s.betas)).max() <= 1e-12


@pytest.mark.parametrize("kind,t,b0,b1", [
    ("linear", 1, 0.1, 0.2),      # t_train too small
    ("linear", 10, 0.0, 0.2),     # beta_start out of range
    ("linear", 10, 0.3, 0.2),     # not monotone
    ("linear", 10, 0.3, 1.0),     # beta_end out of range
    ("cosine", 10, 0.1, 0.2),     # unknown kind
])
def test_make_schedule_rejections(kind, t, b0, b1):
    with pytest.raises(ConfigError):
        make_schedule(kind, t, b0, b1)


def test_alpha_bar_lookup_and_clean_level():
    s = make_schedule("linear", 10, 0.1, 0.2)
    assert s.alpha_bar(CLEAN_T) == 1.0
    assert s.alpha_bar(0) == pytest.approx(0.9)
    with pytest.raises(ValueError):
        s.alpha_bar(10)


def test_sampling_timesteps_grid():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    ts = s.sampling_timesteps(20)
    assert len(ts) == 20 and ts[0] == 999 and ts[-1] == 0
    assert all(a > b for a, b in zip(ts, ts[1:]))
    assert s.sampling_timesteps(1) == [999]
    with pytest.raises(ValueError):
        s.sampling_timesteps(0)


def test_add_noise_zero_noise_case():
    s = schedule_from_betas([0.36, 0.5])  # alpha_bar_0 = 0.64
    z0 = LatentCode(torch.ones(1, 1, 1, dtype=torch.float64), 0)
    out = add_noise(z0, torch.zeros(1, 1, 1, dtype=torch.float64), 0, s)
    assert out.timestep == 0
    assert float(out.values) == pytest.approx(0.8, abs=1e-12)


def test_add_noise_zero_signal_case():
    s = schedule_from_betas([0.36, 0.5])
    z0 = LatentCode(torch.zeros(1, 1, 1, dtype=torch.float64), 0)
    out = add_noise(z0, torch.ones(1, 1, 1, dtype=torch.float64), 0, s)
    assert float(out.values) == pytest.approx(0.6, abs=1e-12)


def test_add_noise_variance_monte_carlo():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    t = 700
    g = torch.Generator().manual_seed(0)
    z0 = LatentCode(torch.randn(4, 2, 2, generator=g), 0)
    n = 10_000
    eps = torch.randn(n, 4, 2, 2, generator=g)
    abar = s.alpha_bar(t)
    outs = abar**0.5 * z0.values[None] + (1 - abar) ** 0.5 * eps
    var = outs.var(dim=0).mean()
    # MC tolerance: var of N(0,1-abar) estimated over 10^4 draws
    assert float(var) == pytest.approx(1 - abar, rel=0.05)


def test_add_noise_linearity_and_shape_errors():
    s = schedule_from_betas([0.36, 0.5])
    g = torch.Generator().manual_seed(1)
    a = torch.randn(2, 3, 3, generator=g)
    b = torch.randn(2, 3, 3, generator=g)
    eps = torch.randn(2, 3, 3, generator=g)
    lhs = add_noise(LatentCode(a + b, 0), eps, 0, s).values
    rhs = add_noise(LatentCode(a, 0), eps, 0, s).values \
        + add_noise(LatentCode(b, 0), torch.zeros_like(eps), 0, s).values
    assert torch.allclose(lhs, rhs, atol=1e-6)
    with pytest.raises(ValueError):
        add_noise(LatentCode(a, 0), torch.zeros(1, 1, 1), 0, s)
    with pytest.raises(ValueError):
        add_noise(LatentCode(a, 0), eps, 5, s)


def test_latent_code_rejects_non_finite():
    with pytest.raises(ValueError):
        LatentCode(torch.tensor([float("nan")]), 0)
