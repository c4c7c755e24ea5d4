import numpy as np
import pytest
import torch

from avatex.diffusion import (CLEAN_T, LatentCode, add_noise, cfg_predict, ddim_invert,
                              ddim_step, make_schedule, sample, schedule_from_betas,
                              train_loss)
from avatex.diffusion.sampler import SamplerHookError, SamplerHooks, ddim_invert_step
from avatex.errors import NumericError
from avatex.nn.conditioning import Condition, COND_LEN


class StubNet:
    """Duck-typed denoiser: eps = fn(z, t)."""

    def __init__(self, fn):
        self.fn = fn
        self.null_condition = Condition((0,) * COND_LEN, is_null=True)
        self.calls = 0

    def predict(self, z, t, cond, router=None):
        self.calls += 1
        return self.fn(z, t)


ZERO = StubNet(lambda z, t: torch.zeros_like(z))


def _cond(tok=1):
    return Condition((tok,) + (0,) * (COND_LEN - 1))


# -- ddim_step ----------------------------------------------------------------


def test_ddim_step_closed_form_example():
    # betas chosen so alpha_bars == [0.8, 0.5] exactly
    s = schedule_from_betas([0.2, 0.375])
    assert s.alpha_bars[0] == pytest.approx(0.8, abs=1e-15)
    assert s.alpha_bars[1] == pytest.approx(0.5, abs=1e-15)
    z = LatentCode(torch.tensor([[[1.0]]], dtype=torch.float64), 1)
    out = ddim_step(z, torch.zeros_like(z.values), 1, 0, s)
    assert float(out.values) == pytest.approx(1.26491, abs=1e-5)
    assert out.timestep == 0


def test_ddim_step_equal_alpha_is_identity():
    class FlatSchedule:
        def alpha_bar(self, t):
            return 0.37

    z = torch.randn(3, 2, 2, dtype=torch.float64)
    eps = torch.randn(3, 2, 2, dtype=torch.float64)
    from avatex.diffusion.sampler import _transition
    out = _transition(z, eps, 5, 3, FlatSchedule())
    assert torch.allclose(out, z, atol=1e-12)


def test_ddim_step_rejects_bad_order_and_shape():
    s = schedule_from_betas([0.2, 0.375])
    z = LatentCode(torch.zeros(1, 1, 1), 0)
    with pytest.raises(ValueError):
        ddim_step(z, torch.zeros(1, 1, 1), 0, 1, s)
    with pytest.raises(ValueError):
        ddim_step(LatentCode(torch.zeros(1, 1, 1), 1), torch.zeros(2, 1, 1), 1, 0, s)


def test_single_step_invert_step_round_trip():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(0)
    z = LatentCode(torch.randn(4, 8, 8, generator=g, dtype=torch.float64), 700)
    eps = torch.randn(4, 8, 8, generator=g, dtype=torch.float64)
    down = ddim_step(z, eps, 700, 300, s)
    back = ddim_invert_step(down, eps, 700, s)
    assert (back.values - z.values).abs().max() <= 1e-10


def test_exact_denoise_recovers_origin():
    # add noise at t, then a single exact step to the clean level recovers z0
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(1)
    z0 = torch.randn(4, 8, 8, generator=g, dtype=torch.float64)
    eps = torch.randn(4, 8, 8, generator=g, dtype=torch.float64)
    z_t = add_noise(LatentCode(z0, 0), eps, 900, s)
    rec = ddim_step(z_t, eps, 900, CLEAN_T, s)
    assert (rec.values - z0).abs().max() <= 1e-10


# -- cfg ----------------------------------------------------------------------


def test_cfg_collapses_and_arithmetic():
    cond_eps = torch.full((2, 2), 2.0)
    uncond_eps = torch.full((2, 2), 1.0)

    class TwoBranch(StubNet):
        def predict(self, z, t, cond, router=None):
            return uncond_eps if cond.is_null else cond_eps

    net = TwoBranch(None)
    z = LatentCode(torch.zeros(2, 2), 10)
    s = None  # cfg does not touch the schedule
    assert torch.equal(cfg_predict(net, z, 10, _cond(), 1.0), cond_eps)
    assert torch.equal(cfg_predict(net, z, 10, _cond(), 0.0), uncond_eps)
    out = cfg_predict(net, z, 10, _cond(), 7.5)
    assert torch.allclose(out, torch.full((2, 2), 8.5), atol=0)


def test_cfg_rejects_null_condition():
    with pytest.raises(ValueError):
        cfg_predict(ZERO, LatentCode(torch.zeros(1, 1, 1), 5), 5,
                    ZERO.null_condition, 7.5)


def test_cfg_affine_in_omega():
    g = torch.Generator().manual_seed(2)
    cond_eps = torch.randn(4, 3, 3, generator=g, dtype=torch.float64)
    uncond_eps = torch.randn(4, 3, 3, generator=g, dtype=torch.float64)

    class TwoBranch(StubNet):
        def predict(self, z, t, cond, router=None):
            return uncond_eps if cond.is_null else cond_eps

    net = TwoBranch(None)
    z = LatentCode(torch.zeros(4, 3, 3, dtype=torch.float64), 10)
    r = {w: cfg_predict(net, z, 10, _cond(), w) for w in (0.0, 1.0, 7.5)}
    # collinearity: r(7.5) - r(0) == 7.5 * (r(1) - r(0))
    lhs = r[7.5] - r[0.0]
    rhs = 7.5 * (r[1.0] - r[0.0])
    assert (lhs - rhs).abs().max() <= 1e-12


# -- train_loss ---------------------------------------------------------------


def test_train_loss_perfect_predictor_is_zero():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(3)
    eps = torch.randn(4, 8, 8, generator=g)
    net = StubNet(lambda z, t: eps)
    z0 = LatentCode(torch.randn(4, 8, 8, generator=g), 0)
    assert float(train_loss(net, z0, 500, eps, net.null_condition, s)) == 0.0


def test_train_loss_constant_offset():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(4)
    eps = torch.randn(4, 8, 8, generator=g)
    c = 0.37
    net = StubNet(lambda z, t: eps + c)
    z0 = LatentCode(torch.randn(4, 8, 8, generator=g), 0)
    assert float(train_loss(net, z0, 100, eps, net.null_condition, s)) == pytest.approx(c * c, rel=1e-6)


def test_train_loss_gradient_step_decreases():
    # two-parameter linear "network": eps_hat = a*z + b
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(5)
    a = torch.tensor(0.3, requires_grad=True)
    b = torch.tensor(-0.2, requires_grad=True)
    net = StubNet(lambda z, t: a * z + b)
    z0 = LatentCode(torch.randn(4, 8, 8, generator=g), 0)
    eps = torch.randn(4, 8, 8, generator=g)
    loss0 = train_loss(net, z0, 400, eps, net.null_condition, s)
    loss0.backward()
    with torch.no_grad():
        a -= 0.05 * a.grad
        b -= 0.05 * b.grad
    loss1 = train_loss(net, z0, 400, eps, net.null_condition, s)
    assert float(loss1) < float(loss0)


def test_train_loss_rejects_non_finite_output():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    net = StubNet(lambda z, t: z * float("nan"))
    z0 = LatentCode(torch.zeros(1, 2, 2), 0)
    with pytest.raises(NumericError):
        train_loss(net, z0, 10, torch.zeros(1, 2, 2), net.null_condition, s)


# -- sample / invert ----------------------------------------------------------


def _chain_scale(schedule, steps):
    """Oracle: product of per-step scale factors for a zero noise predictor."""
    ts = schedule.sampling_timesteps(steps)
    levels = ts + [CLEAN_T]
    scale = 1.0
    for a, b in zip(levels, levels[1:]):
        scale *= (schedule.alpha_bar(b) / schedule.alpha_bar(a)) ** 0.5
    return scale


def test_sample_zero_predictor_rescaling_chain():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(6)
    z_T = torch.randn(4, 8, 8, generator=g, dtype=torch.float64)
    out = sample(ZERO, LatentCode(z_T, 999), ZERO.null_condition, 20, s)
    expected = z_T * _chain_scale(s, 20)
    assert torch.allclose(out.values, expected, atol=1e-9)
    # the chain ends exactly clean: scale == 1/sqrt(abar_T)
    assert _chain_scale(s, 20) == pytest.approx(1.0 / s.alpha_bar(999) ** 0.5, rel=1e-12)


def test_sample_identity_hook_bitwise():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(7)
    net = StubNet(lambda z, t: 0.1 * z)
    z_T = LatentCode(torch.randn(4, 8, 8, generator=g), 999)
    plain = sample(net, z_T, net.null_condition, 10, s)
    hooked = sample(net, z_T, net.null_condition, 10, s,
                    hooks=SamplerHooks(per_step_latent_transform=lambda z, i: z))
    assert torch.equal(plain.values, hooked.values)


def test_sample_deterministic():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(8)
    net = StubNet(lambda z, t: 0.05 * z)
    z_T = LatentCode(torch.randn(4, 8, 8, generator=g), 999)
    a = sample(net, z_T, net.null_condition, 20, s)
    b = sample(net, z_T, net.null_condition, 20, s)
    assert torch.equal(a.values, b.values)


def test_sample_validates_start_level():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    with pytest.raises(ValueError):
        sample(ZERO, LatentCode(torch.zeros(1, 1, 1), 5), ZERO.null_condition, 20, s)


def test_hook_exception_carries_step_index():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)

    def bad_hook(z, i):
        if i == 3:
            raise RuntimeError("boom")
        return z

    with pytest.raises(SamplerHookError) as exc:
        sample(ZERO, LatentCode(torch.zeros(1, 2, 2), 999), ZERO.null_condition, 10, s,
               hooks=SamplerHooks(per_step_latent_transform=bad_hook))
    assert exc.value.step_index == 3
    assert "step 3" in str(exc.value)


def test_invert_zero_predictor_closed_form():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(9)
    z0 = torch.randn(4, 8, 8, generator=g, dtype=torch.float64)
    out = ddim_invert(LatentCode(z0, 0), ZERO, ZERO.null_condition, 20, s)
    # oracle: inverse of the sampling chain scale
    expected = z0 / _chain_scale(s, 20)
    assert out.timestep == 999
    assert torch.allclose(out.values, expected, atol=1e-9)
    assert torch.allclose(out.values, z0 * s.alpha_bar(999) ** 0.5, atol=1e-9)


def test_invert_then_sample_exact_for_state_free_stub():
    # eps depends on t only, so inversion error vanishes at any step count
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)
    g = torch.Generator().manual_seed(10)
    per_t = {t: torch.randn(2, 4, 4, generator=g, dtype=torch.float64)
             for t in s.sampling_timesteps(20)}
    net = StubNet(lambda z, t: per_t[int(t)])
    z0 = torch.randn(2, 4, 4, generator=g, dtype=torch.float64)
    z_T = ddim_invert(LatentCode(z0, 0), net, net.null_condition, 20, s)
    back = sample(net, z_T, net.null_condition, 20, s)
    assert (back.values - z0).abs().max() <= 1e-10


def test_invert_full_steps_linear_stub_first_order_drift():
    # First-order inversion is not exact for a z-dependent predictor: the
    # forward and inverse transitions evaluate eps at different latents.
    # Measured drift for eps = 0.1 z at full step count stays below 1e-3
    # (and the state-free stub above is exact to 1e-10).
    s = make_schedule("scaled_linear", 200, 0.00085, 0.012)
    net = StubNet(lambda z, t: 0.1 * z)
    g = torch.Generator().manual_seed(11)
    z0 = torch.randn(2, 4, 4, generator=g, dtype=torch.float64)
    z_T = ddim_invert(LatentCode(z0, 0), net, net.null_condition, 200, s)
    back = sample(net, z_T, net.null_condition, 200, s)
    assert (back.values - z0).abs().max() <= 1e-3


def test_invert_aborts_on_non_finite_with_step_index():
    s = make_schedule("scaled_linear", 1000, 0.00085, 0.012)

    calls = {"n": 0}

    def explode(z, t):
        calls["n"] += 1
        if calls["n"] == 4:
            return torch.full_like(z, float("inf"))
        return torch.zeros_like(z)

    net = StubNet(explode)
    with pytest.raises(NumericError) as exc:
        ddim_invert(LatentCode(torch.zeros(1, 2, 2), 0), net, net.null_condition, 10, s)
    assert "step 3" in str(exc.value)
