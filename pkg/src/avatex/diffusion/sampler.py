"""Deterministic DDIM stepping, inversion, classifier-free guidance and the
hook-extensible sampling loop.

Every multi-step procedure in the package (reconstruction, feature
extraction, feature-injected resampling, inpainting, guided denoising)
is this one loop with different hooks.  Sampling is always eta=0: the
chain is a pure function of its inputs, which is what makes inversion and
the bitwise reproducibility contracts possible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import torch

from ..errors import AvatexError, NumericError
from ..nn.features import FeaturePassSpec
from .core import CLEAN_T, LatentCode, NoiseSchedule, add_noise


class SamplerHookError(AvatexError):
    """A sampler hook raised; carries the step index and timestep."""

    def __init__(self, step_index: int, timestep: int, cause: BaseException):
        self.step_index = step_index
        self.timestep = timestep
        super().__init__(f"hook failed at step {step_index} (t={timestep}): {cause}")


@dataclass(frozen=True)
class SamplerHooks:
    """Optional extension points for the sampling loop.

    per_step_latent_transform(latent, step_index) runs after each DDIM
    update; epsilon_override(net, latent, t, cond) replaces the noise
    prediction entirely; feature_spec threads record/inject instructions
    into the network.  Callbacks must not mutate sampler state.
    """

    per_step_latent_transform: Optional[Callable[[LatentCode, int], LatentCode]] = None
    epsilon_override: Optional[Callable[[object, LatentCode, int, object], torch.Tensor]] = None
    feature_spec: Optional[FeaturePassSpec] = None


def _transition(z: torch.Tensor, eps_hat: torch.Tensor, level_from: int,
                level_to: int, schedule: NoiseSchedule) -> torch.Tensor:
    """Move a latent between noise levels assuming eps_hat explains it."""
    abar_a = schedule.alpha_bar(level_from)
    abar_b = schedule.alpha_bar(level_to)
    x0 = (z - (1.0 - abar_a) ** 0.5 * eps_hat) / abar_a**0.5
    return abar_b**0.5 * x0 + (1.0 - abar_b) ** 0.5 * eps_hat


def ddim_step(z_t: LatentCode, eps_hat: torch.Tensor, t: int, t_prev: int,
              schedule: NoiseSchedule) -> LatentCode:
    """One deterministic denoising step from t to t_prev (t_prev < t)."""
    if t_prev >= t:
        raise ValueError(f"t_prev={t_prev} must be < t={t}")
    if eps_hat.shape != z_t.values.shape:
        raise ValueError("eps_hat shape does not match latent")
    values = _transition(z_t.values, eps_hat, t, t_prev, schedule)
    return LatentCode(values, t_prev)


def ddim_invert_step(z: LatentCode, eps_hat: torch.Tensor, t_next: int,
                     schedule: NoiseSchedule) -> LatentCode:
    """Algebraic inverse of ddim_step: move a latent up to a noisier level."""
    if t_next <= z.timestep:
        raise ValueError(f"t_next={t_next} must be > current level {z.timestep}")
    values = _transition(z.values, eps_hat, z.timestep, t_next, schedule)
    return LatentCode(values, t_next)


def cfg_predict(net, z_t: LatentCode, t: int, cond, omega: float,
                null_cond=None) -> torch.Tensor:
    """Classifier-free guided prediction: omega*cond + (1-omega)*uncond."""
    if getattr(cond, "is_null", False):
        raise ValueError("cfg_predict requires a non-null condition")
    if null_cond is None:
        null_cond = net.null_condition
    eps_c = net.predict(z_t.values, t, cond)
    eps_u = net.predict(z_t.values, t, null_cond)
    return omega * eps_c + (1.0 - omega) * eps_u


def train_loss(net, z0: LatentCode, t: int, eps: torch.Tensor, cond,
               schedule: NoiseSchedule) -> torch.Tensor:
    """Noise-prediction objective: mean squared error between eps and the
    network output at the noised latent."""
    z_t = add_noise(z0, eps, t, schedule)
    pred = net.predict(z_t.values, t, cond)
    if not torch.isfinite(pred).all():
        raise NumericError(f"denoiser produced non-finite output at t={t}")
    return (eps - pred).square().mean()


def sample(net, z_T: LatentCode, cond, steps: int, schedule: NoiseSchedule,
           hooks: SamplerHooks | None = None, omega: float = 1.0,
           null_cond=None) -> LatentCode:
    """Run the DDIM chain from z_T down to a clean latent.

    With no hooks and omega == 1 this is plain conditional sampling.  The
    chain visits schedule.sampling_timesteps(steps) and finishes on the
    exact clean level (alpha_bar == 1).
    """
    hooks = hooks or SamplerHooks()
    ts = schedule.sampling_timesteps(steps)
    if z_T.timestep != ts[0]:
        raise ValueError(
            f"z_T is at timestep {z_T.timestep} but a {steps}-step chain starts at {ts[0]}")
    use_cfg = omega != 1.0 and not getattr(cond, "is_null", False)
    z = z_T
    for i, t in enumerate(ts):
        t_next = ts[i + 1] if i + 1 < len(ts) else CLEAN_T
        router = hooks.feature_spec.router_for(t) if hooks.feature_spec else None
        if hooks.epsilon_override is not None:
            try:
                eps = hooks.epsilon_override(net, z, t, cond)
            except Exception as e:  # noqa: BLE001 - re-raised with context
                raise SamplerHookError(i, t, e) from e
        elif use_cfg:
            eps = cfg_predict(net, z, t, cond, omega, null_cond)
        else:
            eps = net.predict(z.values, t, cond, router=router)
        if not torch.isfinite(eps).all():
            raise NumericError(f"non-finite noise prediction at step {i} (t={t})")
        z = ddim_step(z, eps, t, t_next, schedule)
        if hooks.per_step_latent_transform is not None:
            try:
                z = hooks.per_step_latent_transform(z, i)
            except Exception as e:  # noqa: BLE001
                raise SamplerHookError(i, t, e) from e
    return z


def ddim_invert(z0: LatentCode, net, cond, steps: int, schedule: NoiseSchedule,
                feature_spec: FeaturePassSpec | None = None) -> LatentCode:
    """Deterministically map a clean latent to the start of its sampling
    chain (first-order inversion: eps is evaluated at the current latent
    with the upcoming timestep).

    The returned latent sits at sampling_timesteps(steps)[0]; running
    ``sample`` from it with the same conditioning approximately
    reconstructs z0.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if z0.timestep not in (0, CLEAN_T):
        raise ValueError(f"ddim_invert expects a clean latent, got timestep {z0.timestep}")
    levels = [CLEAN_T] + list(reversed(schedule.sampling_timesteps(steps)))
    z = LatentCode(z0.values, CLEAN_T)
    for i in range(len(levels) - 1):
        t_next = levels[i + 1]
        router = feature_spec.router_for(t_next) if feature_spec else None
        eps = net.predict(z.values, t_next, cond, router=router)
        if not torch.isfinite(eps).all():
            raise NumericError(f"non-finite prediction during inversion at step {i} (t={t_next})")
        z = ddim_invert_step(z, eps, t_next, schedule)
        if not torch.isfinite(z.values).all():
            raise NumericError(f"non-finite latent during inversion at step {i} (t={t_next})")
    return z
