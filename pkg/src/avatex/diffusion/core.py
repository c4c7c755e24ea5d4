"""Discrete noise schedules and the forward (noising) process.

One schedule object is shared by training, DDIM sampling and DDIM
inversion; all of them address it through ``alpha_bar(t)``.  Timestep
``CLEAN_T`` (= -1) denotes the fully denoised state and maps to
``alpha_bar == 1`` exactly, so a sampling chain ends on a clean latent
and an inversion chain starts from one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ConfigError

CLEAN_T = -1

SCHEDULE_KINDS = ("linear", "scaled_linear")


@dataclass(frozen=True)
class LatentCode:
    """A latent tensor tagged with the diffusion level it lives at."""

    values: torch.Tensor  # (C, h, w) or (B, C, h, w)
    timestep: int

    def __post_init__(self):
        if not torch.isfinite(self.values).all():
            raise ValueError("latent contains non-finite values")

    def with_values(self, values: torch.Tensor, timestep: int | None = None) -> "LatentCode":
        return LatentCode(values, self.timestep if timestep is None else timestep)


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances and their cumulative signal fractions."""

    kind: str
    t_train: int
    beta_start: float
    beta_end: float
    betas: np.ndarray        # (t_train,) float64, each in (0, 1)
    alpha_bars: np.ndarray   # (t_train,) float64, strictly decreasing

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at step t; CLEAN_T is exactly 1."""
        if t == CLEAN_T:
            return 1.0
        if not 0 <= t < self.t_train:
            raise ValueError(f"timestep {t} outside [0, {self.t_train})")
        return float(self.alpha_bars[t])

    def sampling_timesteps(self, steps: int) -> list[int]:
        """Uniformly strided descending timesteps, ending at 0."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if steps > self.t_train:
            raise ValueError(f"steps={steps} exceeds t_train={self.t_train}")
        if steps == 1:
            return [self.t_train - 1]
        ts = np.round(np.linspace(self.t_train - 1, 0, steps)).astype(int)
        if not (np.diff(ts) < 0).all():
            raise ValueError("timestep grid is not strictly decreasing")
        return [int(t) for t in ts]

    def params(self) -> dict:
        return {
            "kind": self.kind,
            "t_train": self.t_train,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }


def _validate(betas: np.ndarray) -> np.ndarray:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1:
        raise ConfigError("betas must be a non-empty 1-D sequence")
    if not ((betas > 0.0) & (betas < 1.0)).all():
        raise ConfigError("all betas must lie in (0, 1)")
    alpha_bars = np.cumprod(1.0 - betas)
    if not (np.diff(alpha_bars) < 0.0).all():
        raise ConfigError("alpha_bars must be strictly decreasing")
    return alpha_bars


def schedule_from_betas(betas, kind: str = "explicit") -> NoiseSchedule:
    """Build a schedule directly from a beta sequence (mostly for tests)."""
    betas = np.asarray(betas, dtype=np.float64)
    alpha_bars = _validate(betas)
    return NoiseSchedule(
        kind=kind,
        t_train=betas.size,
        beta_start=float(betas[0]),
        beta_end=float(betas[-1]),
        betas=betas,
        alpha_bars=alpha_bars,
    )


def make_schedule(kind: str, t_train: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Construct a linear or scaled-linear (sqrt-spaced) beta schedule."""
    if kind not in SCHEDULE_KINDS:
        raise ConfigError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if t_train < 2:
        raise ConfigError("t_train must be >= 2")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError("require 0 < beta_start <= beta_end < 1")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, t_train, dtype=np.float64)
    else:
        betas = np.linspace(beta_start**0.5, beta_end**0.5, t_train, dtype=np.float64) ** 2
    alpha_bars = _validate(betas)
    return NoiseSchedule(
        kind=kind,
        t_train=t_train,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        betas=betas,
        alpha_bars=alpha_bars,
    )


def add_noise(z0: LatentCode, eps: torch.Tensor, t: int, schedule: NoiseSchedule) -> LatentCode:
    """Forward process: sqrt(abar_t) * z0 + sqrt(1 - abar_t) * eps."""
    if eps.shape != z0.values.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != latent shape {tuple(z0.values.shape)}")
    if not 0 <= t < schedule.t_train:
        raise ValueError(f"timestep {t} outside [0, {schedule.t_train})")
    abar = schedule.alpha_bar(t)
    values = (abar**0.5) * z0.values + ((1.0 - abar) ** 0.5) * eps
    return LatentCode(values, t)
