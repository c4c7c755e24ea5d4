"""Two-phase texture generation: masked latent inpainting, then
photometric- and edge-guided denoising, decoded into a full PBR set.

Phase one (first T-N steps) clamps the visible latent region to the
forward-noised encoding of the projected partial texture after every DDIM
step.  Phase two (last N steps) adds energy gradients to the
classifier-free prediction: a photometric term comparing the rendered
diffuse texture against the delit input view, and a soft-edge term
preserving high-frequency detail.  All four PBR maps decode from the one
final latent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .diffusion.core import CLEAN_T, LatentCode, NoiseSchedule
from .diffusion.sampler import SamplerHooks, cfg_predict, sample
from .errors import ConfigError, NumericError
from .geometry.camera import Camera
from .geometry.edges import soft_edges
from .geometry.head import Mesh
from .geometry.raster import TexelSampler, build_texel_sampler, compute_coverage, project_to_uv
from .maps import PbrTextureSet, UvTexture, VisibilityMask, downsample_mask
from .nn.autoencoder import AutoEncoder, PbrDecoderSet
from .nn.perceptual import PerceptualMetric
from .rngs import torch_rng


@dataclass(frozen=True)
class TexgenConfig:
    steps_total: int = 200       # T
    steps_guided: int = 90       # N
    omega: float = 7.5           # classifier-free guidance scale
    omega_p: float = 0.1         # photometric gradient scale
    omega_e: float = 0.05        # edge gradient scale
    omega_photo: float = 0.4     # MSE weight inside the photometric energy
    omega_lpips: float = 0.6     # perceptual weight inside the photometric energy
    edit_omega_p: float = 0.01   # loosened scales for text-driven edits
    edit_omega_e: float = 0.005
    edit_strength: float = 0.55  # fraction of the chain re-run during edits
    cfg_in_inpaint: bool = True
    normalize_gradients: bool = True
    literal_inpaint_noise: bool = False  # ablation: z_m + eps without q-sample scaling
    edge_tau: float = 0.1
    edge_sharpness: float = 10.0

    def __post_init__(self):
        if not 0 <= self.steps_guided <= self.steps_total:
            raise ConfigError("need 0 <= guided steps <= total steps")
        for name in ("omega_p", "omega_e", "omega_photo", "omega_lpips",
                     "edit_omega_p", "edit_omega_e"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and >= 0")

    def edit_preset(self) -> "TexgenConfig":
        from dataclasses import replace
        return replace(self, omega_p=self.edit_omega_p, omega_e=self.edit_omega_e)


def inpaint_step(z_t: LatentCode, z_m: torch.Tensor, t: int, latent_mask: torch.Tensor,
                 schedule: NoiseSchedule, eps: torch.Tensor,
                 literal_noise: bool = False) -> LatentCode:
    """Clamp the visible latent region to the observation noised to level t.

    On the mask: sqrt(abar_t) z_m + sqrt(1-abar_t) eps (or z_m + eps with
    literal_noise).  Off the mask: z_t unchanged.
    """
    if z_m.shape != z_t.values.shape:
        raise ValueError("z_m shape does not match the latent")
    if eps.shape != z_m.shape:
        raise ValueError("eps shape does not match the latent")
    if latent_mask.shape != z_m.shape[-2:]:
        raise ValueError("latent mask shape does not match the latent grid")
    if literal_noise:
        noised = z_m + eps
    else:
        abar = schedule.alpha_bar(t)
        noised = abar**0.5 * z_m + (1.0 - abar) ** 0.5 * eps
    m = latent_mask.to(z_t.values.dtype)
    return z_t.with_values(m * noised + (1.0 - m) * z_t.values)


class GuidanceEnergies:
    """Photometric and edge energies of a texture latent against the
    delit input view, plus their (optionally max-norm-rescaled) latent
    gradients."""

    def __init__(self, sampler: TexelSampler, image_d: torch.Tensor,
                 image_mask: np.ndarray, ae: AutoEncoder,
                 perceptual: PerceptualMetric, config: TexgenConfig):
        self.sampler = sampler
        self.ae = ae
        self.perceptual = perceptual
        self.config = config
        self.image_d = image_d.detach().float()
        mask = torch.from_numpy(np.asarray(image_mask, dtype=np.float32))
        self.mask = mask
        self.n_masked = float(mask.sum().clamp(min=1.0))
        self.target_masked = self.image_d * mask
        self.target_edges = soft_edges(self.image_d, config.edge_tau, config.edge_sharpness)

    def _render(self, z: torch.Tensor, to_x0=None) -> torch.Tensor:
        x0 = to_x0(z) if to_x0 is not None else z
        tex = self.ae.decode_diffuse(x0)
        return self.sampler.render(tex)

    def photometric_energy(self, z: torch.Tensor, to_x0=None) -> torch.Tensor:
        render = self._render(z, to_x0)
        mask = self.mask.to(render.dtype)
        diff = (render - self.image_d.to(render.dtype)) * mask
        mse = diff.square().sum() / (self.n_masked * render.shape[0])
        energy = self.config.omega_photo * mse
        if self.config.omega_lpips > 0:
            lp = self.perceptual(render * mask, self.target_masked.to(render.dtype))
            energy = energy + self.config.omega_lpips * lp
        return energy

    def edge_energy(self, z: torch.Tensor, to_x0=None) -> torch.Tensor:
        render = self._render(z, to_x0)
        edges = soft_edges(render, self.config.edge_tau, self.config.edge_sharpness)
        diff = (edges - self.target_edges.to(render.dtype)) * self.mask.to(render.dtype)
        return diff.square().sum() / self.n_masked

    def value_and_grad(self, kind: str, z: torch.Tensor, to_x0=None):
        """Energy value and its gradient w.r.t. z, rescaled to unit max-norm
        (bounds the guidance step size across schedules)."""
        fn = self.photometric_energy if kind == "photo" else self.edge_energy
        zg = z.detach().clone().requires_grad_(True)
        energy = fn(zg, to_x0)
        if not torch.isfinite(energy):
            raise NumericError(f"{kind} energy is non-finite")
        (grad,) = torch.autograd.grad(energy, zg)
        if not torch.isfinite(grad).all():
            raise NumericError(f"{kind} energy gradient is non-finite "
                               f"(energy={float(energy):.6g})")
        if self.config.normalize_gradients:
            peak = grad.abs().max()
            if peak > 0:
                grad = grad / peak
        return float(energy), grad


def guided_epsilon(net, z_t: LatentCode, t: int, cond, config: TexgenConfig,
                   energies: GuidanceEnergies | None, schedule: NoiseSchedule,
                   null_cond=None, audit: list | None = None) -> torch.Tensor:
    """Classifier-free prediction plus scaled energy gradients.

    With omega_p == omega_e == 0 this returns the CFG prediction bitwise.
    """
    if getattr(cond, "is_null", False):
        eps_cfg = net.predict(z_t.values, t, cond)
    else:
        eps_cfg = cfg_predict(net, z_t, t, cond, config.omega, null_cond)
    if config.omega_p == 0.0 and config.omega_e == 0.0:
        return eps_cfg

    abar = schedule.alpha_bar(t)
    eps_const = eps_cfg.detach()

    def to_x0(z):
        return (z - (1.0 - abar) ** 0.5 * eps_const) / abar**0.5

    g_p = torch.zeros_like(eps_cfg)
    g_e = torch.zeros_like(eps_cfg)
    v_p = v_e = 0.0
    if config.omega_p > 0:
        v_p, g_p = energies.value_and_grad("photo", z_t.values, to_x0)
    if config.omega_e > 0:
        v_e, g_e = energies.value_and_grad("edge", z_t.values, to_x0)
    if audit is not None:
        audit.append({"t": t, "G_P": v_p, "G_E": v_e})
    return eps_cfg + (config.omega_p * g_p + config.omega_e * g_e)


def decode_pbr_set(ae: AutoEncoder, decoders: PbrDecoderSet, z0: torch.Tensor) -> PbrTextureSet:
    """All four maps from the one final latent."""
    with torch.no_grad():
        return PbrTextureSet(
            diffuse=UvTexture(ae.decode_diffuse(z0).numpy()),
            normal=UvTexture(decoders.decode(ae, z0, "normal").numpy()),
            specular=UvTexture(decoders.decode(ae, z0, "specular").numpy()),
            roughness=UvTexture(decoders.decode(ae, z0, "roughness").numpy()),
        )


@dataclass
class TexgenResult:
    pbr: PbrTextureSet | None
    z0: torch.Tensor
    partial_texture: UvTexture
    visibility: VisibilityMask
    guided_audit: list = field(default_factory=list)
    inpaint_records: list = field(default_factory=list)
    config: TexgenConfig | None = None


def generate_textures(image_d, mesh: Mesh, camera: Camera, cond, texture_net,
                      ae: AutoEncoder, decoders: PbrDecoderSet,
                      perceptual: PerceptualMetric, schedule: NoiseSchedule,
                      config: TexgenConfig, seed: int,
                      tex_size: tuple[int, int] | None = None,
                      decode: bool = True) -> TexgenResult:
    """Project the delit view into UV space, then run the two-phase chain."""
    if isinstance(image_d, np.ndarray):
        image_d = torch.from_numpy(image_d)
    image_d = image_d.float()
    if tex_size is None:
        tex_size = (ae.image_size, ae.image_size)

    coverage = compute_coverage(mesh, camera)
    partial, vis = project_to_uv(image_d.numpy(), mesh, camera, tex_size,
                                 latent_downsample=ae.downsample, coverage=coverage)
    sampler = build_texel_sampler(coverage, tex_size)

    with torch.no_grad():
        z_m = ae.encode(torch.from_numpy(partial.values))
    latent_mask = torch.from_numpy(vis.latent_mask)

    t_list = schedule.sampling_timesteps(config.steps_total)
    n_inpaint = config.steps_total - config.steps_guided
    guided_from = {t_list[i] for i in range(n_inpaint, config.steps_total)}

    g_noise = torch_rng(seed, "texgen-noise")
    g_init = torch_rng(seed, "texgen-init")
    z_T = LatentCode(torch.randn(z_m.shape, generator=g_init), t_list[0])

    energies = GuidanceEnergies(sampler, image_d, coverage.mask, ae, perceptual, config)
    guided_audit: list = []
    inpaint_records: list = []

    def transform(latent: LatentCode, step_index: int) -> LatentCode:
        if step_index >= n_inpaint:
            return latent
        eps = torch.randn(z_m.shape, generator=g_noise)
        out = inpaint_step(latent, z_m, latent.timestep, latent_mask, schedule, eps,
                           literal_noise=config.literal_inpaint_noise)
        inpaint_records.append({"step": step_index, "t": latent.timestep, "eps": eps})
        return out

    def epsilon(net, latent: LatentCode, t: int, c):
        if t in guided_from:
            return guided_epsilon(net, latent, t, c, config, energies, schedule,
                                  audit=guided_audit)
        if getattr(c, "is_null", False) or not config.cfg_in_inpaint:
            return net.predict(latent.values, t, c)
        return cfg_predict(net, latent, t, c, config.omega)

    hooks = SamplerHooks(per_step_latent_transform=transform, epsilon_override=epsilon)
    with torch.no_grad():
        z0 = sample(texture_net, z_T, cond, config.steps_total, schedule, hooks=hooks)

    pbr = decode_pbr_set(ae, decoders, z0.values) if decode else None
    return TexgenResult(pbr=pbr, z0=z0.values, partial_texture=partial, visibility=vis,
                        guided_audit=guided_audit, inpaint_records=inpaint_records,
                        config=config)


def edit_textures(z0: torch.Tensor, edit_cond, image_d, mesh: Mesh, camera: Camera,
                  texture_net, ae: AutoEncoder, decoders: PbrDecoderSet,
                  perceptual: PerceptualMetric, schedule: NoiseSchedule,
                  config: TexgenConfig, seed: int) -> TexgenResult:
    """Re-noise an existing texture latent partway and re-sample under the
    edit condition with the loosened guidance preset."""
    preset = config.edit_preset()
    if isinstance(image_d, np.ndarray):
        image_d = torch.from_numpy(image_d)
    image_d = image_d.float()

    coverage = compute_coverage(mesh, camera)
    tex_size = (z0.shape[-2] * ae.downsample, z0.shape[-1] * ae.downsample)
    sampler = build_texel_sampler(coverage, tex_size)
    energies = GuidanceEnergies(sampler, image_d, coverage.mask, ae, perceptual, preset)

    t_list = schedule.sampling_timesteps(preset.steps_total)
    n_redo = max(1, int(round(preset.edit_strength * preset.steps_total)))
    start = preset.steps_total - n_redo
    t_start = t_list[start]

    g = torch_rng(seed, "edit-noise")
    eps0 = torch.randn(z0.shape, generator=g)
    abar = schedule.alpha_bar(t_start)
    z_t = LatentCode(abar**0.5 * z0 + (1 - abar) ** 0.5 * eps0, t_start)

    guided_audit: list = []

    def epsilon(net, latent: LatentCode, t: int, c):
        return guided_epsilon(net, latent, t, c, preset, energies, schedule,
                              audit=guided_audit)

    hooks = SamplerHooks(epsilon_override=epsilon)
    sub_schedule_ts = t_list[start:]

    with torch.no_grad():
        z = z_t
        for i, t in enumerate(sub_schedule_ts):
            t_next = sub_schedule_ts[i + 1] if i + 1 < len(sub_schedule_ts) else CLEAN_T
            eps = epsilon(texture_net, z, t, edit_cond)
            from .diffusion.sampler import ddim_step
            z = ddim_step(z, eps, t, t_next, schedule)

    pbr = decode_pbr_set(ae, decoders, z.values)
    uv_full = np.ones(pbr.resolution, dtype=bool)
    vis = VisibilityMask.build(uv_full, coverage.mask, ae.downsample)
    return TexgenResult(pbr=pbr, z0=z.values, partial_texture=pbr.diffuse, visibility=vis,
                        guided_audit=guided_audit, config=preset)
