"""Training loops for the autoencoder, the denoiser and the PBR decoders,
plus dataset-to-tensor assembly.

Loops are deterministic per seed: model init, batch order and noise all
come from generators derived from the given seed.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from ..diffusion.core import NoiseSchedule
from ..errors import NumericError
from ..rngs import derive_seed
from ..synth.dataset import Dataset
from ..synth.identity import render_region_map
from .autoencoder import AutoEncoder, PbrDecoderSet
from .conditioning import COND_LEN, Vocabulary
from .perceptual import PerceptualMetric
from .unet import DenoiserNetwork, UNetSpec

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0
    state: dict = field(default_factory=dict)  # trainer state for resume

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def _trainer_state(model, opt, g: torch.Generator, step: int) -> dict:
    return {"model": model.state_dict(), "optimizer": opt.state_dict(),
            "generator": g.get_state(), "step": step}


def _maybe_resume(model, opt, g: torch.Generator, resume: dict | None) -> int:
    if resume is None:
        return 0
    model.load_state_dict(resume["model"])
    opt.load_state_dict(resume["optimizer"])
    g.set_state(resume["generator"])
    return int(resume["step"])


# -- dataset assembly --------------------------------------------------------


def _train_range(dataset: Dataset, holdout: int) -> range:
    n = len(dataset)
    if holdout >= n:
        raise ValueError(f"holdout {holdout} >= dataset size {n}")
    return range(n - holdout)


def holdout_range(dataset: Dataset, holdout: int) -> range:
    n = len(dataset)
    return range(n - holdout, n)


def _cond_ids(vocab: Vocabulary, tokens, uv_mode: bool = False) -> list:
    return list(vocab.encode(tokens, uv_mode=uv_mode).tokens)


def assemble_image_training_set(dataset: Dataset, vocab: Vocabulary, holdout: int):
    """Lit renders and diffuse-only renders with attribute tokens, plus
    palette-rendered semantic masks under the null condition."""
    n_rigs = max(1, len(dataset.manifest.get("rig_names", ["r"])))
    images, conds = [], []
    null_ids = list(vocab.null().tokens)
    for i in _train_range(dataset, holdout):
        ident = dataset.identity(i)
        ids = _cond_ids(vocab, ident.annotations.values())
        for vi, view in enumerate(dataset.iter_views(i)):
            images.append(view.image)
            conds.append(ids)
            if vi % n_rigs == 0:  # one per camera, not per rig
                images.append(view.gt_diffuse)
                conds.append(ids)
                images.append(render_region_map(view.mask))
                conds.append(null_ids)
    x = torch.from_numpy(np.stack(images)).float()
    c = torch.tensor(conds, dtype=torch.long)
    return x, c


def assemble_texture_training_set(dataset: Dataset, vocab: Vocabulary, holdout: int):
    """Diffuse UV maps with the texture-space token prepended."""
    images, conds = [], []
    for i in _train_range(dataset, holdout):
        ident = dataset.identity(i)
        images.append(ident.textures.diffuse.values)
        conds.append(_cond_ids(vocab, ident.annotations.values(), uv_mode=True))
    x = torch.from_numpy(np.stack(images)).float()
    c = torch.tensor(conds, dtype=torch.long)
    return x, c


def assemble_pbr_training_set(dataset: Dataset, holdout: int):
    diffuse, targets = [], {"normal": [], "specular": [], "roughness": []}
    for i in _train_range(dataset, holdout):
        tex = dataset.identity(i).textures
        diffuse.append(tex.diffuse.values)
        targets["normal"].append(tex.normal.values)
        targets["specular"].append(tex.specular.values)
        targets["roughness"].append(tex.roughness.values)
    x = torch.from_numpy(np.stack(diffuse)).float()
    y = {k: torch.from_numpy(np.stack(v)).float() for k, v in targets.items()}
    return x, y


# -- loops -------------------------------------------------------------------


def train_autoencoder(images: torch.Tensor, steps: int, batch_size: int, lr: float,
                      seed: int, image_size: int = 64, channels: tuple = (28, 40, 56),
                      resume: dict | None = None) -> tuple[AutoEncoder, TrainResult]:
    torch.manual_seed(derive_seed(seed, "ae-init"))
    ae = AutoEncoder(image_size=image_size, channels=channels)
    g = torch.Generator().manual_seed(derive_seed(seed, "ae-batches"))
    opt = torch.optim.Adam(ae.parameters(), lr=lr)
    start = _maybe_resume(ae, opt, g, resume)
    result = TrainResult()
    t0 = time.time()
    for step in range(start, steps):
        idx = torch.randint(0, len(images), (batch_size,), generator=g)
        x = images[idx]
        recon = ae.decode_diffuse(ae.encode(x))
        loss = (recon - x).square().mean()
        if not torch.isfinite(loss):
            raise NumericError(f"autoencoder loss non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.losses.append(float(loss.detach()))
        if step % max(1, steps // 10) == 0:
            log.info("ae step %d/%d loss %.5f", step, steps, loss)
    result.state = _trainer_state(ae, opt, g, steps)
    calib = images[torch.randint(0, len(images), (min(256, len(images)),), generator=g)]
    ae.calibrate_latent_scale(calib)
    ae.eval()
    result.steps = steps
    result.seconds = time.time() - t0
    return ae, result


@torch.no_grad()
def encode_all(ae: AutoEncoder, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    outs = [ae.encode(images[i:i + batch_size]) for i in range(0, len(images), batch_size)]
    return torch.cat(outs)


def train_denoiser(ae: AutoEncoder, images: torch.Tensor, cond_ids: torch.Tensor,
                   schedule: NoiseSchedule, vocab: Vocabulary, steps: int,
                   batch_size: int, lr: float, seed: int, null_drop: float = 0.15,
                   spec: UNetSpec | None = None,
                   resume: dict | None = None) -> tuple[DenoiserNetwork, TrainResult]:
    torch.manual_seed(derive_seed(seed, "unet-init"))
    net = DenoiserNetwork(spec or UNetSpec(), vocab)
    g = torch.Generator().manual_seed(derive_seed(seed, "unet-batches"))
    opt = torch.optim.Adam(net.parameters(), lr=lr)
    start = _maybe_resume(net, opt, g, resume)
    latents = encode_all(ae, images)
    abars = torch.from_numpy(schedule.alpha_bars).float()
    null_row = torch.zeros(COND_LEN, dtype=torch.long)
    result = TrainResult()
    t0 = time.time()
    for step in range(start, steps):
        idx = torch.randint(0, len(latents), (batch_size,), generator=g)
        z0 = latents[idx]
        ids = cond_ids[idx].clone()
        drop = torch.rand(batch_size, generator=g) < null_drop
        ids[drop] = null_row
        t = torch.randint(0, schedule.t_train, (batch_size,), generator=g)
        eps = torch.randn(z0.shape, generator=g)
        ab = abars[t][:, None, None, None]
        z_t = ab.sqrt() * z0 + (1 - ab).sqrt() * eps
        pred = net.forward(z_t, t, ids)
        loss = (eps - pred).square().mean()
        if not torch.isfinite(loss):
            raise NumericError(f"denoiser loss non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.losses.append(float(loss.detach()))
        if step % max(1, steps // 10) == 0:
            log.info("unet step %d/%d loss %.5f", step, steps, loss)
    result.state = _trainer_state(net, opt, g, steps)
    net.eval()
    result.steps = steps
    result.seconds = time.time() - t0
    return net, result


def train_pbr_decoders(ae: AutoEncoder, diffuse: torch.Tensor, targets: dict,
                       steps: int, batch_size: int, lr: float, seed: int,
                       lambda_weight: float = 1.0,
                       perceptual: PerceptualMetric | None = None,
                       channels: tuple = (28, 40, 56),
                       resume: dict | None = None) -> tuple[PbrDecoderSet, TrainResult]:
    """Decoder-head training over the frozen encoder.

    Loss per head: ||head(E(diffuse)) - target||^2 + lambda * perceptual.
    """
    torch.manual_seed(derive_seed(seed, "pbr-init"))
    decoders = PbrDecoderSet(latent_channels=ae.latent_channels, channels=channels)
    if perceptual is None and lambda_weight > 0:
        perceptual = PerceptualMetric()
    g = torch.Generator().manual_seed(derive_seed(seed, "pbr-batches"))
    opt = torch.optim.Adam(decoders.parameters(), lr=lr)
    start = _maybe_resume(decoders, opt, g, resume)
    for p in ae.parameters():
        p.requires_grad_(False)
    latents = encode_all(ae, diffuse)
    result = TrainResult()
    t0 = time.time()
    for step in range(start, steps):
        idx = torch.randint(0, len(latents), (batch_size,), generator=g)
        z = latents[idx]
        loss = torch.zeros(())
        for name, head in decoders.heads.items():
            out = head(z * ae.latent_scale)
            tgt = targets[name][idx]
            loss = loss + (out - tgt).square().mean()
            if lambda_weight > 0:
                loss = loss + lambda_weight * perceptual(out, tgt)
        if not torch.isfinite(loss):
            raise NumericError(f"decoder loss non-finite at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        result.losses.append(float(loss.detach()))
        if step % max(1, steps // 10) == 0:
            log.info("pbr step %d/%d loss %.5f", step, steps, loss)
    result.state = _trainer_state(decoders, opt, g, steps)
    decoders.eval()
    result.steps = steps
    result.seconds = time.time() - t0
    return decoders, result


def decoder_loss(decoders: PbrDecoderSet, ae: AutoEncoder, diffuse: torch.Tensor,
                 targets: dict, lambda_weight: float = 1.0,
                 perceptual: PerceptualMetric | None = None) -> torch.Tensor:
    """Held-out value of the decoder training objective."""
    if perceptual is None and lambda_weight > 0:
        perceptual = PerceptualMetric()
    with torch.no_grad():
        z = encode_all(ae, diffuse)
        loss = torch.zeros(())
        for name, head in decoders.heads.items():
            out = head(z * ae.latent_scale)
            loss = loss + (out - targets[name]).square().mean()
            if lambda_weight > 0:
                loss = loss + lambda_weight * perceptual(out, targets[name])
    return loss
