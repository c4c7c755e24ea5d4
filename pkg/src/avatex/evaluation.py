"""Shared metric battery: used by the test suite and by `avatex eval`."""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch

from .delight import DelightConfig, SemanticMask, delight, extract_trajectory_features
from .diffusion.core import LatentCode, NoiseSchedule
from .diffusion.sampler import ddim_invert, sample
from .errors import NumericError


def psnr(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    mse = float(((a - b) ** 2).mean())
    return 10.0 * np.log10(1.0 / max(mse, 1e-12))


def autoencoder_psnr(ae, images: torch.Tensor) -> float:
    with torch.no_grad():
        recon = ae.decode_diffuse(ae.encode(images))
    return psnr(recon.numpy(), images.numpy())


def inversion_psnrs(net, ae, schedule: NoiseSchedule, images: torch.Tensor,
                    steps: int = 20) -> list[float]:
    """Per-image invert-then-sample reconstruction PSNR."""
    out = []
    null = net.null_condition
    with torch.no_grad():
        for i in range(len(images)):
            x = images[i]
            z0 = ae.encode(x)
            z_T = ddim_invert(LatentCode(z0, 0), net, null, steps, schedule)
            z_rec = sample(net, z_T, null, steps, schedule)
            x_rec = ae.decode_diffuse(z_rec.values)
            out.append(psnr(x_rec.numpy(), x.numpy()))
    return out


def _majority_downsample(labels: np.ndarray, size: int) -> np.ndarray:
    """Label image -> size x size grid, each cell the modal label."""
    h, w = labels.shape
    fy, fx = h // size, w // size
    blocks = labels[: size * fy, : size * fx].reshape(size, fy, size, fx)
    out = np.zeros((size, size), dtype=labels.dtype)
    for i in range(size):
        for j in range(size):
            vals, counts = np.unique(blocks[i, :, j, :], return_counts=True)
            out[i, j] = vals[counts.argmax()]
    return out


def _intra_region_std(tokens: torch.Tensor, region_ids: np.ndarray) -> float | None:
    """Token-count-weighted mean over regions of the per-region feature std.

    tokens: (1, N, C); region_ids: (N,).  Regions with fewer than 2 tokens
    are skipped; returns None if nothing qualifies.
    """
    feats = tokens[0].detach().numpy()
    total_w = 0.0
    acc = 0.0
    for rid in np.unique(region_ids):
        sel = region_ids == rid
        if sel.sum() < 2:
            continue
        std = feats[sel].std(axis=0, ddof=0).mean()
        acc += std * sel.sum()
        total_w += sel.sum()
    if total_w == 0:
        return None
    return acc / total_w


def region_std_ratio(image, mask: SemanticMask, net, ae, schedule: NoiseSchedule,
                     config: DelightConfig | None = None) -> dict:
    """Criterion statistic behind the lighting-in-attention claim: the
    mask trajectory's q/k features should vary much less within semantic
    regions than the image trajectory's.

    Returns {"median_ratio": float, "ratios": {(t, layer, kind): ratio}}.
    """
    from .delight import resolve_layers

    config = config or DelightConfig()
    _, qk_layers = resolve_layers(net, config)
    spec = {(l, "query") for l in qk_layers} | {(l, "key") for l in qk_layers}
    null = net.null_condition

    if isinstance(image, np.ndarray):
        image = torch.from_numpy(image).float()
    with torch.no_grad():
        z_img = ae.encode(image)
        zT_img = ddim_invert(LatentCode(z_img, 0), net, null, config.steps, schedule)
        store_img, _ = extract_trajectory_features(zT_img, net, schedule, config.steps, spec)
        z_mask = ae.encode(torch.from_numpy(mask.to_rgb()))
        zT_mask = ddim_invert(LatentCode(z_mask, 0), net, null, config.steps, schedule)
        store_mask, _ = extract_trajectory_features(zT_mask, net, schedule, config.steps, spec)

    res_per_layer = net.up_layer_resolution
    region_cache = {}
    ratios = {}
    for (t, layer, kind) in store_img.keys():
        r = res_per_layer[layer]
        if r not in region_cache:
            region_cache[r] = _majority_downsample(mask.labels, r).ravel()
        regions = region_cache[r]
        s_img = _intra_region_std(store_img.get(t, layer, kind), regions)
        s_mask = _intra_region_std(store_mask.get(t, layer, kind), regions)
        if s_img is None or s_mask is None or s_img <= 1e-12:
            continue
        ratios[(t, layer, kind)] = s_mask / s_img
    if not ratios:
        raise NumericError("no (t, layer) pair produced a usable region statistic")
    return {"median_ratio": float(np.median(list(ratios.values()))), "ratios": ratios}


def delight_efficacy(views, net, ae, schedule: NoiseSchedule,
                     config: DelightConfig | None = None, palette=None) -> dict:
    """MSE against ground-truth diffuse renders, before vs after delighting.

    views: iterable of (lit_image, gt_diffuse, mask_labels) numpy triples.
    """
    config = config or DelightConfig()
    from .synth.identity import REGION_PALETTE

    palette = palette or REGION_PALETTE
    rows = []
    for lit, gt, labels in views:
        mask = SemanticMask(labels, palette)
        result = delight(lit, mask, net, ae, schedule, config)
        mse_in = float(((lit - gt) ** 2).mean())
        mse_out = float(((result.image_d - gt) ** 2).mean())
        rows.append({"mse_in": mse_in, "mse_out": mse_out})
    improved = [r["mse_out"] < r["mse_in"] for r in rows]
    reductions = [1.0 - r["mse_out"] / max(r["mse_in"], 1e-12) for r in rows]
    return {
        "cases": rows,
        "improved_fraction": float(np.mean(improved)),
        "mean_reduction": float(np.mean(reductions)),
    }


def decoder_metrics(decoders, ae, diffuse: torch.Tensor, targets: dict) -> dict:
    """Held-out PBR decoder quality: normal angular error (deg), map MSEs."""
    with torch.no_grad():
        z = ae.encode(diffuse)
        pred_n = decoders.decode(ae, z, "normal").numpy()
        pred_s = decoders.decode(ae, z, "specular").numpy()
        pred_r = decoders.decode(ae, z, "roughness").numpy()
    gt_n = targets["normal"].numpy()

    def vecs(m):
        v = m * 2.0 - 1.0
        return v / np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)

    cosang = np.clip((vecs(pred_n) * vecs(gt_n)).sum(axis=1), -1.0, 1.0)
    angular = np.degrees(np.arccos(cosang)).mean()
    return {
        "normal_angular_error_deg": float(angular),
        "specular_mse": float(((pred_s - targets["specular"].numpy()) ** 2).mean()),
        "roughness_mse": float(((pred_r - targets["roughness"].numpy()) ** 2).mean()),
    }


def run_eval(config, models, dataset, out_path=None) -> dict:
    """Battery for `avatex eval`: autoencoder, inversion, delighting,
    decoders.  Writes a JSON report when out_path is given."""
    from .nn.training import assemble_pbr_training_set, holdout_range

    t0 = time.time()
    holdout = config.synth.holdout
    ho_ids = list(holdout_range(dataset, holdout))

    ho_images, ho_textures, dce_views = [], [], []
    for i in ho_ids:
        ident = dataset.identity(i)
        ho_textures.append(ident.textures.diffuse.values)
        for v in dataset.iter_views(i):
            ho_images.append(v.image)
            if len(dce_views) < 8:
                dce_views.append((v.image, v.gt_diffuse, v.mask))
    images_t = torch.from_numpy(np.stack(ho_images)).float()
    textures_t = torch.from_numpy(np.stack(ho_textures)).float()

    report = {
        "config_fingerprint": config.fingerprint(),
        "arch_fingerprint": config.arch_fingerprint(),
        "ae_psnr_images": autoencoder_psnr(models.ae, images_t[:32]),
        "ae_psnr_textures": autoencoder_psnr(models.ae, textures_t),
    }
    inv = inversion_psnrs(models.image_net, models.ae, models.schedule,
                          images_t[:16], steps=config.delight.steps)
    report["inversion_psnr_mean"] = float(np.mean(inv))
    report["inversion_psnr_min"] = float(np.min(inv))

    from .pipeline import delight_config
    dce = delight_efficacy(dce_views, models.image_net, models.ae, models.schedule,
                           delight_config(config))
    report["delight_improved_fraction"] = dce["improved_fraction"]
    report["delight_mean_reduction"] = dce["mean_reduction"]

    from .synth.identity import REGION_PALETTE
    lit, gt, labels = dce_views[0]
    stat = region_std_ratio(lit, SemanticMask(labels, REGION_PALETTE),
                            models.image_net, models.ae, models.schedule)
    report["region_std_median_ratio"] = stat["median_ratio"]

    diffuse, targets = assemble_pbr_training_set(dataset, 0)
    sel = ho_ids
    dm = decoder_metrics(models.decoders, models.ae,
                         diffuse[sel], {k: v[sel] for k, v in targets.items()})
    report.update(dm)
    report["seconds"] = round(time.time() - t0, 2)

    if out_path is not None:
        Path(out_path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report
