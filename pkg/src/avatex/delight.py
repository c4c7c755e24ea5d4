"""Lighting removal by attention feature replacement.

Shading, shadows and highlights show up as within-region variation of the
denoiser's self-attention query/key features, while a flat-color semantic
mask of the same layout produces q/k features with no such variation.
Replaying the image's own sampling chain with its residual features kept
but q/k taken from the mask's chain therefore reproduces the content with
the lighting variation flattened out.

Procedure: DDIM-invert the image and the palette-rendered mask under the
null condition; record res features from the image's denoising pass and
q/k from the mask's pass (or its inversion pass, switchable); denoise the
image's inverted latent once more with both injected; decode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .diffusion.core import LatentCode, NoiseSchedule
from .diffusion.sampler import SamplerHooks, ddim_invert, sample
from .errors import ConfigError, PhaseError
from .nn.features import FeaturePassSpec, FeatureStore


@dataclass(frozen=True)
class SemanticMask:
    """Per-pixel region labels plus display colors for each region."""

    labels: np.ndarray            # (H, W) integer region ids
    palette: dict                 # region id -> (r, g, b) in [0,1]

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels))
        present = set(np.unique(self.labels).tolist())
        missing = present - set(self.palette)
        if missing:
            raise ConfigError(f"labels {sorted(missing)} have no palette entry")
        colors = np.asarray([self.palette[k] for k in sorted(self.palette)])
        if len(colors) > 1:
            d = ((colors[:, None] - colors[None]) ** 2).sum(-1)
            np.fill_diagonal(d, np.inf)
            if d.min() < 1e-8:
                raise ConfigError("palette colors must be distinct")

    def to_rgb(self) -> np.ndarray:
        lut = np.zeros((max(self.palette) + 1, 3), dtype=np.float32)
        for rid, rgb in self.palette.items():
            lut[rid] = rgb
        return lut[self.labels].transpose(2, 0, 1).copy()

    def requantize(self, rgb: np.ndarray) -> np.ndarray:
        """Nearest-palette-color labeling of an RGB image (3, H, W)."""
        ids = sorted(self.palette)
        colors = np.asarray([self.palette[k] for k in ids], dtype=np.float32)  # (K, 3)
        dist = ((rgb[None] - colors[:, :, None, None]) ** 2).sum(1)            # (K, H, W)
        return np.asarray(ids, dtype=self.labels.dtype)[dist.argmin(0)]


def _kmeans_colors(pixels: np.ndarray, k: int, seed: int, iters: int = 30):
    """Plain seeded k-means over RGB pixels; returns (labels, centers)."""
    rng = np.random.default_rng(seed)
    centers = pixels[rng.choice(len(pixels), size=k, replace=len(pixels) < k)]
    labels = np.zeros(len(pixels), dtype=np.int64)
    for _ in range(iters):
        d = ((pixels[:, None] - centers[None]) ** 2).sum(-1)
        labels = d.argmin(1)
        for j in range(k):
            sel = labels == j
            if sel.any():
                centers[j] = pixels[sel].mean(0)
    return labels, centers


def segment(image, method: str = "color_quantize", k: int = 6,
            mask_labels: np.ndarray | None = None, palette: dict | None = None,
            seed: int = 0) -> SemanticMask:
    """Build a SemanticMask either from provided labels or by seeded
    color quantization of the image."""
    if method == "provided_file":
        if mask_labels is None:
            raise ConfigError("provided_file segmentation needs mask labels")
        if palette is None:
            from .synth.identity import REGION_PALETTE
            palette = REGION_PALETTE
        if isinstance(image, torch.Tensor):
            image = image.numpy()
        if mask_labels.shape != tuple(np.asarray(image).shape[-2:]):
            raise ConfigError(f"mask resolution {mask_labels.shape} does not match image")
        return SemanticMask(mask_labels, palette)
    if method != "color_quantize":
        raise ConfigError(f"unknown segmentation method {method!r}")
    if k < 2:
        raise ConfigError("color_quantize needs k >= 2")
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    image = np.asarray(image, dtype=np.float32)
    c, h, w = image.shape
    pixels = image.reshape(c, -1).T.copy()
    labels, centers = _kmeans_colors(pixels, k, seed)
    # Order regions by center luminance; drop empty/duplicate clusters.
    luma = centers @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
    order = np.argsort(luma, kind="stable")
    remap = {}
    palette_out = {}
    next_id = 0
    for j in order:
        if not (labels == j).any():
            continue
        color = tuple(float(x) for x in centers[j])
        if any(sum((a - b) ** 2 for a, b in zip(color, prev)) < 1e-8
               for prev in palette_out.values()):
            # merge into the existing identical region
            target = next(rid for rid, prev in palette_out.items()
                          if sum((a - b) ** 2 for a, b in zip(color, prev)) < 1e-8)
            remap[j] = target
            continue
        remap[j] = next_id
        palette_out[next_id] = color
        next_id += 1
    out = np.vectorize(remap.get)(labels).reshape(h, w)
    return SemanticMask(out.astype(np.uint8), palette_out)


@dataclass(frozen=True)
class DelightConfig:
    steps: int = 20
    res_layers: tuple | None = None    # None: all upsampling layers
    qk_layers: tuple | None = None     # None: attention layers outside the excluded tail
    exclude_last_k: int = 2            # final upsampling layers never get q/k injection
    mask_source: str = "denoise"       # "denoise" (resample pass) or "invert"
    self_inject: bool = False          # ablation: q/k from the image's own pass


def resolve_layers(net, config: DelightConfig) -> tuple[tuple, tuple]:
    n = net.num_up_layers
    res_layers = tuple(config.res_layers) if config.res_layers is not None \
        else tuple(range(n))
    excluded = set(range(n - config.exclude_last_k, n))
    if config.qk_layers is not None:
        qk_layers = tuple(config.qk_layers)
    else:
        qk_layers = tuple(l for l in net.injectable_layers("query") if l not in excluded)
    if set(qk_layers) & excluded:
        raise ConfigError(
            f"q/k injection layers {sorted(set(qk_layers) & excluded)} fall inside the "
            f"excluded final {config.exclude_last_k} upsampling layers")
    for l in res_layers + qk_layers:
        if not 0 <= l < n:
            raise ConfigError(f"layer index {l} out of range (network has {n} up layers)")
    return res_layers, qk_layers


def extract_trajectory_features(z_T: LatentCode, net, schedule: NoiseSchedule,
                                steps: int, spec) -> tuple[FeatureStore, LatentCode]:
    """Denoise z_T under the null condition, recording the requested
    (layer, kind) features at every step; returns the frozen store and the
    pass's final clean latent."""
    store = FeatureStore()
    hooks = SamplerHooks(feature_spec=FeaturePassSpec.recording(spec, store))
    z0 = sample(net, z_T, net.null_condition, steps, schedule, hooks=hooks)
    return store.freeze(), z0


@dataclass(frozen=True)
class DelightResult:
    image_d: np.ndarray            # (3, H, W) float32 in [0,1]
    reconstruction: np.ndarray     # plain resample of the image (diagnostic)
    res_layers: tuple
    qk_layers: tuple
    config: DelightConfig = field(repr=False)


def delight(image, mask: SemanticMask, net, ae, schedule: NoiseSchedule,
            config: DelightConfig | None = None) -> DelightResult:
    """Full lighting-removal procedure; see module docstring.

    Any sub-step failure is wrapped in PhaseError with one of the tags
    invert-I | invert-S | extract | inject-sample | decode.
    """
    config = config or DelightConfig()
    res_layers, qk_layers = resolve_layers(net, config)
    res_spec = {(l, "res") for l in res_layers}
    qk_spec = {(l, "query") for l in qk_layers} | {(l, "key") for l in qk_layers}
    null = net.null_condition
    steps = config.steps

    if isinstance(image, np.ndarray):
        image = torch.from_numpy(image)
    image = image.float()

    with torch.no_grad():
        try:
            z_img = ae.encode(image)
            zT_img = ddim_invert(LatentCode(z_img, 0), net, null, steps, schedule)
        except Exception as e:  # noqa: BLE001
            raise PhaseError("invert-I", e) from e

        if not config.self_inject:
            try:
                z_mask = ae.encode(torch.from_numpy(mask.to_rgb()))
                zT_mask = ddim_invert(LatentCode(z_mask, 0), net, null, steps, schedule)
            except Exception as e:  # noqa: BLE001
                raise PhaseError("invert-S", e) from e

        try:
            record_img = res_spec | (qk_spec if config.self_inject else set())
            store_img, z_recon = extract_trajectory_features(
                zT_img, net, schedule, steps, record_img)
            if config.self_inject:
                store_qk = store_img
                source = store_img
            elif config.mask_source == "denoise":
                store_qk, _ = extract_trajectory_features(zT_mask, net, schedule, steps, qk_spec)
                source = FeatureStore.merged(store_img, store_qk)
            elif config.mask_source == "invert":
                store_qk = FeatureStore()
                ddim_invert(LatentCode(z_mask, 0), net, null, steps, schedule,
                            feature_spec=FeaturePassSpec.recording(qk_spec, store_qk))
                store_qk.freeze()
                source = FeatureStore.merged(store_img, store_qk)
            else:
                raise ConfigError(f"unknown mask_source {config.mask_source!r}")
        except PhaseError:
            raise
        except Exception as e:  # noqa: BLE001
            raise PhaseError("extract", e) from e

        try:
            hooks = SamplerHooks(feature_spec=FeaturePassSpec.injecting(
                res_spec | qk_spec, source))
            z_delit = sample(net, zT_img, null, steps, schedule, hooks=hooks)
        except Exception as e:  # noqa: BLE001
            raise PhaseError("inject-sample", e) from e

        try:
            image_d = ae.decode_diffuse(z_delit.values).numpy().astype(np.float32)
            recon = ae.decode_diffuse(z_recon.values).numpy().astype(np.float32)
        except Exception as e:  # noqa: BLE001
            raise PhaseError("decode", e) from e

    return DelightResult(image_d=image_d, reconstruction=recon,
                         res_layers=res_layers, qk_layers=qk_layers, config=config)
