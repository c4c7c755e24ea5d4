"""Procedural identity factory: aligned PBR texture sets with exact
lighting-free diffuse maps, UV region labels, head parameters and
attribute annotations.  Everything is a pure function of the seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from ..geometry.head import ParametricHead
from ..geometry.raster import uv_coverage
from ..maps import PbrTextureSet, UvTexture
from ..nn.conditioning import ACCESSORY_TOKENS, AGE_TOKENS, TONE_TOKENS

REGION_BACKGROUND, REGION_SKIN, REGION_LIPS, REGION_EYES, REGION_BROWS = range(5)
REGION_NAMES = ("background", "skin", "lips", "eyes", "brows")

# Display colors used when a region map is fed through the autoencoder.
REGION_PALETTE = {
    REGION_BACKGROUND: (0.0, 0.0, 0.0),
    REGION_SKIN: (0.72, 0.58, 0.48),
    REGION_LIPS: (0.82, 0.28, 0.30),
    REGION_EYES: (0.25, 0.45, 0.85),
    REGION_BROWS: (0.20, 0.55, 0.25),
}

TONE_RGB = {
    "tone:porcelain": (0.93, 0.80, 0.71),
    "tone:fair": (0.87, 0.69, 0.57),
    "tone:olive": (0.76, 0.60, 0.46),
    "tone:tan": (0.62, 0.46, 0.34),
    "tone:brown": (0.46, 0.33, 0.25),
    "tone:deep": (0.33, 0.23, 0.18),
}

_NOISE_AMP = {"age:young": 0.05, "age:adult": 0.08, "age:elder": 0.11}

_region_map_cache: dict = {}


def _uv_grids(tex_size: int):
    c = (np.arange(tex_size) + 0.5) / tex_size
    u, v = np.meshgrid(c, c, indexing="xy")
    return u, v


def region_map_for_head(head: ParametricHead, tex_size: int) -> np.ndarray:
    """Static UV region labeling shared by all identities of one head."""
    key = (head.fingerprint(), tex_size)
    if key in _region_map_cache:
        return _region_map_cache[key]
    tri_id, _ = uv_coverage(head.template, (tex_size, tex_size))
    u, v = _uv_grids(tex_size)
    labels = np.where(tri_id >= 0, REGION_SKIN, REGION_BACKGROUND).astype(np.uint8)

    def ellipse(cu, cv, ru, rv):
        return ((u - cu) / ru) ** 2 + ((v - cv) / rv) ** 2 <= 1.0

    covered = labels == REGION_SKIN
    brows = (ellipse(0.42, 0.335, 0.055, 0.018) | ellipse(0.58, 0.335, 0.055, 0.018))
    eyes = (ellipse(0.42, 0.40, 0.045, 0.028) | ellipse(0.58, 0.40, 0.045, 0.028))
    lips = ellipse(0.50, 0.64, 0.075, 0.035)
    labels[covered & brows] = REGION_BROWS
    labels[covered & eyes] = REGION_EYES
    labels[covered & lips] = REGION_LIPS
    _region_map_cache[key] = labels
    return labels


def render_region_map(labels: np.ndarray, palette: dict = REGION_PALETTE) -> np.ndarray:
    """Region ids -> flat-color RGB image (3, H, W) float32."""
    lut = np.zeros((max(palette) + 1, 3), dtype=np.float32)
    for rid, rgb in palette.items():
        lut[rid] = rgb
    return lut[labels].transpose(2, 0, 1).copy()


def value_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    """Bilinearly upsampled random grid in [0, 1]."""
    grid = rng.random((cells, cells)).astype(np.float32)
    return cv2.resize(grid, (size, size), interpolation=cv2.INTER_LINEAR)


def fractal_noise(rng: np.random.Generator, size: int,
                  cells: tuple = (6, 12, 20), amps: tuple = (1.0, 0.45, 0.2)) -> np.ndarray:
    """Multi-octave value noise, zero-centered, max-normalized."""
    total = np.zeros((size, size), dtype=np.float32)
    for c, a in zip(cells, amps):
        total += a * (value_noise(rng, size, c) - 0.5)
    return total / sum(amps) * 2.0


@dataclass(frozen=True)
class SyntheticIdentity:
    seed: int
    beta: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    textures: PbrTextureSet
    uv_region_map: np.ndarray  # (T, T) uint8
    annotations: dict          # skin_tone / age_band / accessory tokens

    @property
    def tokens(self) -> tuple:
        return (self.annotations["skin_tone"], self.annotations["age_band"],
                self.annotations["accessory"])


def generate_identity(seed: int, head: ParametricHead, tex_size: int = 64) -> SyntheticIdentity:
    rng = np.random.default_rng(seed)
    labels = region_map_for_head(head, tex_size)
    u, v = _uv_grids(tex_size)

    tone = TONE_TOKENS[rng.integers(len(TONE_TOKENS))]
    age = AGE_TOKENS[rng.integers(len(AGE_TOKENS))]
    accessory = ACCESSORY_TOKENS[rng.integers(len(ACCESSORY_TOKENS))]

    base_rgb = np.asarray(TONE_RGB[tone]) + rng.uniform(-0.03, 0.03, 3)
    amp = _NOISE_AMP[age]
    tone_noise = fractal_noise(rng, tex_size)

    skin = base_rgb[None, None, :] * (1.0 + amp * tone_noise[:, :, None])

    wrinkles = np.zeros((tex_size, tex_size), dtype=np.float32)
    if age == "age:elder":
        freq = rng.uniform(22.0, 30.0)
        phase = rng.uniform(0, 2 * np.pi)
        window = np.exp(-((v - 0.45) ** 2) / 0.06)
        wrinkles = (0.5 * np.sin(freq * 2 * np.pi * v + phase) * window).astype(np.float32)
        skin *= (1.0 - 0.06 * np.clip(wrinkles, 0, None))[:, :, None]

    diffuse = skin.copy()
    lip_rgb = np.clip(base_rgb * np.array([1.10, 0.55, 0.55]) + np.array([0.08, 0.0, 0.02]), 0, 1)
    brow_rgb = np.clip(base_rgb * 0.35, 0, 1)
    iris = rng.choice(np.array([[0.25, 0.16, 0.10], [0.16, 0.30, 0.45], [0.18, 0.34, 0.22]]))
    diffuse[labels == REGION_LIPS] = lip_rgb * (1 + 0.4 * amp *
                                                tone_noise[labels == REGION_LIPS, None])
    diffuse[labels == REGION_BROWS] = brow_rgb * (1 + 0.6 * amp *
                                                  tone_noise[labels == REGION_BROWS, None])
    eye_px = labels == REGION_EYES
    diffuse[eye_px] = np.array([0.88, 0.88, 0.90])
    pupil = (((u - 0.42) ** 2 + (v - 0.40) ** 2) <= 0.022**2) | \
        (((u - 0.58) ** 2 + (v - 0.40) ** 2) <= 0.022**2)
    diffuse[eye_px & pupil] = iris

    # Freckle/mole decals on skin.
    n_decals = int(rng.integers(0, 26))
    skin_rows, skin_cols = np.nonzero(labels == REGION_SKIN)
    for _ in range(n_decals):
        k = rng.integers(len(skin_rows))
        r, c = skin_rows[k], skin_cols[k]
        rr = slice(max(r - 1, 0), min(r + 1, tex_size))
        cc = slice(max(c - 1, 0), min(c + 1, tex_size))
        diffuse[rr, cc] *= rng.uniform(0.6, 0.8)

    if accessory == "acc:headband":
        band = (v >= 0.10) & (v <= 0.17) & (labels != REGION_BACKGROUND)
        hue = rng.choice(np.array([[0.75, 0.2, 0.2], [0.2, 0.3, 0.75], [0.72, 0.62, 0.15]]))
        diffuse[band] = hue * (1 + 0.2 * amp * tone_noise[band, None])
    elif accessory == "acc:paint":
        blob = (((u - rng.uniform(0.36, 0.40)) ** 2 + (v - 0.52) ** 2) <= 0.055**2) & \
            (labels == REGION_SKIN)
        hue = rng.choice(np.array([[0.2, 0.55, 0.8], [0.8, 0.45, 0.1], [0.55, 0.2, 0.7]]))
        diffuse[blob] = hue

    diffuse[labels == REGION_BACKGROUND] = 0.0
    diffuse = np.clip(diffuse, 0.0, 1.0).astype(np.float32).transpose(2, 0, 1)

    # Height field -> tangent-space normal map; flat normal = (0.5, 0.5, 1).
    height = 0.6 * fractal_noise(rng, tex_size, cells=(12, 24), amps=(1.0, 0.5)) + 0.8 * wrinkles
    slope = {"age:young": 0.6, "age:adult": 1.0, "age:elder": 1.6}[age]
    gy, gx = np.gradient(height * slope)
    n = np.stack([-gx, -gy, np.ones_like(gx)], axis=0)
    n /= np.linalg.norm(n, axis=0, keepdims=True)
    normal = ((n + 1.0) * 0.5).astype(np.float32)
    normal[:, labels == REGION_BACKGROUND] = np.array([[0.5], [0.5], [1.0]], dtype=np.float32)

    spec_base = np.select(
        [labels == REGION_LIPS, labels == REGION_EYES, labels == REGION_BROWS],
        [0.42, 0.65, 0.10], default=0.18)
    rough_base = np.select(
        [labels == REGION_LIPS, labels == REGION_EYES, labels == REGION_BROWS],
        [0.42, 0.28, 0.78], default=0.60 + (0.08 if age == "age:elder" else 0.0))
    spec_noise = fractal_noise(rng, tex_size, cells=(8, 16), amps=(1.0, 0.5))
    specular = np.clip(spec_base + 0.06 * spec_noise, 0.0, 1.0).astype(np.float32)[None]
    roughness = np.clip(rough_base + 0.08 * spec_noise, 0.0, 1.0).astype(np.float32)[None]
    specular[:, labels == REGION_BACKGROUND] = 0.0
    roughness[:, labels == REGION_BACKGROUND] = 1.0

    beta = np.clip(rng.normal(0.0, 0.6, head.n_id), -1.5, 1.5)

    return SyntheticIdentity(
        seed=int(seed),
        beta=beta,
        psi=np.zeros(head.n_expr),
        theta=np.zeros(6),
        textures=PbrTextureSet(
            diffuse=UvTexture(diffuse),
            normal=UvTexture(normal),
            specular=UvTexture(specular),
            roughness=UvTexture(roughness),
        ),
        uv_region_map=labels.copy(),
        annotations={"skin_tone": tone, "age_band": age, "accessory": accessory},
    )
