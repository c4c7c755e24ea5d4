"""Texture-space containers: UV maps, PBR sets, visibility masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class UvTexture:
    """Texel grid, channels first: values[(c, v_row, u_col)]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"texture must be (C, H, W), got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("texture has non-finite texels")
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def clamped01(self) -> "UvTexture":
        return UvTexture(np.clip(self.values, 0.0, 1.0))


@dataclass(frozen=True)
class PbrTextureSet:
    """Diffuse, normal, specular and roughness maps sharing one resolution."""

    diffuse: UvTexture
    normal: UvTexture
    specular: UvTexture
    roughness: UvTexture

    def __post_init__(self):
        res = self.diffuse.resolution
        for name in ("normal", "specular", "roughness"):
            if getattr(self, name).resolution != res:
                raise ValueError(f"{name} map resolution differs from diffuse")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.diffuse.resolution

    def as_dict(self) -> dict:
        return {"diffuse": self.diffuse, "normal": self.normal,
                "specular": self.specular, "roughness": self.roughness}


FLAT_NORMAL = (0.5, 0.5, 1.0)


def downsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Binary downsample: area-average each factor x factor cell, then
    threshold at 0.5 (ties count as visible)."""
    mask = np.asarray(mask)
    h, w = mask.shape
    if h % factor or w % factor:
        raise ValueError(f"mask shape {mask.shape} not divisible by factor {factor}")
    cells = mask.astype(np.float64).reshape(h // factor, factor, w // factor, factor)
    return cells.mean(axis=(1, 3)) >= 0.5


@dataclass(frozen=True)
class VisibilityMask:
    """What one view observes, in texel, pixel and latent space."""

    uv_mask: np.ndarray      # (tex_h, tex_w) bool
    image_mask: np.ndarray   # (H, W) bool
    latent_mask: np.ndarray  # (tex_h/d, tex_w/d) bool

    @staticmethod
    def build(uv_mask: np.ndarray, image_mask: np.ndarray, latent_downsample: int) -> "VisibilityMask":
        return VisibilityMask(
            uv_mask=np.asarray(uv_mask, dtype=bool),
            image_mask=np.asarray(image_mask, dtype=bool),
            latent_mask=downsample_mask(np.asarray(uv_mask, dtype=bool), latent_downsample),
        )
