"""Blinn-Phong preview renderer over the PBR texture set.

Normals come from the tangent-space normal map; specular lobe width is
driven by roughness via an exponent ramp (rough surfaces get wide, dim
lobes).  Directional lights only; no shadows beyond the n.l terminator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..maps import PbrTextureSet
from .camera import Camera
from .head import Mesh
from .raster import CoverageMap, bilinear_taps, compute_coverage


@dataclass(frozen=True)
class DirectionalLight:
    direction: tuple   # unit-ish vector pointing from the light toward the scene
    color: tuple = (1.0, 1.0, 1.0)
    intensity: float = 1.0

    def to_dict(self) -> dict:
        return {"direction": list(self.direction), "color": list(self.color),
                "intensity": self.intensity}

    @staticmethod
    def from_dict(d: dict) -> "DirectionalLight":
        return DirectionalLight(tuple(d["direction"]), tuple(d.get("color", (1, 1, 1))),
                                float(d.get("intensity", 1.0)))


@dataclass(frozen=True)
class LightRig:
    lights: tuple = ()
    ambient: float = 0.0

    @staticmethod
    def headlight(camera: Camera, intensity: float = 1.0) -> "LightRig":
        fwd = camera.rotation[2]  # camera forward in world coordinates
        return LightRig(lights=(DirectionalLight(tuple(fwd), intensity=intensity),))

    def to_dict(self) -> dict:
        return {"ambient": self.ambient, "lights": [l.to_dict() for l in self.lights]}

    @staticmethod
    def from_dict(d: dict) -> "LightRig":
        return LightRig(tuple(DirectionalLight.from_dict(x) for x in d.get("lights", [])),
                        float(d.get("ambient", 0.0)))


def _sample(tex: np.ndarray, ids: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Bilinear texture fetch at precomputed taps; returns (C, M)."""
    flat = tex.reshape(tex.shape[0], -1)
    return (flat[:, ids] * weights[None]).sum(-1)


def face_tangents(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-face tangent/bitangent aligned with the UV parameterization."""
    v = mesh.vertices[mesh.faces]
    w = mesh.uvs[mesh.faces]
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    d1 = w[:, 1] - w[:, 0]
    d2 = w[:, 2] - w[:, 0]
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    r = 1.0 / np.where(np.abs(det) < 1e-12, 1e-12, det)
    tangent = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) * r[:, None]
    bitangent = (e2 * d1[:, 0:1] - e1 * d2[:, 0:1]) * r[:, None]
    return tangent, bitangent


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)


def lambert_shade(coverage: CoverageMap, rig: LightRig) -> np.ndarray:
    """Scalar diffuse shade per pixel from geometric normals (no normal map)."""
    shade = np.full(coverage.shape, rig.ambient, dtype=np.float64)
    m = coverage.mask
    n = coverage.pix_normal[m]
    acc = np.zeros(m.sum())
    for light in rig.lights:
        l = -_unit(np.asarray(light.direction, dtype=np.float64))
        lum = float(np.mean(light.color)) * light.intensity
        acc += lum * np.maximum(0.0, n @ l)
    shade[m] += acc
    return shade


def shininess_from_roughness(rough: np.ndarray) -> np.ndarray:
    """Exponent ramp: roughness 0 -> 128 (tight lobe), 1 -> 2 (wide)."""
    return 2.0 + (1.0 - np.clip(rough, 0.0, 1.0)) * 126.0


def relight(mesh: Mesh, pbr: PbrTextureSet, rig: LightRig, camera: Camera,
            coverage: CoverageMap | None = None, force_unlit: bool = False) -> np.ndarray:
    """Render the PBR set under a directional rig; returns (3, H, W) in [0,1].

    force_unlit replaces the lighting term with 1 and drops specular,
    which reproduces the unlit diffuse render exactly.
    """
    if coverage is None:
        coverage = compute_coverage(mesh, camera)
    h, w = coverage.shape
    out = np.zeros((3, h, w), dtype=np.float64)
    m = coverage.mask
    if not m.any():
        return out.astype(np.float32)

    tex_h, tex_w = pbr.resolution
    uv = coverage.pix_uv[m]
    ids, weights = bilinear_taps(uv[:, 0] * tex_w, uv[:, 1] * tex_h, tex_h, tex_w)
    diffuse = _sample(pbr.diffuse.values.astype(np.float64), ids, weights)      # (3, M)
    if force_unlit:
        out[:, m] = diffuse
        return np.clip(out, 0.0, 1.0).astype(np.float32)

    normal_map = _sample(pbr.normal.values.astype(np.float64), ids, weights)    # (3, M)
    specular = _sample(pbr.specular.values.astype(np.float64), ids, weights)[0]
    rough = _sample(pbr.roughness.values.astype(np.float64), ids, weights)[0]

    fidx = coverage.tri_id[m]
    tan, bitan = face_tangents(mesh)
    n_geo = coverage.pix_normal[m]
    t = tan[fidx]
    t = _unit(t - (t * n_geo).sum(-1, keepdims=True) * n_geo)
    b = np.cross(n_geo, t)
    flip = (b * bitan[fidx]).sum(-1) < 0.0
    b[flip] = -b[flip]

    ts = normal_map.T * 2.0 - 1.0                                               # (M, 3)
    n = _unit(t * ts[:, 0:1] + b * ts[:, 1:2] + n_geo * ts[:, 2:3])

    view = _unit(camera.position[None, :] - coverage.pix_point[m])
    shin = shininess_from_roughness(rough)

    color = np.zeros((m.sum(), 3))
    for light in rig.lights:
        l = -_unit(np.asarray(light.direction, dtype=np.float64))
        c = np.asarray(light.color, dtype=np.float64) * light.intensity
        ndl = np.maximum(0.0, n @ l)
        half = _unit(l[None, :] + view)
        ndh = np.maximum(0.0, (n * half).sum(-1))
        color += c[None, :] * (diffuse.T * ndl[:, None] +
                               specular[:, None] * np.power(ndh, shin)[:, None])
    color += rig.ambient * diffuse.T
    out[:, m] = color.T
    return np.clip(out, 0.0, 1.0).astype(np.float32)
