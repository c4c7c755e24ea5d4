"""Lit view rendering with exact diffuse-only ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry.camera import Camera, look_at_camera
from ..geometry.raster import compute_coverage
from ..geometry.shading import DirectionalLight, LightRig, relight
from ..geometry.head import ParametricHead
from .identity import SyntheticIdentity

_CAMERA_YAWS = (0.0, -18.0, 18.0, -32.0, 32.0, -8.0, 8.0, 25.0)


def builtin_rigs() -> dict[str, LightRig]:
    """At least one harsh-specular and one shadow-dominant configuration."""
    return {
        "harsh_specular": LightRig(lights=(
            DirectionalLight((0.45, -0.40, -0.80), intensity=1.25),
            DirectionalLight((-0.30, 0.10, -0.95), color=(0.9, 0.9, 1.0), intensity=0.35),
        ), ambient=0.08),
        "shadow_side": LightRig(lights=(
            DirectionalLight((-0.92, -0.15, -0.37), intensity=1.1),
        ), ambient=0.06),
        "soft_front": LightRig(lights=(
            DirectionalLight((0.0, 0.0, -1.0), intensity=0.9),
            DirectionalLight((0.5, -0.3, -0.8), color=(1.0, 0.95, 0.9), intensity=0.25),
        ), ambient=0.15),
    }


def view_camera(view_index: int, image_size: int = 64, distance: float = 3.2,
                focal: float = 90.0) -> Camera:
    yaw = np.radians(_CAMERA_YAWS[view_index % len(_CAMERA_YAWS)])
    eye = (distance * np.sin(yaw), 0.12, distance * np.cos(yaw))
    return look_at_camera(eye=eye, target=(0.0, 0.0, 0.0), focal=focal,
                          width=image_size, height=image_size)


@dataclass(frozen=True)
class LitView:
    camera: Camera
    rig_name: str
    rig: LightRig
    image: np.ndarray        # (3, H, W) float32, lit render
    gt_diffuse: np.ndarray   # (3, H, W) float32, lighting term forced to 1
    mask: np.ndarray         # (H, W) uint8 region ids (0 = background)
    landmarks: np.ndarray    # (L, 2) float64
    depth: np.ndarray        # (H, W) float32


def render_lit_views(identity: SyntheticIdentity, head: ParametricHead,
                     n_views: int = 4, rig_names: tuple | None = None,
                     image_size: int = 64) -> list[LitView]:
    rigs = builtin_rigs()
    if rig_names is None:
        rig_names = ("harsh_specular", "shadow_side")
    mesh = head.generate_mesh(identity.beta, identity.psi, identity.theta)
    lm3d = head.landmarks_3d(mesh)
    views = []
    for vi in range(n_views):
        camera = view_camera(vi, image_size=image_size)
        coverage = compute_coverage(mesh, camera)
        gt = relight(mesh, identity.textures, LightRig(), camera,
                     coverage=coverage, force_unlit=True)
        tex_size = identity.uv_region_map.shape[0]
        uv = coverage.pix_uv
        rows = np.clip((uv[..., 1] * tex_size).astype(np.int64), 0, tex_size - 1)
        cols = np.clip((uv[..., 0] * tex_size).astype(np.int64), 0, tex_size - 1)
        mask = np.where(coverage.mask, identity.uv_region_map[rows, cols], 0).astype(np.uint8)
        landmarks = camera.project(lm3d)
        depth = np.where(np.isfinite(coverage.depth), coverage.depth, 0.0).astype(np.float32)
        for rig_name in rig_names:
            rig = rigs[rig_name]
            image = relight(mesh, identity.textures, rig, camera, coverage=coverage)
            views.append(LitView(camera=camera, rig_name=rig_name, rig=rig, image=image,
                                 gt_diffuse=gt, mask=mask, landmarks=landmarks, depth=depth))
    return views
