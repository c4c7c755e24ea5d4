"""Texture-space differentiable rendering on fixed geometry.

The kernel pass (``compute_coverage``) resolves, per pixel, the covering
triangle, its depth and perspective-corrected barycentrics; it is not
differentiable and runs on the compiled backend when available.  Texture
application is a separate gather: every covered pixel is a bilinear
combination of at most 4 texels, so rendering is exactly linear in the
texture and autograd flows through ``TexelSampler.render`` when it is
given a torch tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..maps import UvTexture, VisibilityMask
from . import backend
from .camera import Camera
from .head import Mesh


@dataclass(frozen=True)
class CoverageMap:
    """Per-pixel raster attributes for one (mesh, camera) pair."""

    tri_id: np.ndarray    # (H, W) int32, -1 = background
    depth: np.ndarray     # (H, W) float64, inf at background
    bary: np.ndarray      # (H, W, 3) float64
    mask: np.ndarray      # (H, W) bool
    pix_uv: np.ndarray    # (H, W, 2) float64
    pix_point: np.ndarray  # (H, W, 3) float64 world-space surface point
    pix_normal: np.ndarray  # (H, W, 3) float64 interpolated vertex normal

    @property
    def shape(self) -> tuple[int, int]:
        return self.tri_id.shape


def compute_coverage(mesh: Mesh, camera: Camera, z_near: float = 0.05) -> CoverageMap:
    verts_cam = camera.world_to_camera(mesh.vertices)
    z = verts_cam[:, 2]
    xy = np.empty((len(z), 2), dtype=np.float64)
    safe_z = np.where(z > z_near, z, np.nan)
    xy[:, 0] = camera.focal * verts_cam[:, 0] / safe_z + camera.cx
    xy[:, 1] = camera.focal * verts_cam[:, 1] / safe_z + camera.cy

    faces = mesh.faces
    in_front = (z[faces] > z_near).all(axis=1)
    centroids = mesh.vertices[faces].mean(axis=1)
    facing = ((centroids - camera.position) * mesh.face_normals).sum(axis=1) < 0.0
    keep = (in_front & facing).astype(np.uint8)
    xy = np.nan_to_num(xy, nan=0.0)

    tri_id, depth, bary = backend.coverage(
        np.ascontiguousarray(xy), np.ascontiguousarray(z),
        np.ascontiguousarray(faces), np.ascontiguousarray(keep),
        camera.height, camera.width)
    mask = tri_id >= 0

    h, w = mask.shape
    pix_uv = np.zeros((h, w, 2))
    pix_point = np.zeros((h, w, 3))
    pix_normal = np.zeros((h, w, 3))
    if mask.any():
        fidx = tri_id[mask]
        corners = faces[fidx]                      # (M, 3)
        b = bary[mask]                             # (M, 3)
        pix_uv[mask] = np.einsum("mk,mkd->md", b, mesh.uvs[corners])
        pix_point[mask] = np.einsum("mk,mkd->md", b, mesh.vertices[corners])
        n = np.einsum("mk,mkd->md", b, mesh.vertex_normals[corners])
        pix_normal[mask] = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    return CoverageMap(tri_id, depth, bary, mask, pix_uv, pix_point, pix_normal)


def uv_coverage(mesh: Mesh, tex_size: tuple[int, int]):
    """Rasterize the UV layout itself over the texel grid.

    Returns (tri_id, bary) with shapes (tex_h, tex_w) / (tex_h, tex_w, 3).
    """
    tex_h, tex_w = tex_size
    xy = np.ascontiguousarray(mesh.uvs * np.array([tex_w, tex_h]), dtype=np.float64)
    z = np.ones(len(mesh.uvs))
    keep = np.ones(len(mesh.faces), dtype=np.uint8)
    tri_id, _, bary = backend.coverage(xy, z, np.ascontiguousarray(mesh.faces),
                                       keep, tex_h, tex_w)
    return tri_id, bary


def bilinear_taps(x: np.ndarray, y: np.ndarray, grid_h: int, grid_w: int):
    """Indices (N,4) into the flattened grid and weights (N,4) for
    bilinear sampling at continuous positions (x, y) in pixel units."""
    tx = x - 0.5
    ty = y - 0.5
    x0 = np.floor(tx).astype(np.int64)
    y0 = np.floor(ty).astype(np.int64)
    fx = tx - x0
    fy = ty - y0
    x0c = np.clip(x0, 0, grid_w - 1)
    x1c = np.clip(x0 + 1, 0, grid_w - 1)
    y0c = np.clip(y0, 0, grid_h - 1)
    y1c = np.clip(y0 + 1, 0, grid_h - 1)
    ids = np.stack([y0c * grid_w + x0c, y0c * grid_w + x1c,
                    y1c * grid_w + x0c, y1c * grid_w + x1c], axis=-1)
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                        (1 - fx) * fy, fx * fy], axis=-1)
    return ids, weights


@dataclass(frozen=True)
class TexelSampler:
    """Linear pixel <- texel map for one coverage; differentiable gather."""

    height: int
    width: int
    tex_h: int
    tex_w: int
    pixel_ids: np.ndarray   # (M,) int64 flat pixel indices
    texel_ids: np.ndarray   # (M, 4) int64 flat texel indices
    weights: np.ndarray     # (M, 4) float64, rows sum to the pixel gain

    def render(self, texture):
        """Apply the gather to a (C, tex_h, tex_w) texture.

        torch in -> torch out (autograd-capable); numpy in -> numpy out.
        """
        if isinstance(texture, UvTexture):
            texture = texture.values
        if texture.shape[-2:] != (self.tex_h, self.tex_w):
            raise ValueError(f"texture resolution {tuple(texture.shape[-2:])} does not match "
                             f"sampler ({self.tex_h}, {self.tex_w})")
        c = texture.shape[0]
        if isinstance(texture, torch.Tensor):
            w = torch.as_tensor(self.weights, dtype=texture.dtype, device=texture.device)
            flat = texture.reshape(c, -1)
            vals = flat[:, torch.as_tensor(self.texel_ids)]      # (C, M, 4)
            pix = (vals * w[None]).sum(-1)                       # (C, M)
            img = texture.new_zeros((c, self.height * self.width))
            img[:, torch.as_tensor(self.pixel_ids)] = pix
            return img.reshape(c, self.height, self.width)
        texture = np.asarray(texture)
        flat = texture.reshape(c, -1)
        pix = (flat[:, self.texel_ids] * self.weights[None]).sum(-1)
        img = np.zeros((c, self.height * self.width), dtype=np.result_type(texture, np.float64))
        img[:, self.pixel_ids] = pix
        return img.reshape(c, self.height, self.width)


def build_texel_sampler(coverage: CoverageMap, tex_size: tuple[int, int],
                        shade: np.ndarray | None = None) -> TexelSampler:
    tex_h, tex_w = tex_size
    mask = coverage.mask
    h, w = mask.shape
    pixel_ids = np.flatnonzero(mask.ravel()).astype(np.int64)
    uv = coverage.pix_uv[mask]
    ids, weights = bilinear_taps(uv[:, 0] * tex_w, uv[:, 1] * tex_h, tex_h, tex_w)
    if shade is not None:
        weights = weights * shade[mask][:, None]
    return TexelSampler(h, w, tex_h, tex_w, pixel_ids, ids, weights)


@dataclass(frozen=True)
class RenderOutput:
    image: object            # (C, H, W) torch or numpy, matches texture input
    depth: np.ndarray
    mask: np.ndarray         # V_d
    sampler: TexelSampler
    coverage: CoverageMap


def rasterize(mesh: Mesh, texture, camera: Camera, mode: str = "unlit",
              lights=None, coverage: CoverageMap | None = None) -> RenderOutput:
    """Render a texture over the mesh.  ``unlit`` copies texel colors;
    ``lambertian`` multiplies a per-pixel diffuse shade (constant w.r.t.
    the texture, so texel gradients survive)."""
    if coverage is None:
        coverage = compute_coverage(mesh, camera)
    shade = None
    if mode == "lambertian":
        from .shading import LightRig, lambert_shade  # local import avoids a cycle
        rig = lights if lights is not None else LightRig.headlight(camera)
        shade = lambert_shade(coverage, rig)
    elif mode != "unlit":
        raise ValueError(f"unknown render mode {mode!r}")
    tex_arr = texture.values if isinstance(texture, UvTexture) else texture
    sampler = build_texel_sampler(coverage, tuple(tex_arr.shape[-2:]), shade)
    image = sampler.render(tex_arr)
    return RenderOutput(image, coverage.depth, coverage.mask, sampler, coverage)


def project_to_uv(image, mesh: Mesh, camera: Camera, tex_size: tuple[int, int],
                  latent_downsample: int = 8,
                  coverage: CoverageMap | None = None) -> tuple[UvTexture, VisibilityMask]:
    """Texel-centric texture acquisition from one view.

    For every texel covered by the UV layout, its surface point is
    projected into the image, depth-tested against the rasterized depth
    buffer and back-face tested; passing texels sample the image
    bilinearly, failing ones get V = 0 and black.
    """
    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    image = np.asarray(image, dtype=np.float64)
    c, img_h, img_w = image.shape
    if (img_h, img_w) != (camera.height, camera.width):
        raise ValueError("image resolution does not match camera")
    if coverage is None:
        coverage = compute_coverage(mesh, camera)

    tex_h, tex_w = tex_size
    tri_id, bary = uv_coverage(mesh, tex_size)
    covered = tri_id >= 0

    texture = np.zeros((c, tex_h, tex_w), dtype=np.float32)
    visible = np.zeros((tex_h, tex_w), dtype=bool)
    if covered.any():
        fidx = tri_id[covered]
        corners = mesh.faces[fidx]
        b = bary[covered]
        points = np.einsum("mk,mkd->md", b, mesh.vertices[corners])
        normals = mesh.face_normals[fidx]

        pts_cam = camera.world_to_camera(points)
        z = pts_cam[:, 2]
        ok = z > 1e-6
        xy = np.zeros((len(z), 2))
        xy[ok] = camera.project_camera(pts_cam[ok])
        inside = ok & (xy[:, 0] >= 0.0) & (xy[:, 0] <= img_w) & \
            (xy[:, 1] >= 0.0) & (xy[:, 1] <= img_h)
        front = ((points - camera.position) * normals).sum(axis=1) < 0.0

        px = np.clip(xy[:, 0].astype(np.int64), 0, img_w - 1)
        py = np.clip(xy[:, 1].astype(np.int64), 0, img_h - 1)
        buf = coverage.depth[py, px]
        not_occluded = np.isfinite(buf) & (z <= buf * 1.003 + 1e-3)

        vis = inside & front & not_occluded
        if vis.any():
            ids, weights = bilinear_taps(xy[vis, 0], xy[vis, 1], img_h, img_w)
            flat = image.reshape(c, -1)
            colors = (flat[:, ids] * weights[None]).sum(-1)  # (C, M)
            rows, cols = np.nonzero(covered)
            texture[:, rows[vis], cols[vis]] = colors.astype(np.float32)
            visible[rows[vis], cols[vis]] = True

    vis_mask = VisibilityMask.build(visible, coverage.mask, latent_downsample)
    return UvTexture(texture), vis_mask
