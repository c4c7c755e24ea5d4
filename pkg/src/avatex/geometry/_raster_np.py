"""Pure-numpy rasterization kernels (fallback for the compiled core).

Same contract as ``_raster_cy``: scanline coverage of projected triangles
over a pixel grid with a depth test.  The Python loop runs per triangle;
work inside a triangle's bounding box is vectorized.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def coverage(xy: np.ndarray, z: np.ndarray, faces: np.ndarray, keep: np.ndarray,
             height: int, width: int):
    """Rasterize triangles onto a pixel grid.

    Args:
        xy: (N, 2) float64 projected vertex positions in pixel coordinates.
        z: (N,) float64 per-vertex depth (>0); pass ones for flat grids.
        faces: (F, 3) int32 vertex indices.
        keep: (F,) uint8; faces with 0 are skipped (culled/clipped).
        height, width: grid size.

    Returns:
        tri_id: (H, W) int32, -1 where uncovered.
        depth: (H, W) float64, +inf where uncovered.
        bary: (H, W, 3) float64 perspective-corrected barycentrics.
    """
    tri_id = np.full((height, width), -1, dtype=np.int32)
    depth = np.full((height, width), np.inf, dtype=np.float64)
    bary = np.zeros((height, width, 3), dtype=np.float64)

    for f in range(len(faces)):
        if not keep[f]:
            continue
        i0, i1, i2 = faces[f]
        p0, p1, p2 = xy[i0], xy[i1], xy[i2]
        area = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
        if abs(area) < 1e-12:
            continue
        inv_area = 1.0 / area
        x_min = max(int(np.floor(min(p0[0], p1[0], p2[0]) - 0.5)), 0)
        x_max = min(int(np.ceil(max(p0[0], p1[0], p2[0]) + 0.5)), width - 1)
        y_min = max(int(np.floor(min(p0[1], p1[1], p2[1]) - 0.5)), 0)
        y_max = min(int(np.ceil(max(p0[1], p1[1], p2[1]) + 0.5)), height - 1)
        if x_min > x_max or y_min > y_max:
            continue

        xs = np.arange(x_min, x_max + 1) + 0.5
        ys = np.arange(y_min, y_max + 1) + 0.5
        px, py = np.meshgrid(xs, ys)

        w0 = (p2[0] - p1[0]) * (py - p1[1]) - (p2[1] - p1[1]) * (px - p1[0])
        w1 = (p0[0] - p2[0]) * (py - p2[1]) - (p0[1] - p2[1]) * (px - p2[0])
        w2 = (p1[0] - p0[0]) * (py - p0[1]) - (p1[1] - p0[1]) * (px - p0[0])
        b0, b1, b2 = w0 * inv_area, w1 * inv_area, w2 * inv_area
        inside = (b0 >= -1e-9) & (b1 >= -1e-9) & (b2 >= -1e-9)
        if not inside.any():
            continue

        inv_z = b0 / z[i0] + b1 / z[i1] + b2 / z[i2]
        pix_z = 1.0 / np.maximum(inv_z, 1e-12)
        sub = (slice(y_min, y_max + 1), slice(x_min, x_max + 1))
        closer = inside & (pix_z < depth[sub])
        if not closer.any():
            continue

        depth[sub] = np.where(closer, pix_z, depth[sub])
        tri_id[sub] = np.where(closer, f, tri_id[sub])
        # Perspective-corrected barycentrics.
        c0 = (b0 / z[i0]) * pix_z
        c1 = (b1 / z[i1]) * pix_z
        c2 = (b2 / z[i2]) * pix_z
        for k, ck in enumerate((c0, c1, c2)):
            bary[sub + (k,)] = np.where(closer, ck, bary[sub + (k,)])

    return tri_id, depth, bary
