# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled rasterization kernel; see _raster_np for the reference contract."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def coverage(double[:, ::1] xy, double[::1] z, int[:, ::1] faces,
             unsigned char[::1] keep, int height, int width):
    cdef cnp.ndarray[cnp.int32_t, ndim=2] tri_id_arr = np.full((height, width), -1, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] depth_arr = np.full((height, width), np.inf, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=3] bary_arr = np.zeros((height, width, 3), dtype=np.float64)
    cdef int[:, ::1] tri_id = tri_id_arr
    cdef double[:, ::1] depth = depth_arr
    cdef double[:, :, ::1] bary = bary_arr

    cdef Py_ssize_t f, n_faces = faces.shape[0]
    cdef int i0, i1, i2, x, y, x_min, x_max, y_min, y_max
    cdef double p0x, p0y, p1x, p1y, p2x, p2y
    cdef double area, inv_area, px, py, b0, b1, b2, inv_z, pix_z
    cdef double lo_x, hi_x, lo_y, hi_y
    cdef double eps = -1e-9

    for f in range(n_faces):
        if keep[f] == 0:
            continue
        i0 = faces[f, 0]; i1 = faces[f, 1]; i2 = faces[f, 2]
        p0x = xy[i0, 0]; p0y = xy[i0, 1]
        p1x = xy[i1, 0]; p1y = xy[i1, 1]
        p2x = xy[i2, 0]; p2y = xy[i2, 1]
        area = (p1x - p0x) * (p2y - p0y) - (p1y - p0y) * (p2x - p0x)
        if area < 1e-12 and area > -1e-12:
            continue
        inv_area = 1.0 / area

        lo_x = min(min(p0x, p1x), p2x) - 0.5
        hi_x = max(max(p0x, p1x), p2x) + 0.5
        lo_y = min(min(p0y, p1y), p2y) - 0.5
        hi_y = max(max(p0y, p1y), p2y) + 0.5
        x_min = <int>lo_x
        if x_min < 0: x_min = 0
        x_max = <int>hi_x
        if x_max > width - 1: x_max = width - 1
        y_min = <int>lo_y
        if y_min < 0: y_min = 0
        y_max = <int>hi_y
        if y_max > height - 1: y_max = height - 1
        if x_min > x_max or y_min > y_max:
            continue

        for y in range(y_min, y_max + 1):
            py = y + 0.5
            for x in range(x_min, x_max + 1):
                px = x + 0.5
                b0 = ((p2x - p1x) * (py - p1y) - (p2y - p1y) * (px - p1x)) * inv_area
                if b0 < eps:
                    continue
                b1 = ((p0x - p2x) * (py - p2y) - (p0y - p2y) * (px - p2x)) * inv_area
                if b1 < eps:
                    continue
                b2 = ((p1x - p0x) * (py - p0y) - (p1y - p0y) * (px - p0x)) * inv_area
                if b2 < eps:
                    continue
                inv_z = b0 / z[i0] + b1 / z[i1] + b2 / z[i2]
                if inv_z < 1e-12:
                    inv_z = 1e-12
                pix_z = 1.0 / inv_z
                if pix_z < depth[y, x]:
                    depth[y, x] = pix_z
                    tri_id[y, x] = <int>f
                    bary[y, x, 0] = (b0 / z[i0]) * pix_z
                    bary[y, x, 1] = (b1 / z[i1]) * pix_z
                    bary[y, x, 2] = (b2 / z[i2]) * pix_z

    return tri_id_arr, depth_arr, bary_arr
