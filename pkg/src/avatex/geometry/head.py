"""Blendshape head model over an open UV-sphere template.

The template is a latitude/longitude patch of an ellipsoid (caps removed,
so every quad is non-degenerate) with the face centered at u = 0.5 of the
UV atlas and a duplicated vertex column along the back seam.  Identity
and expression displacements are smooth seeded fields applied along the
vertex normals; expressions are windowed to the lower front of the face.
Pose is a rotation-vector plus translation applied after blending.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial.transform import Rotation

# Landmark anchors in UV coordinates (u across, v down); mapped to the
# nearest template vertex at construction time.
LANDMARK_UV = {
    "forehead": (0.50, 0.18),
    "brow_l": (0.42, 0.33),
    "brow_r": (0.58, 0.33),
    "eye_l": (0.42, 0.40),
    "eye_r": (0.58, 0.40),
    "nose_bridge": (0.50, 0.40),
    "nose_tip": (0.50, 0.52),
    "cheek_l": (0.37, 0.55),
    "cheek_r": (0.63, 0.55),
    "mouth_l": (0.44, 0.64),
    "mouth_r": (0.56, 0.64),
    "lip_top": (0.50, 0.61),
    "lip_bottom": (0.50, 0.67),
    "chin": (0.50, 0.80),
    "ear_l": (0.25, 0.45),
    "ear_r": (0.75, 0.45),
}

LANDMARK_NAMES = tuple(LANDMARK_UV)


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray     # (F, 3) int32
    uvs: np.ndarray       # (N, 2) float64 in [0,1]^2

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "faces", np.ascontiguousarray(self.faces, dtype=np.int32))
        object.__setattr__(self, "uvs", np.ascontiguousarray(self.uvs, dtype=np.float64))

    @cached_property
    def face_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])  # area-weighted
        vn = np.zeros_like(v)
        for k in range(3):
            np.add.at(vn, f[:, k], fn)
        return vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-12)

    @cached_property
    def face_areas(self) -> np.ndarray:
        v = self.vertices
        f = self.faces
        return 0.5 * np.linalg.norm(
            np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]]), axis=1)

    def validate(self) -> None:
        if not np.isfinite(self.vertices).all():
            raise ValueError("mesh has non-finite vertices")
        if self.face_areas.min() <= 1e-12:
            raise ValueError("mesh has a degenerate (zero-area) triangle")
        uv = self.uvs
        if uv.min() < -1e-9 or uv.max() > 1 + 1e-9:
            raise ValueError("UVs outside [0,1]^2")


def _smooth_field(rng: np.random.Generator, pts: np.ndarray, n_waves: int = 3) -> np.ndarray:
    """Low-frequency scalar field on points: a sum of random plane waves."""
    out = np.zeros(len(pts))
    for _ in range(n_waves):
        freq = rng.uniform(0.6, 2.2)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.4, 1.0) * np.cos(freq * pts @ direction + phase)
    return out / n_waves


class ParametricHead:
    """Toy morphable head: template + shape/expression bases + rigid pose."""

    def __init__(self, n_lat: int = 24, n_lon: int = 32, n_id: int = 8,
                 n_expr: int = 4, seed: int = 7121):
        self.n_lat = n_lat
        self.n_lon = n_lon
        self.n_id = n_id
        self.n_expr = n_expr
        self.seed = seed
        self._build_template()
        self._build_bases()
        self._assign_landmarks()

    # -- template ----------------------------------------------------------

    def _build_template(self):
        # Ellipsoid radii: x across the face, y vertical, z front-back.
        radii = np.array([0.85, 1.10, 0.95])
        theta = np.radians(np.linspace(18.0, 162.0, self.n_lat + 1))      # from top
        u = np.linspace(0.0, 1.0, self.n_lon + 1)                          # seam duplicated
        phi = (u - 0.5) * 2.0 * np.pi                                      # 0 at face center
        tt, pp = np.meshgrid(theta, phi, indexing="ij")
        x = radii[0] * np.sin(tt) * np.sin(pp)
        y = radii[1] * np.cos(tt)
        z = radii[2] * np.sin(tt) * np.cos(pp)
        verts = np.stack([x, y, z], axis=-1).reshape(-1, 3)

        v_lo, v_hi = 0.03, 0.97  # unused atlas strips above/below become background
        vv = v_lo + (tt - theta[0]) / (theta[-1] - theta[0]) * (v_hi - v_lo)
        uvs = np.stack([pp / (2 * np.pi) + 0.5, vv], axis=-1).reshape(-1, 2)

        ncol = self.n_lon + 1
        faces = []
        for i in range(self.n_lat):
            for j in range(self.n_lon):
                a = i * ncol + j
                b = i * ncol + j + 1
                c = (i + 1) * ncol + j
                d = (i + 1) * ncol + j + 1
                faces.append((a, c, b))
                faces.append((b, c, d))
        faces = np.asarray(faces, dtype=np.int32)

        self.template = Mesh(verts, faces, uvs)
        self.template.validate()
        # Seam columns share 3D positions; remember pairs so displacement
        # fields stay watertight.
        self._seam_left = np.arange(0, len(verts), ncol)
        self._seam_right = self._seam_left + self.n_lon

    def _build_bases(self):
        rng = np.random.default_rng(self.seed)
        verts = self.template.vertices
        normals = self.template.vertex_normals
        uv = self.template.uvs

        def make_basis(count: int, amplitude: float, window: np.ndarray) -> np.ndarray:
            basis = np.zeros((count, len(verts), 3))
            for k in range(count):
                g = _smooth_field(rng, verts) * amplitude
                disp = normals * (g * window)[:, None]
                disp[self._seam_right] = disp[self._seam_left]
                basis[k] = disp
            return basis

        front_low = np.exp(-((uv[:, 0] - 0.5) ** 2) / 0.045) * \
            np.exp(-((uv[:, 1] - 0.62) ** 2) / 0.05)
        self.shape_basis = make_basis(self.n_id, 0.08, np.ones(len(verts)))
        self.expr_basis = make_basis(self.n_expr, 0.06, front_low)

    def _assign_landmarks(self):
        uv = self.template.uvs
        ids = []
        for name in LANDMARK_NAMES:
            target = np.asarray(LANDMARK_UV[name])
            ids.append(int(np.argmin(((uv - target) ** 2).sum(axis=1))))
        self.landmark_vertex_ids = np.asarray(ids, dtype=np.int64)

    # -- generation ----------------------------------------------------------

    def generate_mesh(self, beta, psi, theta=None) -> Mesh:
        """vertices = template + shape.beta + expr.psi, then rigid pose.

        theta is a 6-vector: rotation vector (radians) then translation.
        """
        beta = np.asarray(beta, dtype=np.float64)
        psi = np.asarray(psi, dtype=np.float64)
        if beta.shape != (self.n_id,):
            raise ValueError(f"beta must have length {self.n_id}")
        if psi.shape != (self.n_expr,):
            raise ValueError(f"psi must have length {self.n_expr}")
        if not (np.isfinite(beta).all() and np.isfinite(psi).all()):
            raise ValueError("non-finite shape/expression coefficients")
        verts = self.template.vertices + np.tensordot(beta, self.shape_basis, axes=1) \
            + np.tensordot(psi, self.expr_basis, axes=1)
        if theta is not None:
            theta = np.asarray(theta, dtype=np.float64)
            if theta.shape != (6,):
                raise ValueError("theta must be a 6-vector (rotvec, translation)")
            if not np.isfinite(theta).all():
                raise ValueError("non-finite pose")
            rot = Rotation.from_rotvec(theta[:3]).as_matrix()
            verts = verts @ rot.T + theta[3:]
        return Mesh(verts, self.template.faces, self.template.uvs)

    def landmarks_3d(self, mesh: Mesh) -> np.ndarray:
        return mesh.vertices[self.landmark_vertex_ids]

    def fingerprint(self) -> tuple:
        return (self.n_lat, self.n_lon, self.n_id, self.n_expr, self.seed)
