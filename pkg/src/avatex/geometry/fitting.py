"""Least-squares landmark fitting for the parametric head.

Recovers shape, expression and pose from 2D landmark correspondences
with fixed camera intrinsics.  A tiny coefficient regularizer keeps the
problem well-posed without visibly biasing the reprojection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .camera import Camera
from .head import ParametricHead


@dataclass(frozen=True)
class FitResult:
    beta: np.ndarray
    psi: np.ndarray
    theta: np.ndarray
    camera: Camera
    residual_px: float       # RMS reprojection error
    converged: bool
    n_evaluations: int


def fit_landmarks(landmarks_2d: np.ndarray, head: ParametricHead, camera: Camera,
                  init: np.ndarray | None = None, reg: float = 1e-4,
                  max_nfev: int = 400) -> FitResult:
    """Fit (beta, psi, theta) so projected template landmarks match
    ``landmarks_2d`` (ordered like head.landmark_vertex_ids)."""
    landmarks_2d = np.asarray(landmarks_2d, dtype=np.float64)
    n_lm = len(head.landmark_vertex_ids)
    if landmarks_2d.shape != (n_lm, 2):
        raise ValueError(f"expected ({n_lm}, 2) landmarks, got {landmarks_2d.shape}")
    if n_lm < 6:
        raise ValueError("need at least 6 landmark correspondences")

    n_id, n_expr = head.n_id, head.n_expr
    lm_ids = head.landmark_vertex_ids
    template_lm = head.template.vertices[lm_ids]
    shape_lm = head.shape_basis[:, lm_ids]   # (n_id, L, 3)
    expr_lm = head.expr_basis[:, lm_ids]

    sqrt_reg = np.sqrt(reg)

    def residuals(x):
        beta, psi, theta = x[:n_id], x[n_id:n_id + n_expr], x[n_id + n_expr:]
        pts = template_lm + np.tensordot(beta, shape_lm, axes=1) \
            + np.tensordot(psi, expr_lm, axes=1)
        from scipy.spatial.transform import Rotation
        pts = pts @ Rotation.from_rotvec(theta[:3]).as_matrix().T + theta[3:]
        proj = camera.project(pts)
        res = (proj - landmarks_2d).ravel()
        return np.concatenate([res, sqrt_reg * x[:n_id + n_expr]])

    x0 = np.zeros(n_id + n_expr + 6) if init is None else np.asarray(init, dtype=np.float64)
    initial_cost = float((residuals(x0) ** 2).sum())
    sol = least_squares(residuals, x0, method="trf", max_nfev=max_nfev, xtol=1e-14,
                        ftol=1e-14, gtol=1e-14)
    final_cost = float((residuals(sol.x) ** 2).sum())

    beta = sol.x[:n_id]
    psi = sol.x[n_id:n_id + n_expr]
    theta = sol.x[n_id + n_expr:]
    reproj = residuals(sol.x)[: 2 * n_lm].reshape(-1, 2)
    residual_px = float(np.sqrt((reproj ** 2).sum(axis=1).mean()))
    return FitResult(beta=beta, psi=psi, theta=theta, camera=camera,
                     residual_px=residual_px,
                     converged=final_cost <= initial_cost + 1e-12,
                     n_evaluations=int(sol.nfev))
