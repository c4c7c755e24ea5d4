"""Pinhole camera: world -> camera -> pixel."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Camera:
    """Camera looks down +z in its own frame; pixels are (x right, y down)."""

    focal: float
    cx: float
    cy: float
    rotation: np.ndarray = field(repr=False)     # (3,3) world -> camera
    translation: np.ndarray = field(repr=False)  # (3,)
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ValueError("rotation must be (3,3) and translation (3,)")

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation

    def project_camera(self, pts_cam: np.ndarray) -> np.ndarray:
        """Camera-space points -> pixel coordinates (no clipping)."""
        z = pts_cam[..., 2]
        x = self.focal * pts_cam[..., 0] / z + self.cx
        y = self.focal * pts_cam[..., 1] / z + self.cy
        return np.stack([x, y], axis=-1)

    def project(self, pts_world: np.ndarray) -> np.ndarray:
        return self.project_camera(self.world_to_camera(pts_world))

    @property
    def position(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_dict(self) -> dict:
        return {
            "focal": self.focal,
            "cx": self.cx,
            "cy": self.cy,
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            focal=float(d["focal"]), cx=float(d["cx"]), cy=float(d["cy"]),
            rotation=np.asarray(d["rotation"], dtype=np.float64),
            translation=np.asarray(d["translation"], dtype=np.float64),
            width=int(d["width"]), height=int(d["height"]),
        )


def look_at_camera(eye, target, focal: float, width: int = 64, height: int = 64,
                   up=(0.0, 1.0, 0.0)) -> Camera:
    """Camera at `eye` looking at `target`.

    World up is +y; image y runs downward, so the camera's y axis is the
    negated world up projected orthogonal to the viewing direction.
    """
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    upv = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, upv)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    right /= nr
    down = np.cross(fwd, right)  # completes a right-handed (right, down, fwd) frame
    rot = np.stack([right, down, fwd], axis=0)
    trans = -rot @ eye
    return Camera(focal=focal, cx=width / 2.0, cy=height / 2.0,
                  rotation=rot, translation=trans, width=width, height=height)
