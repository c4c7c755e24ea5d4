"""OBJ export/import (positions + UVs) and texture file IO."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

from ..maps import UvTexture
from .head import Mesh


def export_obj(mesh: Mesh, path) -> None:
    path = Path(path)
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.8f} {v[1]:.8f} {v[2]:.8f}")
    for uv in mesh.uvs:
        # OBJ convention: vt origin is bottom-left, ours is top-left.
        lines.append(f"vt {uv[0]:.8f} {1.0 - uv[1]:.8f}")
    for f in mesh.faces:
        a, b, c = (int(i) + 1 for i in f)
        lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    path.write_text("\n".join(lines) + "\n")


def import_obj(path) -> Mesh:
    verts, uvs, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(parts[1]), 1.0 - float(parts[2])])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return Mesh(np.asarray(verts), np.asarray(faces, dtype=np.int32), np.asarray(uvs))


def write_png8(path, image: np.ndarray) -> None:
    """(C,H,W) or (H,W) float in [0,1] -> 8-bit PNG."""
    arr = _to_hwc(image)
    data = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    _imwrite(path, data)


def write_png16(path, image: np.ndarray) -> None:
    """(C,H,W) or (H,W) float in [0,1] -> 16-bit PNG."""
    arr = _to_hwc(image)
    data = np.clip(np.round(arr * 65535.0), 0, 65535).astype(np.uint16)
    _imwrite(path, data)


def read_png(path) -> np.ndarray:
    """PNG -> float32 (C,H,W) in [0,1] (grayscale -> C=1)."""
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FileNotFoundError(f"cannot read image {path}")
    scale = 65535.0 if data.dtype == np.uint16 else 255.0
    arr = data.astype(np.float32) / scale
    if arr.ndim == 2:
        return arr[None]
    return arr[:, :, ::-1].transpose(2, 0, 1).copy()  # BGR -> RGB, HWC -> CHW


def write_mask_png(path, labels: np.ndarray) -> None:
    ok = cv2.imwrite(str(path), labels.astype(np.uint8))
    if not ok:
        raise IOError(f"failed to write {path}")


def read_mask_png(path) -> np.ndarray:
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise FileNotFoundError(f"cannot read mask {path}")
    if data.ndim == 3:
        data = data[:, :, 0]
    return data.astype(np.uint8)


def write_texture(path_base, texture: UvTexture, bits: int = 8) -> list:
    """PNG (8- or 16-bit) plus a float32 .npy sidecar; returns written paths."""
    png = Path(str(path_base) + ".png")
    npy = Path(str(path_base) + ".npy")
    (write_png16 if bits == 16 else write_png8)(png, texture.values)
    np.save(npy, texture.values)
    return [png, npy]


def _to_hwc(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim == 2:
        return image
    if image.shape[0] in (1, 3):
        image = image.transpose(1, 2, 0)
    if image.shape[-1] == 1:
        image = image[:, :, 0]
    return image


def _imwrite(path, data: np.ndarray) -> None:
    if data.ndim == 3:
        data = data[:, :, ::-1]  # RGB -> BGR for the codec
    ok = cv2.imwrite(str(path), data)
    if not ok:
        raise IOError(f"failed to write {path}")
