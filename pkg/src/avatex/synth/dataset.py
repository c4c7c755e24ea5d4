"""Dataset export/import with checksummed manifest.

Layout::

    root/manifest.json
    root/<id>/textures/{diffuse,normal,specular,roughness}.png
    root/<id>/uv_mask.png
    root/<id>/views/<v>/{image.png,gt_diffuse.png,mask.png,camera.json,landmarks.json}

Colors are 8-bit PNG; normal/specular/roughness are 16-bit.  The manifest
carries every file's sha256, so partial writes and deletions are caught at
load time.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import MissingArtifactError
from ..geometry.camera import Camera
from ..geometry.head import LANDMARK_NAMES, ParametricHead
from ..geometry import meshio
from ..maps import PbrTextureSet, UvTexture
from .identity import SyntheticIdentity, generate_identity
from .views import LitView, render_lit_views

SCHEMA_VERSION = 1


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def export_dataset(root, identities: list[SyntheticIdentity],
                   views_per_identity: list[list[LitView]], master_seed: int,
                   extra_meta: dict | None = None) -> dict:
    """Write identities and their views; returns the manifest dict."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    files: dict[str, str] = {}

    def emit(relpath: str):
        files[relpath] = _sha256(root / relpath)

    for idx, (ident, views) in enumerate(zip(identities, views_per_identity)):
        name = f"{idx:04d}"
        base = root / name
        (base / "textures").mkdir(parents=True, exist_ok=True)
        meshio.write_png8(base / "textures" / "diffuse.png", ident.textures.diffuse.values)
        meshio.write_png16(base / "textures" / "normal.png", ident.textures.normal.values)
        meshio.write_png16(base / "textures" / "specular.png", ident.textures.specular.values)
        meshio.write_png16(base / "textures" / "roughness.png", ident.textures.roughness.values)
        meshio.write_mask_png(base / "uv_mask.png", ident.uv_region_map)
        for tex in ("diffuse", "normal", "specular", "roughness"):
            emit(f"{name}/textures/{tex}.png")
        emit(f"{name}/uv_mask.png")

        for vi, view in enumerate(views):
            vdir = base / "views" / f"{vi:03d}"
            vdir.mkdir(parents=True, exist_ok=True)
            meshio.write_png8(vdir / "image.png", view.image)
            meshio.write_png8(vdir / "gt_diffuse.png", view.gt_diffuse)
            meshio.write_mask_png(vdir / "mask.png", view.mask)
            _write_json(vdir / "camera.json", view.camera.to_dict())
            _write_json(vdir / "landmarks.json", {
                "names": list(LANDMARK_NAMES),
                "points": view.landmarks.tolist(),
                "rig": view.rig.to_dict(),
                "rig_name": view.rig_name,
            })
            for fname in ("image.png", "gt_diffuse.png", "mask.png",
                          "camera.json", "landmarks.json"):
                emit(f"{name}/views/{vi:03d}/{fname}")

        entries.append({
            "id": name,
            "seed": ident.seed,
            "beta": [float(b) for b in ident.beta],
            "annotations": ident.annotations,
            "n_views": len(views),
        })

    manifest = {
        "schema": SCHEMA_VERSION,
        "master_seed": int(master_seed),
        "identities": entries,
        "counts": {"identities": len(entries),
                   "views": sum(e["n_views"] for e in entries)},
        "files": files,
    }
    if extra_meta:
        manifest.update(extra_meta)
    tmp = root / "manifest.json.tmp"
    _write_json(tmp, manifest)
    os.replace(tmp, root / "manifest.json")
    return manifest


def generate_and_export(root, head: ParametricHead, n_identities: int, n_views: int,
                        rig_names: tuple, master_seed: int, tex_size: int = 64,
                        image_size: int = 64) -> dict:
    identities = []
    all_views = []
    for i in range(n_identities):
        ident = generate_identity(master_seed + i, head, tex_size=tex_size)
        identities.append(ident)
        all_views.append(render_lit_views(ident, head, n_views=n_views,
                                          rig_names=rig_names, image_size=image_size))
    return export_dataset(root, identities, all_views, master_seed,
                          extra_meta={"tex_size": tex_size, "image_size": image_size,
                                      "rig_names": list(rig_names)})


@dataclass(frozen=True)
class ViewRecord:
    image: np.ndarray
    gt_diffuse: np.ndarray
    mask: np.ndarray
    camera: Camera
    landmarks: np.ndarray
    rig_name: str


@dataclass(frozen=True)
class IdentityRecord:
    id: str
    seed: int
    beta: np.ndarray
    annotations: dict
    textures: PbrTextureSet
    uv_region_map: np.ndarray
    n_views: int


class Dataset:
    """Reader over an exported tree; checks integrity before serving data."""

    def __init__(self, root):
        self.root = Path(root)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.exists():
            raise MissingArtifactError(manifest_path, "dataset manifest")
        self.manifest = json.loads(manifest_path.read_text())

    def verify(self, hashes: bool = False) -> None:
        """Raise MissingArtifactError naming the first missing/corrupt file."""
        for rel, digest in self.manifest["files"].items():
            p = self.root / rel
            if not p.exists():
                raise MissingArtifactError(p, "listed in manifest")
            if hashes and _sha256(p) != digest:
                raise MissingArtifactError(p, "checksum mismatch")

    def __len__(self) -> int:
        return len(self.manifest["identities"])

    def identity(self, index: int) -> IdentityRecord:
        entry = self.manifest["identities"][index]
        base = self.root / entry["id"]
        try:
            textures = PbrTextureSet(
                diffuse=UvTexture(meshio.read_png(base / "textures" / "diffuse.png")),
                normal=UvTexture(meshio.read_png(base / "textures" / "normal.png")),
                specular=UvTexture(meshio.read_png(base / "textures" / "specular.png")),
                roughness=UvTexture(meshio.read_png(base / "textures" / "roughness.png")),
            )
            region = meshio.read_mask_png(base / "uv_mask.png")
        except FileNotFoundError as e:
            raise MissingArtifactError(str(e)) from e
        return IdentityRecord(
            id=entry["id"], seed=entry["seed"],
            beta=np.asarray(entry["beta"], dtype=np.float64),
            annotations=entry["annotations"], textures=textures,
            uv_region_map=region, n_views=entry["n_views"])

    def view(self, index: int, view_index: int) -> ViewRecord:
        entry = self.manifest["identities"][index]
        vdir = self.root / entry["id"] / "views" / f"{view_index:03d}"
        try:
            image = meshio.read_png(vdir / "image.png")
            gt = meshio.read_png(vdir / "gt_diffuse.png")
            mask = meshio.read_mask_png(vdir / "mask.png")
        except FileNotFoundError as e:
            raise MissingArtifactError(str(e)) from e
        lm = json.loads((vdir / "landmarks.json").read_text())
        camera = Camera.from_dict(json.loads((vdir / "camera.json").read_text()))
        return ViewRecord(image=image, gt_diffuse=gt, mask=mask, camera=camera,
                          landmarks=np.asarray(lm["points"]), rig_name=lm["rig_name"])

    def iter_views(self, index: int):
        for vi in range(self.manifest["identities"][index]["n_views"]):
            yield self.view(index, vi)


def load_dataset(root) -> Dataset:
    ds = Dataset(root)
    ds.verify(hashes=False)
    return ds
