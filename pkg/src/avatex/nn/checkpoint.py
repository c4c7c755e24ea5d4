"""Single-file checkpoints with config fingerprint verification."""

from __future__ import annotations

from pathlib import Path

import torch

from ..errors import CheckpointError, MissingArtifactError

FORMAT_VERSION = 1


def save_checkpoint(path, kind: str, state_dict: dict, fingerprint: str,
                    schedule_params: dict, extra: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "fingerprint": fingerprint,
        "schedule": schedule_params,
        "state_dict": state_dict,
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_checkpoint(path, kind: str, fingerprint: str) -> dict:
    """Load and verify; refuses a checkpoint built under another config."""
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, f"{kind} checkpoint")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {payload.get('kind')!r} checkpoint, "
                              f"expected {kind!r}")
    if payload.get("fingerprint") != fingerprint:
        raise CheckpointError(
            f"{path} was trained under config fingerprint {payload.get('fingerprint')!r} "
            f"but the current config is {fingerprint!r}; refusing to load")
    return payload
