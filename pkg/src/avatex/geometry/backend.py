"""Raster kernel backend selection.

The compiled Cython kernel is preferred when importable; the pure-numpy
fallback is contract-identical.  Override with
``AVATEX_RASTER_BACKEND={auto,cython,python}``.
"""

from __future__ import annotations

import os

from . import _raster_np

try:
    from . import _raster_cy
except ImportError:  # extension not built on this install
    _raster_cy = None


def _select(name: str):
    if name == "python":
        return _raster_np
    if name == "cython":
        if _raster_cy is None:
            raise ImportError(
                "AVATEX_RASTER_BACKEND=cython but the compiled kernel is not available; "
                "reinstall with a C compiler or use 'auto'/'python'")
        return _raster_cy
    if name == "auto":
        return _raster_cy if _raster_cy is not None else _raster_np
    raise ValueError(f"unknown raster backend {name!r}")


_module = _select(os.environ.get("AVATEX_RASTER_BACKEND", "auto"))

coverage = _module.coverage
BACKEND_NAME = _module.BACKEND


def available_backends() -> dict:
    """Name -> kernel module for every importable backend (for benchmarks)."""
    out = {"python": _raster_np}
    if _raster_cy is not None:
        out["cython"] = _raster_cy
    return out
