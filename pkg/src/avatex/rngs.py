"""Deterministic seed derivation and generator construction.

Every stochastic phase draws from its own generator derived from the
experiment seed plus a label path, so phases can be reordered or skipped
without perturbing each other's streams.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch


def derive_seed(master: int, *labels) -> int:
    """Stable 63-bit seed from a master seed and a label path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(master)).encode())
    for lab in labels:
        h.update(b"/")
        h.update(str(lab).encode())
    return int.from_bytes(h.digest(), "little") & 0x7FFF_FFFF_FFFF_FFFF


def numpy_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))


def torch_rng(master: int, *labels) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(derive_seed(master, *labels))
    return g
