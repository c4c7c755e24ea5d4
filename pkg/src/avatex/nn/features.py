"""Recording and injection of denoiser intermediates.

A ``FeatureStore`` snapshots per-layer tensors keyed by
``(timestep, layer, kind)`` where kind is one of ``res`` (residual-branch
delta), ``query`` or ``key`` (self-attention projections).  A
``FeaturePassSpec`` describes, for a whole sampling pass, which keys to
record into a sink store and which to replace from a source store; the
sampler turns it into one ``TapRouter`` per step, which the network
consults at each addressable upsampling layer.

Recording is observation-only: stored tensors are detached clones and the
forward computation is untouched.  Value features and cross-attention are
never replaced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import torch

from ..errors import AvatexError

KINDS = ("res", "query", "key")


class FeatureInjectionError(AvatexError):
    """A requested store entry is missing or malformed."""


class FeatureStore:
    """Immutable-after-freeze map from (t, layer, kind) to tensor snapshots."""

    def __init__(self):
        self._entries: dict[tuple[int, int, str], torch.Tensor] = {}
        self._frozen = False

    def put(self, t: int, layer: int, kind: str, tensor: torch.Tensor) -> None:
        if self._frozen:
            raise FeatureInjectionError("store is frozen")
        if kind not in KINDS:
            raise FeatureInjectionError(f"unknown feature kind {kind!r}")
        key = (int(t), int(layer), kind)
        if key in self._entries:
            raise FeatureInjectionError(f"duplicate feature key {key}")
        self._entries[key] = tensor.detach().clone()

    def get(self, t: int, layer: int, kind: str) -> torch.Tensor:
        key = (int(t), int(layer), kind)
        try:
            return self._entries[key]
        except KeyError:
            raise FeatureInjectionError(f"feature store has no entry for {key}") from None

    def freeze(self) -> "FeatureStore":
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def keys(self):
        return self._entries.keys()

    def items(self):
        return self._entries.items()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return tuple(key) in self._entries

    @staticmethod
    def merged(*stores: "FeatureStore") -> "FeatureStore":
        """Union of stores (keys must be disjoint)."""
        out = FeatureStore()
        for store in stores:
            for (t, layer, kind), tensor in store.items():
                out.put(t, layer, kind, tensor)
        return out.freeze()


def _normalize(spec: Iterable[tuple[int, str]]) -> frozenset[tuple[int, str]]:
    out = set()
    for layer, kind in spec:
        if kind not in KINDS:
            raise FeatureInjectionError(f"unknown feature kind {kind!r}")
        out.add((int(layer), kind))
    return frozenset(out)


@dataclass(frozen=True)
class FeaturePassSpec:
    """Record/inject instructions applied at every step of one pass."""

    record: frozenset = frozenset()      # {(layer, kind)}
    inject: frozenset = frozenset()      # {(layer, kind)}
    source: FeatureStore | None = None   # read side for inject
    sink: FeatureStore | None = None     # write side for record

    @staticmethod
    def recording(spec: Iterable[tuple[int, str]], sink: FeatureStore) -> "FeaturePassSpec":
        return FeaturePassSpec(record=_normalize(spec), sink=sink)

    @staticmethod
    def injecting(spec: Iterable[tuple[int, str]], source: FeatureStore) -> "FeaturePassSpec":
        return FeaturePassSpec(inject=_normalize(spec), source=source)

    def __post_init__(self):
        if self.record and self.sink is None:
            raise FeatureInjectionError("record spec without a sink store")
        if self.inject and self.source is None:
            raise FeatureInjectionError("inject spec without a source store")

    def router_for(self, t: int) -> "TapRouter":
        return TapRouter(t=int(t), record=self.record, inject=self.inject,
                         source=self.source, sink=self.sink)


@dataclass(frozen=True)
class TapRouter:
    """Per-network-call view of a FeaturePassSpec, bound to one timestep."""

    t: int
    record: frozenset = frozenset()
    inject: frozenset = frozenset()
    source: FeatureStore | None = None
    sink: FeatureStore | None = None

    def maybe_record(self, layer: int, kind: str, tensor: torch.Tensor) -> None:
        if (layer, kind) in self.record:
            self.sink.put(self.t, layer, kind, tensor)

    def maybe_inject(self, layer: int, kind: str, tensor: torch.Tensor) -> torch.Tensor:
        """Return the stored replacement for (layer, kind), or the live tensor."""
        if (layer, kind) not in self.inject:
            return tensor
        stored = self.source.get(self.t, layer, kind)
        if stored.shape != tensor.shape:
            raise FeatureInjectionError(
                f"stored feature {(self.t, layer, kind)} has shape {tuple(stored.shape)}, "
                f"live tensor has {tuple(tensor.shape)}")
        return stored.to(dtype=tensor.dtype)
