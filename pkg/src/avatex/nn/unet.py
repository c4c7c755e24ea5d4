"""Denoiser U-Net with addressable upsampling layers.

Each upsampling layer is a residual block optionally followed by
self-attention and cross-attention.  The residual-branch delta (kind
``res``) and the self-attention ``query``/``key`` projections can be
recorded into a FeatureStore or replaced from one, addressed by the
layer's index in execution order.  Value features and cross-attention
always come from the live pass.

The latent is 4x8x8; levels run at 8/4/2 with attention on the two
coarsest.  The up path has 9 addressable layers (3 per level); layers
0..5 carry attention.  The output convolution is zero-initialized, so a
freshly constructed network predicts exactly zero noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import NumericError
from .conditioning import Condition, Vocabulary
from .features import FeatureInjectionError, FeatureStore, FeaturePassSpec, TapRouter


def _norm(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(4, c)


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10_000.0) * torch.arange(half, dtype=torch.float32, device=t.device) / half
    )
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = _norm(c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, c_out)
        self.norm2 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb, router: TapRouter | None = None, layer: int | None = None):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.temb_proj(torch.nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        if router is not None and layer is not None:
            router.maybe_record(layer, "res", h)
            h = router.maybe_inject(layer, "res", h)
        return self.skip(x) + h


class SelfAttention(nn.Module):
    def __init__(self, c: int):
        super().__init__()
        self.norm = _norm(c)
        self.to_q = nn.Linear(c, c, bias=False)
        self.to_k = nn.Linear(c, c, bias=False)
        self.to_v = nn.Linear(c, c, bias=False)
        self.to_out = nn.Linear(c, c)

    def forward(self, x, router: TapRouter | None = None, layer: int | None = None):
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = self.to_q(tokens)
        k = self.to_k(tokens)
        v = self.to_v(tokens)
        if router is not None and layer is not None:
            router.maybe_record(layer, "query", q)
            router.maybe_record(layer, "key", k)
            q = router.maybe_inject(layer, "query", q)
            k = router.maybe_inject(layer, "key", k)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        out = self.to_out(attn @ v)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class CrossAttention(nn.Module):
    def __init__(self, c: int, ctx_dim: int):
        super().__init__()
        self.norm = _norm(c)
        self.to_q = nn.Linear(c, c, bias=False)
        self.to_k = nn.Linear(ctx_dim, c, bias=False)
        self.to_v = nn.Linear(ctx_dim, c, bias=False)
        self.to_out = nn.Linear(c, c)

    def forward(self, x, ctx):
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = self.to_q(tokens)
        k = self.to_k(ctx)
        v = self.to_v(ctx)
        attn = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1)
        out = self.to_out(attn @ v)
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class DownBlock(nn.Module):
    def __init__(self, c_in, c_out, temb_dim, ctx_dim, attn: bool):
        super().__init__()
        self.res = ResBlock(c_in, c_out, temb_dim)
        self.self_attn = SelfAttention(c_out) if attn else None
        self.cross_attn = CrossAttention(c_out, ctx_dim) if attn else None

    def forward(self, x, temb, ctx):
        x = self.res(x, temb)
        if self.self_attn is not None:
            x = self.self_attn(x)
            x = self.cross_attn(x, ctx)
        return x


class UpLayer(nn.Module):
    """One addressable upsampling layer: skip concat -> res -> (attention)."""

    def __init__(self, c_in, c_skip, c_out, temb_dim, ctx_dim, attn: bool):
        super().__init__()
        self.res = ResBlock(c_in + c_skip, c_out, temb_dim)
        self.self_attn = SelfAttention(c_out) if attn else None
        self.cross_attn = CrossAttention(c_out, ctx_dim) if attn else None

    @property
    def has_attention(self) -> bool:
        return self.self_attn is not None

    def forward(self, x, skip, temb, ctx, router, layer):
        x = torch.cat([x, skip], dim=1)
        x = self.res(x, temb, router, layer)
        if self.self_attn is not None:
            x = self.self_attn(x, router, layer)
            x = self.cross_attn(x, ctx)
        return x


@dataclass(frozen=True)
class UNetSpec:
    latent_channels: int = 4
    latent_size: int = 8
    channels: tuple = (40, 56, 64)
    cond_dim: int = 48
    temb_dim: int = 96


class DenoiserNetwork(nn.Module):
    """Noise-prediction U-Net with recordable/injectable up-path features."""

    def __init__(self, spec: UNetSpec, vocab: Vocabulary):
        super().__init__()
        self.spec = spec
        self.vocab = vocab
        c0, c1, c2 = spec.channels
        td, cd = spec.temb_dim, spec.cond_dim

        self.time_mlp = nn.Sequential(nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td))
        self.token_embedder = nn.Embedding(len(vocab), cd)

        self.in_conv = nn.Conv2d(spec.latent_channels, c0, 3, padding=1)
        self.down0a = DownBlock(c0, c0, td, cd, attn=False)
        self.down0b = DownBlock(c0, c0, td, cd, attn=False)
        self.downsample0 = nn.Conv2d(c0, c0, 4, stride=2, padding=1)
        self.down1a = DownBlock(c0, c1, td, cd, attn=True)
        self.down1b = DownBlock(c1, c1, td, cd, attn=True)
        self.downsample1 = nn.Conv2d(c1, c1, 4, stride=2, padding=1)
        self.down2a = DownBlock(c1, c2, td, cd, attn=True)
        self.down2b = DownBlock(c2, c2, td, cd, attn=True)

        self.mid1 = ResBlock(c2, c2, td)
        self.mid_attn = SelfAttention(c2)
        self.mid_cross = CrossAttention(c2, cd)
        self.mid2 = ResBlock(c2, c2, td)

        # Skip channels in pop order; three addressable layers per level.
        self.up_layers = nn.ModuleList([
            UpLayer(c2, c2, c2, td, cd, attn=True),   # 0  (2x2)
            UpLayer(c2, c2, c2, td, cd, attn=True),   # 1
            UpLayer(c2, c1, c2, td, cd, attn=True),   # 2
            UpLayer(c2, c1, c1, td, cd, attn=True),   # 3  (4x4)
            UpLayer(c1, c1, c1, td, cd, attn=True),   # 4
            UpLayer(c1, c0, c1, td, cd, attn=True),   # 5
            UpLayer(c1, c0, c0, td, cd, attn=False),  # 6  (8x8)
            UpLayer(c0, c0, c0, td, cd, attn=False),  # 7
            UpLayer(c0, c0, c0, td, cd, attn=False),  # 8
        ])
        self.upsample_after = {2: nn.Conv2d(c2, c2, 3, padding=1),
                               5: nn.Conv2d(c1, c1, 3, padding=1)}
        self.up_convs = nn.ModuleList([self.upsample_after[2], self.upsample_after[5]])

        self.out_norm = _norm(c0)
        self.out_conv = nn.Conv2d(c0, spec.latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    # -- layer addressing -------------------------------------------------

    @property
    def num_up_layers(self) -> int:
        return len(self.up_layers)

    @property
    def up_layer_attention(self) -> tuple[bool, ...]:
        return tuple(layer.has_attention for layer in self.up_layers)

    @property
    def up_layer_resolution(self) -> tuple[int, ...]:
        s = self.spec.latent_size
        return (s // 4,) * 3 + (s // 2,) * 3 + (s,) * 3

    def injectable_layers(self, kind: str) -> tuple[int, ...]:
        if kind == "res":
            return tuple(range(self.num_up_layers))
        return tuple(i for i, a in enumerate(self.up_layer_attention) if a)

    def validate_spec(self, spec) -> None:
        for layer, kind in spec:
            if not 0 <= layer < self.num_up_layers:
                raise FeatureInjectionError(f"unknown up-layer index {layer}")
            if kind in ("query", "key") and not self.up_layer_attention[layer]:
                raise FeatureInjectionError(
                    f"layer {layer} has no self-attention; cannot address {kind}")

    @property
    def null_condition(self) -> Condition:
        return self.vocab.null()

    # -- forward -----------------------------------------------------------

    def _context(self, conditions, device) -> torch.Tensor:
        if isinstance(conditions, torch.Tensor):
            ids = conditions.to(device=device, dtype=torch.long)
        else:
            ids = torch.tensor([c.tokens for c in conditions], dtype=torch.long, device=device)
        return self.token_embedder(ids)

    def forward(self, z: torch.Tensor, t: torch.Tensor, conditions: list[Condition],
                router: TapRouter | None = None) -> torch.Tensor:
        if router is not None:
            self.validate_spec(router.record | router.inject)
        temb = self.time_mlp(timestep_embedding(t, self.spec.temb_dim))
        ctx = self._context(conditions, z.device)

        h = self.in_conv(z)
        skips = [h]
        h = self.down0a(h, temb, ctx); skips.append(h)
        h = self.down0b(h, temb, ctx); skips.append(h)
        h = self.downsample0(h); skips.append(h)
        h = self.down1a(h, temb, ctx); skips.append(h)
        h = self.down1b(h, temb, ctx); skips.append(h)
        h = self.downsample1(h); skips.append(h)
        h = self.down2a(h, temb, ctx); skips.append(h)
        h = self.down2b(h, temb, ctx); skips.append(h)

        h = self.mid1(h, temb)
        h = self.mid_attn(h)
        h = self.mid_cross(h, ctx)
        h = self.mid2(h, temb)

        for i, layer in enumerate(self.up_layers):
            h = layer(h, skips.pop(), temb, ctx, router, i)
            if not torch.isfinite(h).all():
                raise NumericError(f"non-finite activation at up-layer {i}")
            if i in self.upsample_after:
                h = torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest")
                h = self.upsample_after[i](h)

        out = self.out_conv(torch.nn.functional.silu(self.out_norm(h)))
        if not torch.isfinite(out).all():
            raise NumericError("non-finite denoiser output")
        return out

    def predict(self, z: torch.Tensor, t: int, cond: Condition,
                router: TapRouter | None = None) -> torch.Tensor:
        """Single-sample convenience wrapper around forward()."""
        batched = z.dim() == 4
        zb = z if batched else z[None]
        tb = torch.full((zb.shape[0],), int(t), dtype=torch.long, device=z.device)
        conds = [cond] * zb.shape[0] if isinstance(cond, Condition) else list(cond)
        out = self.forward(zb, tb, conds, router=router)
        return out if batched else out[0]


# -- spec-level convenience operations -------------------------------------

def denoise(net: DenoiserNetwork, z: torch.Tensor, t: int, cond: Condition) -> torch.Tensor:
    return net.predict(z, t, cond)


def denoise_with_taps(net: DenoiserNetwork, z: torch.Tensor, t: int, cond: Condition,
                      record_spec) -> tuple[torch.Tensor, FeatureStore]:
    """Plain denoise plus snapshots of the requested (layer, kind) features."""
    store = FeatureStore()
    spec = FeaturePassSpec.recording(record_spec, store)
    net.validate_spec(spec.record)
    eps = net.predict(z, t, cond, router=spec.router_for(t))
    return eps, store.freeze()


def denoise_with_injection(net: DenoiserNetwork, z: torch.Tensor, t: int, cond: Condition,
                           store: FeatureStore, inject_spec) -> torch.Tensor:
    """Denoise with q/k/res features at selected layers replaced from a store."""
    spec = FeaturePassSpec.injecting(inject_spec, store)
    net.validate_spec(spec.inject)
    return net.predict(z, t, cond, router=spec.router_for(t))
