"""Frozen random-feature perceptual distance.

A three-scale stack of fixed, seeded convolutional features; the
distance is the mean squared difference of channel-normalized feature
maps, summed over scales.  It is deterministic, symmetric, zero on
identical inputs, differentiable everywhere (tanh nonlinearities), and
works in float64 for gradient checks via ``.double()``.
"""

from __future__ import annotations

import torch
import torch.nn as nn

_DEFAULT_SEED = 0x5EED


class PerceptualMetric(nn.Module):
    def __init__(self, in_channels: int = 3, feature_channels: int = 12,
                 scales: tuple = (1, 2, 4), seed: int = _DEFAULT_SEED):
        super().__init__()
        self.scales = scales
        g = torch.Generator().manual_seed(seed)
        self.stages = nn.ModuleList()
        for _ in scales:
            conv1 = nn.Conv2d(in_channels, feature_channels, 5, padding=2)
            conv2 = nn.Conv2d(feature_channels, feature_channels, 3, padding=1)
            for conv in (conv1, conv2):
                nn.init.normal_(conv.weight, std=0.4, generator=g)
                nn.init.normal_(conv.bias, std=0.1, generator=g)
            self.stages.append(nn.Sequential(conv1, nn.Tanh(), conv2, nn.Tanh()))
        for p in self.parameters():
            p.requires_grad_(False)

    def _as_batch(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 2:
            x = x[None]
        if x.dim() == 3:
            x = x[None]
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        return x

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = self._as_batch(x)
        out = []
        for scale, stage in zip(self.scales, self.stages):
            xs = torch.nn.functional.avg_pool2d(x, scale) if scale > 1 else x
            f = stage(xs)
            norm = f.square().sum(dim=1, keepdim=True).sqrt() + 1e-8
            out.append(f / norm)
        return out

    def forward(self, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
        if a.shape != b.shape:
            raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        fa = self.features(a)
        fb = self.features(b)
        return sum((x - y).square().mean() for x, y in zip(fa, fb))

    distance = forward
