"""Latent autoencoder and the PBR decoder heads.

The encoder maps 64x64 RGB to a 4x8x8 latent (downsample factor 8); the
diffuse decoder inverts it with a sigmoid head, so any finite latent
decodes into [0, 1].  The normal/specular/roughness decoders share the
decoder architecture and consume the same latent the diffuse decoder
does.  ``latent_scale`` is calibrated after training so diffusion sees
roughly unit-variance latents; encode divides by it, decode multiplies.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def _norm(c: int) -> nn.GroupNorm:
    return nn.GroupNorm(4, c)


class Encoder(nn.Module):
    def __init__(self, in_channels: int = 3, latent_channels: int = 4,
                 channels: tuple = (24, 32, 48)):
        super().__init__()
        c1, c2, c3 = channels
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, c1, 4, stride=2, padding=1), _norm(c1), nn.SiLU(),
            nn.Conv2d(c1, c2, 4, stride=2, padding=1), _norm(c2), nn.SiLU(),
            nn.Conv2d(c2, c3, 4, stride=2, padding=1), _norm(c3), nn.SiLU(),
            nn.Conv2d(c3, c3, 3, padding=1), _norm(c3), nn.SiLU(),
            nn.Conv2d(c3, latent_channels, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, out_channels: int = 3, latent_channels: int = 4,
                 channels: tuple = (24, 32, 48)):
        super().__init__()
        c1, c2, c3 = channels
        self.net = nn.Sequential(
            nn.Conv2d(latent_channels, c3, 3, padding=1), _norm(c3), nn.SiLU(),
            nn.Conv2d(c3, c3, 3, padding=1), _norm(c3), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(c3, c2, 3, padding=1), _norm(c2), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(c2, c1, 3, padding=1), _norm(c1), nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(c1, 16, 3, padding=1), _norm(16), nn.SiLU(),
            nn.Conv2d(16, out_channels, 3, padding=1),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.net(z))


class AutoEncoder(nn.Module):
    """Encoder plus diffuse decoder with a calibrated latent scale."""

    def __init__(self, image_size: int = 64, latent_channels: int = 4,
                 channels: tuple = (24, 32, 48)):
        super().__init__()
        self.image_size = image_size
        self.latent_channels = latent_channels
        self.downsample = 8
        self.encoder = Encoder(3, latent_channels, channels)
        self.diffuse_decoder = Decoder(3, latent_channels, channels)
        self.register_buffer("latent_scale", torch.ones(()))

    @property
    def latent_size(self) -> int:
        return self.image_size // self.downsample

    def _check_image(self, image: torch.Tensor):
        if image.shape[-1] != self.image_size or image.shape[-2] != self.image_size:
            raise ValueError(
                f"expected {self.image_size}x{self.image_size} input, got {tuple(image.shape)}")

    def _check_latent(self, z: torch.Tensor):
        want = (self.latent_channels, self.latent_size, self.latent_size)
        if tuple(z.shape[-3:]) != want:
            raise ValueError(f"expected latent shape {want}, got {tuple(z.shape)}")

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        """Image in [0,1], shape (3,H,W) or (B,3,H,W) -> scaled latent."""
        self._check_image(image)
        batched = image.dim() == 4
        x = image if batched else image[None]
        z = self.encoder(x * 2.0 - 1.0) / self.latent_scale
        return z if batched else z[0]

    def decode_diffuse(self, z: torch.Tensor) -> torch.Tensor:
        self._check_latent(z)
        batched = z.dim() == 4
        zb = z if batched else z[None]
        img = self.diffuse_decoder(zb * self.latent_scale)
        return img if batched else img[0]

    def calibrate_latent_scale(self, images: torch.Tensor) -> float:
        """Set latent_scale to the raw-encoder output std over a batch."""
        with torch.no_grad():
            self.latent_scale.fill_(1.0)
            z = self.encode(images)
            scale = z.std().clamp(min=1e-6)
            self.latent_scale.fill_(scale.item())
        return float(scale)


PBR_CHANNELS = {"normal": 3, "specular": 1, "roughness": 1}


class PbrDecoderSet(nn.Module):
    """Normal, specular and roughness decoders over the shared latent."""

    def __init__(self, latent_channels: int = 4, channels: tuple = (24, 32, 48)):
        super().__init__()
        self.heads = nn.ModuleDict({
            name: Decoder(out_channels, latent_channels, channels)
            for name, out_channels in PBR_CHANNELS.items()
        })

    def decode(self, ae: AutoEncoder, z: torch.Tensor, which: str) -> torch.Tensor:
        if which not in self.heads:
            raise KeyError(f"unknown PBR map {which!r}; expected one of {tuple(self.heads)}")
        ae._check_latent(z)
        batched = z.dim() == 4
        zb = z if batched else z[None]
        out = self.heads[which](zb * ae.latent_scale)
        return out if batched else out[0]
