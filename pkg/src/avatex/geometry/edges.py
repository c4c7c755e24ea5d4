"""Edge operators: a differentiable soft detector for guidance and the
classic non-differentiable detector for evaluation."""

from __future__ import annotations

import numpy as np
import torch

_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T.clone()
_LUMA = (0.299, 0.587, 0.114)


def luminance(image: torch.Tensor) -> torch.Tensor:
    """(3,H,W) or (H,W) -> (H,W)."""
    if image.dim() == 2:
        return image
    if image.shape[0] == 1:
        return image[0]
    w = torch.tensor(_LUMA, dtype=image.dtype, device=image.device)
    return torch.einsum("c,chw->hw", w, image)


def sobel_magnitude(image: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """Unnormalized 3x3 Sobel gradient magnitude with replicate padding."""
    y = luminance(image)[None, None]
    y = torch.nn.functional.pad(y, (1, 1, 1, 1), mode="replicate")
    kx = _SOBEL_X.to(dtype=image.dtype, device=image.device)[None, None]
    ky = _SOBEL_Y.to(dtype=image.dtype, device=image.device)[None, None]
    gx = torch.nn.functional.conv2d(y, kx)
    gy = torch.nn.functional.conv2d(y, ky)
    return (gx.square() + gy.square() + eps).sqrt()[0, 0]


def soft_edges(image: torch.Tensor, tau: float = 0.1, sharpness: float = 10.0) -> torch.Tensor:
    """Smooth-thresholded Sobel magnitude, differentiable everywhere.

    A constant image yields sigmoid(-sharpness * tau) (modulo the tiny
    magnitude floor) at every pixel.
    """
    was_numpy = isinstance(image, np.ndarray)
    if was_numpy:
        image = torch.as_tensor(image, dtype=torch.float64)
    mag = sobel_magnitude(image)
    out = torch.sigmoid(sharpness * (mag - tau))
    return out.numpy() if was_numpy else out


def canny_edges(image, sigma: float = 1.0, low: float = 0.1, high: float = 0.2) -> np.ndarray:
    """Classic detector (gaussian, NMS, hysteresis); evaluation only."""
    from skimage.feature import canny

    if isinstance(image, torch.Tensor):
        image = image.detach().cpu().numpy()
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = np.einsum("c,chw->hw", np.asarray(_LUMA), image)
    return canny(image, sigma=sigma, low_threshold=low, high_threshold=high)
