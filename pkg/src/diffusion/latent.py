"""Latent codec interface; diffusion runs in pixel space through the identity codec."""

from __future__ import annotations

from typing import Protocol

import numpy as np
import torch


class LatentCodec(Protocol):
    def encode(self, images: torch.Tensor) -> torch.Tensor: ...

    def decode(self, latents: torch.Tensor) -> torch.Tensor: ...


class IdentityCodec:
    """Images [B, 3, H, W] in [-1, 1] are their own latents."""

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        return images

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        return latents.clamp(-1.0, 1.0)


def pixels_to_tensor(pixels: np.ndarray) -> torch.Tensor:
    """H x W x 3 (or B x H x W x 3) array -> [B, 3, H, W] float tensor."""
    tensor = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32))
    if tensor.dim() == 3:
        tensor = tensor.unsqueeze(0)
    return tensor.permute(0, 3, 1, 2).contiguous()


def tensor_to_pixels(images: torch.Tensor) -> np.ndarray:
    """[B, 3, H, W] -> B x H x W x 3 array clipped to [-1, 1]."""
    return images.detach().clamp(-1.0, 1.0).permute(0, 2, 3, 1).cpu().numpy()


__all__ = ["LatentCodec", "IdentityCodec", "pixels_to_tensor", "tensor_to_pixels"]
