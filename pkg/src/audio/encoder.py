"""
Frozen audio featurizer standing in for CLAP.

Pools per-band statistics (mean, std, max over frames) of a log-mel
spectrogram, standardizes the pooled vector, and maps it through a fixed
seeded random projection to D_a dimensions followed by L2 normalization.
There is no trainable state: outputs never change across training steps.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from src.data.preprocessing import MelSpectrogram
from src.utils.validation_utils import ArgumentError


class FrozenAudioEncoder:
    """Deterministic mel-statistics featurizer: [n_mels, frames] -> unit vector in R^D_a."""

    def __init__(self, n_mels: int = 64, embed_dim: int = 512, seed: int = 1234):
        self.n_mels = n_mels
        self.embed_dim = embed_dim
        self.seed = seed
        generator = torch.Generator().manual_seed(seed)
        self.projection = torch.randn(3 * n_mels, embed_dim, generator=generator) / math.sqrt(3 * n_mels)

    def pooled_statistics(self, mels: torch.Tensor) -> torch.Tensor:
        """[B, n_mels, frames] -> standardized [B, 3 * n_mels]."""
        stats = torch.cat(
            [mels.mean(dim=-1), mels.std(dim=-1, unbiased=False), mels.amax(dim=-1)],
            dim=-1,
        )
        centered = stats - stats.mean(dim=-1, keepdim=True)
        return centered / (centered.std(dim=-1, keepdim=True, unbiased=False) + 1e-6)

    def encode_batch(self, mels: torch.Tensor) -> torch.Tensor:
        if mels.dim() == 2:
            mels = mels.unsqueeze(0)
        if mels.shape[-2] != self.n_mels:
            raise ArgumentError(f"Expected {self.n_mels} mel bins, got {mels.shape[-2]}")
        features = self.pooled_statistics(mels.float())
        embedded = features @ self.projection.to(features.device)
        return F.normalize(embedded, dim=-1)

    def __call__(self, mel: MelSpectrogram | torch.Tensor) -> torch.Tensor:
        values = mel.values if isinstance(mel, MelSpectrogram) else mel
        out = self.encode_batch(values)
        return out[0] if values.dim() == 2 else out


def encode_audio(mel: MelSpectrogram, encoder: FrozenAudioEncoder | None = None) -> torch.Tensor:
    """Embed one mel spectrogram into a unit-norm AudioEmbedding vector [D_a]."""
    encoder = encoder or FrozenAudioEncoder(n_mels=mel.n_mels)
    return encoder(mel)


__all__ = ["FrozenAudioEncoder", "encode_audio"]
