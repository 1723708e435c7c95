"""
Audio projector: clip embedding [D_a] -> conditioning tokens [K, C].

A linear lift produces a coarse K' = ceil(K / 4) position grid, two 1-D
convolutions mix it, two stride-2 deconvolutions expand it to 4K' >= K
positions (trimmed to K), and four pre-norm self-attention blocks refine
the token sequence before a final projection to the text-token width C.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Dict

import torch
import torch.nn as nn

from src.utils.validation_utils import (
    ArtifactNotFoundError,
    ConfigurationError,
    require,
    require_dim,
)

NUM_SELF_ATTENTION_BLOCKS = 4


class SelfAttentionBlock(nn.Module):
    """Pre-norm self-attention followed by a pre-norm feed-forward."""

    def __init__(self, dim: int, heads: int = 1, ff_mult: int = 4):
        super().__init__()
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, dim * ff_mult),
            nn.GELU(),
            nn.Linear(dim * ff_mult, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm_attn(x)
        x = x + self.attn(h, h, h, need_weights=False)[0]
        return x + self.ff(self.norm_ff(x))


class AudioProjector(nn.Module):
    """Trainable mapper from a frozen audio embedding to K x C audio tokens."""

    def __init__(
        self,
        embed_dim: int = 512,
        num_tokens: int = 8,
        token_dim: int = 64,
        hidden_channels: int = 64,
        heads: int = 1,
        ff_mult: int = 4,
    ):
        super().__init__()
        self.embed_dim = embed_dim
        self.num_tokens = num_tokens
        self.token_dim = token_dim
        self.hidden_channels = hidden_channels
        self.coarse_positions = math.ceil(num_tokens / 4)

        self.lift = nn.Linear(embed_dim, hidden_channels * self.coarse_positions)
        self.convs = nn.Sequential(
            nn.Conv1d(hidden_channels, hidden_channels, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv1d(hidden_channels, hidden_channels, kernel_size=3, padding=1),
            nn.GELU(),
        )
        self.deconvs = nn.Sequential(
            nn.ConvTranspose1d(hidden_channels, hidden_channels, kernel_size=4, stride=2, padding=1),
            nn.GELU(),
            nn.ConvTranspose1d(hidden_channels, token_dim, kernel_size=4, stride=2, padding=1),
        )
        self.position = nn.Parameter(torch.zeros(1, num_tokens, token_dim))
        nn.init.normal_(self.position, std=0.02)
        self.blocks = nn.ModuleList(
            SelfAttentionBlock(token_dim, heads, ff_mult) for _ in range(NUM_SELF_ATTENTION_BLOCKS)
        )
        self.norm_out = nn.LayerNorm(token_dim)
        self.proj_out = nn.Linear(token_dim, token_dim)

    def header(self) -> Dict[str, int]:
        return {
            "num_tokens": self.num_tokens,
            "token_dim": self.token_dim,
            "embed_dim": self.embed_dim,
            "hidden_channels": self.hidden_channels,
            "num_blocks": len(self.blocks),
            "heads": self.blocks[0].attn.num_heads,
            "ff_mult": self.blocks[0].ff[0].out_features // self.token_dim,
        }

    def forward(self, embedding: torch.Tensor) -> torch.Tensor:
        """[B, D_a] (or [D_a]) -> [B, K, C] (or [K, C])."""
        single = embedding.dim() == 1
        if single:
            embedding = embedding.unsqueeze(0)
        require(embedding.dim() == 2, f"Audio embeddings must be [B, D_a], got shape {tuple(embedding.shape)}")
        require_dim(embedding, (self.embed_dim,), "audio embedding")

        grid = self.lift(embedding).view(-1, self.hidden_channels, self.coarse_positions)
        grid = self.deconvs(self.convs(grid))
        tokens = grid[:, :, : self.num_tokens].transpose(1, 2) + self.position
        for block in self.blocks:
            tokens = block(tokens)
        tokens = self.proj_out(self.norm_out(tokens))
        return tokens[0] if single else tokens


def project(embedding: torch.Tensor, projector: AudioProjector) -> torch.Tensor:
    """Map an AudioEmbedding to AudioTokens [K, C]."""
    return projector(embedding)


def null_audio_tokens(projector: AudioProjector, batch_size: int | None = None) -> torch.Tensor:
    """a_null: the projection of the all-zero audio embedding."""
    param = next(projector.parameters())
    zeros = torch.zeros(batch_size or 1, projector.embed_dim, dtype=param.dtype, device=param.device)
    tokens = projector(zeros)
    return tokens if batch_size is not None else tokens[0]


def build_projector(header: Dict[str, Any]) -> AudioProjector:
    return AudioProjector(
        embed_dim=int(header["embed_dim"]),
        num_tokens=int(header["num_tokens"]),
        token_dim=int(header["token_dim"]),
        hidden_channels=int(header["hidden_channels"]),
        heads=int(header.get("heads", 1)),
        ff_mult=int(header.get("ff_mult", 4)),
    )


def save_projector(projector: AudioProjector, path: Path | str) -> Path:
    """Write the projector as a header + named parameter archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"header": projector.header(), "state_dict": projector.state_dict()}, path)
    return path


def load_projector(path: Path | str) -> AudioProjector:
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(f"Projector checkpoint not found: {path}")
    archive = torch.load(path, map_location="cpu", weights_only=False)
    header = archive.get("header")
    if not header or header.get("num_blocks") != NUM_SELF_ATTENTION_BLOCKS:
        raise ConfigurationError(f"Incompatible projector checkpoint header in {path}: {header}")
    projector = build_projector(header)
    projector.load_state_dict(archive["state_dict"])
    return projector


__all__ = [
    "NUM_SELF_ATTENTION_BLOCKS",
    "SelfAttentionBlock",
    "AudioProjector",
    "project",
    "null_audio_tokens",
    "build_projector",
    "save_projector",
    "load_projector",
]
