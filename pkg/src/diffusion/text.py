"""
Caption embedder producing text tokens c_text [K, C].

Word embeddings plus a learned positional encoding, contextualized by one
pre-norm transformer layer so every position carries the caption's class.
The all-null id sequence yields the null-text tokens used by guidance.
"""

from __future__ import annotations

from typing import Dict, Optional

import torch
import torch.nn as nn

from src.data.captions import NULL_TOKEN_ID
from src.utils.validation_utils import ArgumentError


class CaptionEmbedder(nn.Module):
    def __init__(self, vocab_size: int, num_tokens: int = 8, token_dim: int = 64, heads: int = 1):
        super().__init__()
        self.vocab_size = vocab_size
        self.num_tokens = num_tokens
        self.token_dim = token_dim
        self.heads = heads
        self.embedding = nn.Embedding(vocab_size, token_dim)
        self.position = nn.Parameter(torch.zeros(1, num_tokens, token_dim))
        nn.init.normal_(self.position, std=0.02)
        self.context = nn.TransformerEncoderLayer(
            d_model=token_dim,
            nhead=heads,
            dim_feedforward=token_dim * 2,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        self.norm = nn.LayerNorm(token_dim)

    def header(self) -> Dict[str, int]:
        return {
            "vocab_size": self.vocab_size,
            "num_tokens": self.num_tokens,
            "token_dim": self.token_dim,
            "heads": self.heads,
        }

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """[B, K] integer ids -> [B, K, C] tokens."""
        if ids.dim() == 1:
            ids = ids.unsqueeze(0)
        if ids.shape[-1] != self.num_tokens:
            raise ArgumentError(f"Expected {self.num_tokens} caption ids, got {ids.shape[-1]}")
        if bool((ids < 0).any()) or bool((ids >= self.vocab_size).any()):
            raise ArgumentError("caption id outside the vocabulary")
        return self.norm(self.context(self.embedding(ids) + self.position))

    def null_tokens(self, batch_size: int = 1, device: Optional[torch.device] = None) -> torch.Tensor:
        """t_null: embedding of the all-null caption, [batch_size, K, C]."""
        device = device or self.position.device
        ids = torch.full((batch_size, self.num_tokens), NULL_TOKEN_ID, dtype=torch.long, device=device)
        return self(ids)


def align_tokens(tokens: torch.Tensor, num_tokens: int) -> torch.Tensor:
    """Resample a [B, K_src, C] token sequence to num_tokens positions by adaptive average pooling."""
    if tokens.shape[1] == num_tokens:
        return tokens
    pooled = nn.functional.adaptive_avg_pool1d(tokens.transpose(1, 2), num_tokens)
    return pooled.transpose(1, 2)


__all__ = ["CaptionEmbedder", "align_tokens"]
