"""
Attention primitives of the denoising UNet.

Attention exposes its softmax map so editing can record and overwrite
self-attention probabilities. Projection names follow the diffusers
convention (to_q / to_k / to_v / to_out).
"""

from __future__ import annotations

from typing import Optional, Tuple

import torch
import torch.nn as nn


class Attention(nn.Module):
    def __init__(self, query_dim: int, context_dim: Optional[int] = None, heads: int = 1):
        super().__init__()
        context_dim = context_dim or query_dim
        if query_dim % heads:
            raise ValueError(f"query_dim {query_dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = query_dim // heads
        self.scale = self.head_dim ** -0.5
        self.to_q = nn.Linear(query_dim, query_dim, bias=False)
        self.to_k = nn.Linear(context_dim, query_dim, bias=False)
        self.to_v = nn.Linear(context_dim, query_dim, bias=False)
        self.to_out = nn.Linear(query_dim, query_dim)

    @property
    def context_dim(self) -> int:
        return self.to_k.in_features

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, _ = x.shape
        return x.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def forward(
        self,
        x: torch.Tensor,
        context: Optional[torch.Tensor] = None,
        attention_override: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Args:
            x: [B, L, D] queries
            context: [B, M, D_ctx] keys/values; None means self-attention
            attention_override: [B or 1, heads, L, M] map used instead of the computed softmax

        Returns:
            (output [B, L, D], attention probabilities [B, heads, L, M])
        """
        context = x if context is None else context
        q, k, v = self._split(self.to_q(x)), self._split(self.to_k(context)), self._split(self.to_v(context))
        if attention_override is not None:
            probs = attention_override.to(dtype=v.dtype, device=v.device).expand(q.shape[0], -1, -1, -1)
        else:
            probs = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        out = (probs @ v).transpose(1, 2).reshape(x.shape)
        return self.to_out(out), probs


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 2):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, dim * mult), nn.GELU(), nn.Linear(dim * mult, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


__all__ = ["Attention", "FeedForward"]
