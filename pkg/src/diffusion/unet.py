"""
Toy text-conditioned denoising UNet with sixteen named cross-attention sites.

Layout (32x32 input, widths (w0, w1)):

    stem 2x2/2 -> 16x16, w0    encoder sites 0, 1, 2
    down 2x2/2 -> 8x8,   w1    encoder sites 3, 4, 5
                               middle site 6
                               decoder sites 7, 8, 9, 10   (+ skip from encoder level 1)
    up   2x2/2 -> 16x16, w0    decoder sites 11 .. 15      (+ skip from encoder level 0)
    head 2x2/2 -> 32x32, 3

Every site is a SiteBlock: residual layer, self-attention, text
cross-attention, optional gated audio adapter, feed-forward.
"""

from __future__ import annotations

import math
from typing import Dict, Iterator, List, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from config.settings import DECODER_SITES, ENCODER_SITES, MIDDLE_SITE, NUM_SITES
from src.diffusion.attention import Attention, FeedForward
from src.diffusion.hooks import FeatureHooks
from src.utils.validation_utils import ArgumentError

_NO_HOOKS = FeatureHooks()


def timestep_embedding(t: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding [B] -> [B, dim]."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float32, device=t.device) / half)
    args = t.float()[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb


class ResidualLayer(nn.Module):
    def __init__(self, dim: int, time_dim: int, groups: int = 8):
        super().__init__()
        self.norm1 = nn.GroupNorm(groups, dim)
        self.conv1 = nn.Conv2d(dim, dim, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, dim)
        self.norm2 = nn.GroupNorm(groups, dim)
        self.conv2 = nn.Conv2d(dim, dim, 3, padding=1)

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return x + h


class SiteBlock(nn.Module):
    """One UNet block carrying a named cross-attention site."""

    def __init__(
        self,
        site: int,
        dim: int,
        context_dim: int,
        time_dim: int,
        heads: int = 1,
        ff_mult: int = 2,
        groups: int = 8,
    ):
        super().__init__()
        self.site = site
        self.dim = dim
        self.resnet = ResidualLayer(dim, time_dim, groups)
        self.norm1 = nn.LayerNorm(dim)
        self.attn1 = Attention(dim, heads=heads)
        self.norm2 = nn.LayerNorm(dim)
        self.attn2 = Attention(dim, context_dim, heads=heads)
        self.norm3 = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult)

    def forward(
        self,
        x: torch.Tensor,
        temb: torch.Tensor,
        c_text: torch.Tensor,
        hooks: FeatureHooks,
        adapter: Optional[nn.Module] = None,
        c_audio: Optional[torch.Tensor] = None,
        beta: float = 1.0,
    ) -> torch.Tensor:
        h = hooks.residual(self.site, self.resnet(x, temb))
        b, d, height, width = h.shape
        seq = h.flatten(2).transpose(1, 2)

        attn, probs = self.attn1(self.norm1(seq), attention_override=hooks.self_attention_override(self.site))
        hooks.on_self_attention(self.site, probs)
        seq = seq + attn
        seq = seq + self.attn2(self.norm2(seq), c_text)[0]
        if adapter is not None:
            delta = adapter(seq, c_audio, beta)
            hooks.on_adapter_output(self.site, delta)
            seq = seq + delta
        seq = seq + self.ff(self.norm3(seq))
        return seq.transpose(1, 2).reshape(b, d, height, width)


class DenoisingUNet(nn.Module):
    """
    Noise predictor eps(z_t, t, c_text [, c_audio, adapters]).

    The backbone owns no adapter parameters; an AdapterState is passed in
    at call time so the same frozen weights serve every insertion set.
    """

    def __init__(
        self,
        in_channels: int = 3,
        widths: Tuple[int, int] = (64, 128),
        context_dim: int = 64,
        time_dim: int = 128,
        heads: int = 1,
        ff_mult: int = 2,
        groups: int = 8,
    ):
        super().__init__()
        w0, w1 = widths
        self.in_channels = in_channels
        self.widths = (w0, w1)
        self.context_dim = context_dim
        self.time_dim = time_dim
        self.heads = heads
        self.ff_mult = ff_mult
        self.groups = groups

        def block(site: int, dim: int) -> SiteBlock:
            return SiteBlock(site, dim, context_dim, time_dim, heads, ff_mult, groups)

        self.time_mlp = nn.Sequential(nn.Linear(time_dim, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))
        self.stem = nn.Conv2d(in_channels, w0, kernel_size=2, stride=2)
        self.encoder0 = nn.ModuleList(block(s, w0) for s in ENCODER_SITES[:3])
        self.down = nn.Conv2d(w0, w1, kernel_size=2, stride=2)
        self.encoder1 = nn.ModuleList(block(s, w1) for s in ENCODER_SITES[3:])
        self.middle = block(MIDDLE_SITE, w1)
        self.decoder1 = nn.ModuleList(block(s, w1) for s in DECODER_SITES[:4])
        self.up = nn.ConvTranspose2d(w1, w0, kernel_size=2, stride=2)
        self.decoder0 = nn.ModuleList(block(s, w0) for s in DECODER_SITES[4:])
        self.head_norm = nn.GroupNorm(groups, w0)
        self.head = nn.ConvTranspose2d(w0, in_channels, kernel_size=2, stride=2)

    def header(self) -> Dict[str, object]:
        return {
            "in_channels": self.in_channels,
            "widths": list(self.widths),
            "context_dim": self.context_dim,
            "time_dim": self.time_dim,
            "heads": self.heads,
            "ff_mult": self.ff_mult,
            "groups": self.groups,
        }

    def site_blocks(self) -> Iterator[SiteBlock]:
        yield from self.encoder0
        yield from self.encoder1
        yield self.middle
        yield from self.decoder1
        yield from self.decoder0

    def site(self, index: int) -> SiteBlock:
        if not (0 <= index < NUM_SITES):
            raise ArgumentError(f"site index must lie in [0, {NUM_SITES}), got {index}")
        return list(self.site_blocks())[index]

    def site_widths(self) -> Dict[int, int]:
        return {blk.site: blk.dim for blk in self.site_blocks()}

    def _run(
        self,
        blocks: List[SiteBlock] | nn.ModuleList,
        h: torch.Tensor,
        temb: torch.Tensor,
        c_text: torch.Tensor,
        c_audio: Optional[torch.Tensor],
        adapters,
        hooks: FeatureHooks,
        beta: Optional[float],
    ) -> torch.Tensor:
        for blk in blocks:
            adapter = adapters.get(blk.site) if adapters is not None else None
            site_beta = adapters.beta_for(blk.site, beta) if adapter is not None else 1.0
            h = blk(h, temb, c_text, hooks, adapter, c_audio, site_beta)
        return h

    def forward(
        self,
        z_t: torch.Tensor,
        t: int | torch.Tensor,
        c_text: torch.Tensor,
        c_audio: Optional[torch.Tensor] = None,
        adapters=None,
        hooks: Optional[FeatureHooks] = None,
        beta: Optional[float] = None,
    ) -> torch.Tensor:
        """
        Predict the noise in z_t.

        Args:
            z_t: [B, C, H, W] noisy latent, H and W divisible by 4
            t: scalar or [B] integer timesteps
            c_text: [B or 1, K_text, C_ctx] text tokens
            c_audio: [B or 1, K, C_ctx] audio tokens, required when adapters are given
            adapters: AdapterState or None
            hooks: feature hooks for recording / injection / norm logging
            beta: global audio strength override (per-site values still apply)
        """
        if adapters is not None and c_audio is None:
            raise ArgumentError("adapters were supplied without audio tokens")
        if z_t.dim() != 4 or z_t.shape[1] != self.in_channels or z_t.shape[-1] % 4 or z_t.shape[-2] % 4:
            raise ArgumentError(f"latent shape {tuple(z_t.shape)} incompatible with the backbone")
        batch = z_t.shape[0]
        hooks = hooks or _NO_HOOKS

        t = torch.as_tensor(t, device=z_t.device)
        if t.dim() == 0:
            t = t.expand(batch)
        c_text = _expand_batch(c_text, batch, "text tokens")
        if c_audio is not None:
            c_audio = _expand_batch(c_audio, batch, "audio tokens")
        temb = self.time_mlp(timestep_embedding(t, self.time_dim))

        args = (temb, c_text, c_audio, adapters, hooks, beta)
        h0 = self._run(self.encoder0, self.stem(z_t), *args)
        h1 = self._run(self.encoder1, self.down(h0), *args)
        h = self._run([self.middle], h1, *args)
        h = self._run(self.decoder1, h + h1, *args)
        h = self._run(self.decoder0, self.up(h) + h0, *args)
        return self.head(F.silu(self.head_norm(h)))


def _expand_batch(tokens: torch.Tensor, batch: int, what: str) -> torch.Tensor:
    if tokens.dim() == 2:
        tokens = tokens.unsqueeze(0)
    if tokens.shape[0] == batch:
        return tokens
    if tokens.shape[0] == 1:
        return tokens.expand(batch, -1, -1)
    raise ArgumentError(f"{what} batch {tokens.shape[0]} does not match latent batch {batch}")


__all__ = ["timestep_embedding", "ResidualLayer", "SiteBlock", "DenoisingUNet"]
