"""
Training objectives.

Stage 1 aligns projected audio tokens with caption tokens through a
per-token InfoNCE term and a per-token MSE term, both weighted over token
positions by a reverse sigmoid. Stage 0 and stage 2 minimize the
conditioned denoising loss. The symmetric contrastive loss trains the
evaluation embedder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Literal, Optional

import torch
import torch.nn.functional as F

from src.diffusion.schedule import NoiseSchedule, add_noise
from src.utils.validation_utils import ArgumentError, require_same_shape

Weighting = Literal["reverse_sigmoid", "uniform"]
Similarity = Literal["dot", "cosine"]
Reduction = Literal["per_token", "clip"]

# (z_t, t, c_audio) -> predicted noise
Denoiser = Callable[[torch.Tensor, torch.Tensor, Optional[torch.Tensor]], torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    contrastive: float = 1.0
    mse: float = 0.25
    temperature: float = 5.0

    def __post_init__(self) -> None:
        if self.contrastive < 0 or self.mse < 0:
            raise ArgumentError("loss weights must be non-negative")
        if self.temperature <= 0:
            raise ArgumentError("token weight temperature must be positive")


@dataclass(frozen=True)
class Stage1Batch:
    """
    One stage-1 batch of projected tokens.

    anchor, positive, text: [B, K, C]; negatives: [B, N, K, C].
    """

    anchor: torch.Tensor
    positive: torch.Tensor
    negatives: torch.Tensor
    text: torch.Tensor


def token_weight(i: int, temperature: float) -> float:
    """Reverse-sigmoid weight of 1-based token position i."""
    if i < 1:
        raise ArgumentError(f"token index is 1-based, got {i}")
    return temperature / (temperature + math.exp(i / temperature))


def token_weights(
    num_tokens: int,
    temperature: float = 5.0,
    weighting: Weighting = "reverse_sigmoid",
    dtype: torch.dtype = torch.float32,
    device: torch.device | str | None = None,
) -> torch.Tensor:
    """Weights for positions 1..K; 'uniform' gives 1/K everywhere."""
    if weighting == "uniform":
        return torch.full((num_tokens,), 1.0 / num_tokens, dtype=dtype, device=device)
    if weighting != "reverse_sigmoid":
        raise ArgumentError(f"unknown token weighting '{weighting}'")
    return torch.tensor(
        [token_weight(i, temperature) for i in range(1, num_tokens + 1)], dtype=dtype, device=device
    )


def _similarity(a: torch.Tensor, b: torch.Tensor, similarity: Similarity) -> torch.Tensor:
    if similarity == "cosine":
        a, b = F.normalize(a, dim=-1), F.normalize(b, dim=-1)
    elif similarity != "dot":
        raise ArgumentError(f"unknown similarity '{similarity}'")
    return (a * b).sum(dim=-1)


def infonce_per_token(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negatives: torch.Tensor,
    similarity: Similarity = "dot",
) -> torch.Tensor:
    """
    Per-token InfoNCE.

    Args:
        anchor, positive: [B, K, C]
        negatives: [B, N, K, C] with N >= 1

    Returns:
        [B, K] losses -log softmax_j(<a0_i, a_j_i>)[positive]
    """
    require_same_shape(anchor, positive, "anchor/positive tokens")
    if negatives.dim() != 4 or negatives.shape[1] == 0:
        raise ArgumentError("InfoNCE needs at least one negative per anchor")
    if tuple(negatives.shape[2:]) != tuple(anchor.shape[1:]):
        raise ArgumentError(
            f"negative token shape {tuple(negatives.shape[2:])} differs from {tuple(anchor.shape[1:])}"
        )

    pos = _similarity(anchor, positive, similarity).unsqueeze(1)
    neg = _similarity(anchor.unsqueeze(1), negatives, similarity)
    logits = torch.cat([pos, neg], dim=1)
    return -torch.log_softmax(logits, dim=1)[:, 0]


def infonce_loss(
    batch: Stage1Batch,
    temperature: float = 5.0,
    *,
    weighting: Weighting = "reverse_sigmoid",
    similarity: Similarity = "dot",
    reduction: Reduction = "per_token",
) -> torch.Tensor:
    """Token-weighted InfoNCE averaged over the batch; 'clip' compares flattened K*C rows instead."""
    if reduction == "clip":
        b, n = batch.negatives.shape[:2]
        per_clip = infonce_per_token(
            batch.anchor.reshape(b, 1, -1),
            batch.positive.reshape(b, 1, -1),
            batch.negatives.reshape(b, n, 1, -1),
            similarity,
        )
        return per_clip.mean()
    per_token = infonce_per_token(batch.anchor, batch.positive, batch.negatives, similarity)
    weights = token_weights(per_token.shape[1], temperature, weighting, per_token.dtype, per_token.device)
    return (per_token * weights).sum(dim=1).mean()


def mse_token_loss(
    c_audio: torch.Tensor,
    c_text: torch.Tensor,
    temperature: float = 5.0,
    weighting: Weighting = "reverse_sigmoid",
) -> torch.Tensor:
    """Sum over tokens of w_i * ||c_audio_i - c_text_i||^2, averaged over the batch."""
    require_same_shape(c_audio, c_text, "audio/text tokens")
    if c_audio.dim() == 2:
        c_audio, c_text = c_audio.unsqueeze(0), c_text.unsqueeze(0)
    per_token = ((c_audio - c_text) ** 2).sum(dim=-1)
    weights = token_weights(per_token.shape[1], temperature, weighting, per_token.dtype, per_token.device)
    return (per_token * weights).sum(dim=1).mean()


def stage1_loss_terms(
    batch: Stage1Batch,
    weights: LossWeights = LossWeights(),
    *,
    weighting: Weighting = "reverse_sigmoid",
    similarity: Similarity = "dot",
    reduction: Reduction = "per_token",
) -> Dict[str, torch.Tensor]:
    """Return {'total', 'infonce', 'mse'} for logging; total = a1 * infonce + a2 * mse."""
    contrastive = infonce_loss(
        batch, weights.temperature, weighting=weighting, similarity=similarity, reduction=reduction
    )
    mse = mse_token_loss(batch.anchor, batch.text, weights.temperature, weighting)
    total = weights.contrastive * contrastive + weights.mse * mse
    return {"total": total, "infonce": contrastive, "mse": mse}


def stage1_loss(batch: Stage1Batch, weights: LossWeights = LossWeights(), **options) -> torch.Tensor:
    return stage1_loss_terms(batch, weights, **options)["total"]


def ddpm_loss(
    model: Denoiser,
    z0: torch.Tensor,
    t: int | torch.Tensor,
    c_audio: Optional[torch.Tensor],
    noise: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """
    Conditioned denoising loss ||noise - model(z_t, t, c_audio)||^2.

    The squared norm is summed per sample and averaged over the batch.
    """
    schedule.check_timestep(t)
    require_same_shape(z0, noise, "clean latent/noise")
    t = torch.as_tensor(t, dtype=torch.long, device=z0.device)
    if t.dim() == 0:
        t = t.expand(z0.shape[0])
    z_t = add_noise(z0, t, noise, schedule)
    residual = noise - model(z_t, t, c_audio)
    return residual.pow(2).flatten(1).sum(dim=1).mean()


def contrastive_alignment_loss(
    a: torch.Tensor,
    b: torch.Tensor,
    temperature: float = 0.07,
    labels: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Symmetric cross-entropy over the a/b cosine-similarity matrix.

    With labels, every same-label pair is a positive and targets spread
    uniformly over them; otherwise the diagonal is the positive set.
    """
    if a.shape[0] != b.shape[0]:
        raise ArgumentError(f"batch sizes differ: {a.shape[0]} vs {b.shape[0]}")
    logits = F.normalize(a, dim=-1) @ F.normalize(b, dim=-1).t() / temperature
    if labels is None:
        targets = torch.eye(a.shape[0], dtype=logits.dtype, device=logits.device)
    else:
        targets = (labels.unsqueeze(0) == labels.unsqueeze(1)).to(logits.dtype)
    targets = targets / targets.sum(dim=1, keepdim=True)
    loss_ab = -(targets * torch.log_softmax(logits, dim=1)).sum(dim=1).mean()
    loss_ba = -(targets.t() * torch.log_softmax(logits.t(), dim=1)).sum(dim=1).mean()
    return (loss_ab + loss_ba) / 2.0


__all__ = [
    "LossWeights",
    "Stage1Batch",
    "token_weight",
    "token_weights",
    "infonce_per_token",
    "infonce_loss",
    "mse_token_loss",
    "stage1_loss_terms",
    "stage1_loss",
    "ddpm_loss",
    "contrastive_alignment_loss",
]
