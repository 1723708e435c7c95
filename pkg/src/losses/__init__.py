"""
Loss functions for projector alignment, denoising and the eval embedder.
"""

from src.losses.objectives import (
    LossWeights,
    Stage1Batch,
    contrastive_alignment_loss,
    ddpm_loss,
    infonce_loss,
    mse_token_loss,
    stage1_loss,
    stage1_loss_terms,
    token_weight,
    token_weights,
)

__all__ = [
    "LossWeights",
    "Stage1Batch",
    "contrastive_alignment_loss",
    "ddpm_loss",
    "infonce_loss",
    "mse_token_loss",
    "stage1_loss",
    "stage1_loss_terms",
    "token_weight",
    "token_weights",
]
