"""
Classifier-free guidance over joint (text, audio) conditioning and DDIM sampling.

The unconditional branch pairs the null caption tokens with the null audio
tokens. Two combination rules are available:

    standard:    eps = eps_null + w * (eps_cond - eps_null)
    signed_null: eps = w * eps_cond - (1 - w) * eps_null

Both reduce to eps_cond at w = 1, where the unconditional branch is skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Literal, Optional, Tuple

import numpy as np
import torch

from src.diffusion.hooks import FeatureHooks
from src.diffusion.schedule import NoiseSchedule, ddim_step, ddim_timesteps
from src.utils.validation_utils import ArgumentError, require_finite, require_range

Formulation = Literal["standard", "signed_null"]
FORMULATIONS: Tuple[str, ...] = ("standard", "signed_null")


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 8.0
    formulation: Formulation = "standard"
    beta: float = 1.0
    steps: int = 50
    eta: float = 0.0

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ArgumentError(f"steps must be >= 1, got {self.steps}")
        if not math.isfinite(self.scale):
            raise ArgumentError(f"guidance scale must be finite, got {self.scale}")
        if self.formulation not in FORMULATIONS:
            raise ArgumentError(f"unknown guidance formulation '{self.formulation}'")
        if self.eta < 0:
            raise ArgumentError("eta must be non-negative")

    @classmethod
    def from_config(cls, sampler, **overrides) -> "GuidanceConfig":
        """Build from a SamplerConfig section, applying non-None overrides."""
        values = {
            "scale": sampler.guidance_scale,
            "formulation": sampler.formulation,
            "beta": sampler.beta,
            "steps": sampler.steps,
            "eta": sampler.eta,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class Conditioning:
    """Conditional and null token pairs, each [B or 1, K, C]; audio is None for text-only runs."""

    c_text: torch.Tensor
    null_text: torch.Tensor
    c_audio: Optional[torch.Tensor] = None
    null_audio: Optional[torch.Tensor] = None

    def null(self) -> "Conditioning":
        return Conditioning(self.null_text, self.null_text, self.null_audio, self.null_audio)


@dataclass
class SampleResult:
    z0: torch.Tensor
    z_T: torch.Tensor
    timesteps: Tuple[int, ...]
    trajectory: List[torch.Tensor] = field(default_factory=list)


def combine_guidance(
    eps_cond: torch.Tensor,
    eps_null: torch.Tensor,
    scale: float,
    formulation: Formulation = "standard",
) -> torch.Tensor:
    if formulation == "standard":
        return eps_null + scale * (eps_cond - eps_null)
    if formulation == "signed_null":
        return scale * eps_cond - (1.0 - scale) * eps_null
    raise ArgumentError(f"unknown guidance formulation '{formulation}'")


def cfg_epsilon(
    model,
    z_t: torch.Tensor,
    t: int | torch.Tensor,
    cond: Conditioning,
    cfg: GuidanceConfig,
    adapters=None,
    hooks: Optional[FeatureHooks] = None,
) -> torch.Tensor:
    """Guided noise prediction; the unconditional branch runs only when scale != 1."""
    hooks = hooks or FeatureHooks()
    audio = cond.c_audio if adapters is not None else None
    hooks.set_branch("cond")
    eps_cond = model(z_t, t, cond.c_text, c_audio=audio, adapters=adapters, hooks=hooks, beta=cfg.beta)
    if cfg.scale == 1.0:
        return eps_cond
    null_audio = cond.null_audio if adapters is not None else None
    hooks.set_branch("null")
    eps_null = model(z_t, t, cond.null_text, c_audio=null_audio, adapters=adapters, hooks=hooks, beta=cfg.beta)
    hooks.set_branch("cond")
    return combine_guidance(eps_cond, eps_null, cfg.scale, cfg.formulation)


def initial_noise(shape: Tuple[int, ...], seed: int, device: torch.device | str = "cpu") -> torch.Tensor:
    """Seeded z_T drawn on the CPU so the same seed gives the same bytes on every device."""
    generator = torch.Generator().manual_seed(int(seed))
    return torch.randn(shape, generator=generator).to(device)


@torch.no_grad()
def ddim_sample(
    model,
    adapters,
    cond: Conditioning,
    cfg: GuidanceConfig,
    schedule: NoiseSchedule,
    *,
    z_T: Optional[torch.Tensor] = None,
    seed: int = 0,
    shape: Optional[Tuple[int, ...]] = None,
    hooks: Optional[FeatureHooks] = None,
    return_trajectory: bool = False,
) -> SampleResult:
    """
    Deterministic (eta = 0) or stochastic DDIM sampling with guidance.

    Either z_T or shape must be given; shape draws z_T from seed.
    """
    if z_T is None:
        if shape is None:
            raise ArgumentError("ddim_sample needs z_T or a shape to draw it")
        z_T = initial_noise(shape, seed, cond.c_text.device)
    hooks = hooks or FeatureHooks()
    generator = torch.Generator().manual_seed(int(seed) + 1) if cfg.eta > 0 else None

    timesteps = ddim_timesteps(schedule.num_timesteps, cfg.steps)
    z = z_T
    trajectory = [z_T] if return_trajectory else []
    for index, t in enumerate(timesteps):
        hooks.begin_step(index, t)
        eps = cfg_epsilon(model, z, t, cond, cfg, adapters, hooks)
        t_prev = timesteps[index + 1] if index + 1 < len(timesteps) else -1
        z, _ = ddim_step(eps, t, t_prev, z, schedule, cfg.eta, generator)
        require_finite(z, f"DDIM latent at timestep {t}")
        if return_trajectory:
            trajectory.append(z)
    return SampleResult(z0=z, z_T=z_T, timesteps=timesteps, trajectory=trajectory)


def null_conditioning_dropout(
    embeddings: torch.Tensor,
    p: float = 0.1,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Zero each item's audio embedding independently with probability p.

    Returns:
        (embeddings with dropped rows zeroed, boolean drop mask [B])
    """
    require_range(p, "p", 0.0, 1.0)
    mask = torch.rand(embeddings.shape[0], generator=generator) < p
    mask = mask.to(embeddings.device)
    keep = (~mask).to(embeddings.dtype).view(-1, *([1] * (embeddings.dim() - 1)))
    return embeddings * keep, mask


def null_caption_dropout(
    ids: torch.Tensor,
    p: float,
    null_id: int,
    rng: np.random.Generator,
) -> torch.Tensor:
    """Replace whole caption id rows by the null caption with probability p."""
    require_range(p, "p", 0.0, 1.0)
    mask = torch.from_numpy(rng.random(ids.shape[0]) < p).to(ids.device)
    return torch.where(mask[:, None], torch.full_like(ids, null_id), ids)


__all__ = [
    "FORMULATIONS",
    "GuidanceConfig",
    "Conditioning",
    "SampleResult",
    "combine_guidance",
    "cfg_epsilon",
    "initial_noise",
    "ddim_sample",
    "null_conditioning_dropout",
    "null_caption_dropout",
]
