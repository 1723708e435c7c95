"""
DDPM noise schedule and DDIM update primitives.

Timestep -1 denotes the clean end of a trajectory, where alpha_bar = 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch

from src.utils.validation_utils import ArgumentError


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step variances beta_t (float64) with the derived alpha and alpha_bar tables."""

    betas: torch.Tensor

    def __post_init__(self) -> None:
        if self.betas.dim() != 1 or self.betas.numel() < 2:
            raise ArgumentError("betas must be a 1-D tensor with at least two steps")
        if not bool(((self.betas > 0) & (self.betas < 1)).all()):
            raise ArgumentError("every beta_t must lie in (0, 1)")

    @classmethod
    def linear(cls, num_timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        return cls(torch.linspace(beta_start, beta_end, num_timesteps, dtype=torch.float64))

    @property
    def num_timesteps(self) -> int:
        return self.betas.numel()

    @property
    def alphas(self) -> torch.Tensor:
        return 1.0 - self.betas

    @property
    def alphas_cumprod(self) -> torch.Tensor:
        return torch.cumprod(self.alphas, dim=0)

    def check_timestep(self, t: int | torch.Tensor) -> None:
        values = torch.as_tensor(t)
        if values.numel() == 0 or bool((values < 0).any()) or bool((values >= self.num_timesteps).any()):
            raise ArgumentError(f"timestep must lie in [0, {self.num_timesteps}), got {values.tolist()}")

    def alpha_bar(self, t: int | torch.Tensor) -> torch.Tensor:
        """alpha_bar_t as float64; t = -1 gives 1."""
        values = torch.as_tensor(t, dtype=torch.long)
        table = torch.cat([torch.ones(1, dtype=torch.float64), self.alphas_cumprod])
        return table[values + 1]


def _broadcast(coef: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    coef = coef.to(dtype=like.dtype, device=like.device)
    if coef.dim() == 0:
        return coef
    return coef.view(-1, *([1] * (like.dim() - 1)))


def add_noise(z0: torch.Tensor, t: int | torch.Tensor, noise: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward process: z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) noise."""
    schedule.check_timestep(t)
    alpha_bar = schedule.alpha_bar(t)
    return _broadcast(alpha_bar.sqrt(), z0) * z0 + _broadcast((1.0 - alpha_bar).sqrt(), z0) * noise


def predict_clean(z_t: torch.Tensor, eps: torch.Tensor, alpha_bar: torch.Tensor) -> torch.Tensor:
    return (z_t - _broadcast((1.0 - alpha_bar).sqrt(), z_t) * eps) / _broadcast(alpha_bar.sqrt(), z_t)


def ddim_step(
    eps: torch.Tensor,
    t: int,
    t_prev: int,
    z_t: torch.Tensor,
    schedule: NoiseSchedule,
    eta: float = 0.0,
    generator: Optional[torch.Generator] = None,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    One DDIM update from t to t_prev (< t, or -1 for the clean end).

    Returns:
        (z_{t_prev}, predicted z0)
    """
    alpha_bar, alpha_bar_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
    z0_pred = predict_clean(z_t, eps, alpha_bar)
    sigma = eta * ((1 - alpha_bar_prev) / (1 - alpha_bar)).sqrt() * (1 - alpha_bar / alpha_bar_prev).sqrt()
    direction = (1 - alpha_bar_prev - sigma ** 2).clamp(min=0.0).sqrt()
    z_prev = _broadcast(alpha_bar_prev.sqrt(), z_t) * z0_pred + _broadcast(direction, z_t) * eps
    if eta > 0:
        noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype).to(z_t.device)
        z_prev = z_prev + _broadcast(sigma, z_t) * noise
    return z_prev, z0_pred


def ddim_inversion_step(
    eps: torch.Tensor,
    t_prev: int,
    t: int,
    z_prev: torch.Tensor,
    schedule: NoiseSchedule,
) -> torch.Tensor:
    """Deterministic reverse-DDIM update from t_prev (lower, -1 = clean) up to t, with eps evaluated at t."""
    alpha_bar, alpha_bar_prev = schedule.alpha_bar(t), schedule.alpha_bar(t_prev)
    z0_pred = predict_clean(z_prev, eps, alpha_bar_prev)
    return _broadcast(alpha_bar.sqrt(), z_prev) * z0_pred + _broadcast((1 - alpha_bar).sqrt(), z_prev) * eps


def posterior_step(
    eps: torch.Tensor,
    t: int,
    z_t: torch.Tensor,
    schedule: NoiseSchedule,
    generator: Optional[torch.Generator] = None,
) -> torch.Tensor:
    """Ancestral DDPM step z_t -> z_{t-1} using the posterior mean and variance."""
    schedule.check_timestep(t)
    beta = schedule.betas[t]
    alpha_bar, alpha_bar_prev = schedule.alpha_bar(t), schedule.alpha_bar(t - 1)
    mean = (z_t - _broadcast(beta / (1 - alpha_bar).sqrt(), z_t) * eps) / _broadcast((1 - beta).sqrt(), z_t)
    if t == 0:
        return mean
    variance = beta * (1 - alpha_bar_prev) / (1 - alpha_bar)
    noise = torch.randn(z_t.shape, generator=generator, dtype=z_t.dtype).to(z_t.device)
    return mean + _broadcast(variance.sqrt(), z_t) * noise


def ddim_timesteps(num_timesteps: int, steps: int) -> Tuple[int, ...]:
    """
    Uniform-stride descending subsequence of length steps.

    Multi-step sequences end at t = 0; a single step runs from T - 1.
    """
    if not (1 <= steps <= num_timesteps):
        raise ArgumentError(f"steps must lie in [1, {num_timesteps}], got {steps}")
    if steps == 1:
        return (num_timesteps - 1,)
    stride = num_timesteps // steps
    return tuple(range(0, stride * steps, stride))[::-1]


__all__ = [
    "NoiseSchedule",
    "add_noise",
    "predict_clean",
    "ddim_step",
    "ddim_inversion_step",
    "posterior_step",
    "ddim_timesteps",
]
