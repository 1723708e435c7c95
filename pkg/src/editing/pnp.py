"""
DDIM inversion and plug-and-play feature injection.

ddim_invert maps a source image to z_T under the null (text, audio)
conditioning at guidance scale 1, then records residual features and
self-attention maps during a reconstruction pass from z_T (or during the
inversion itself when record_during_inversion is set). pnp_edit samples
from the same z_T with new audio tokens while the recorded features
overwrite the live ones for the first injection_fraction of the steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import torch

from config.settings import NUM_SITES, resolve_injection_preset
from src.diffusion.hooks import CompositeHooks, FeatureHooks, FeatureInjector, FeatureRecorder
from src.diffusion.schedule import NoiseSchedule, ddim_inversion_step, ddim_timesteps
from src.sampling.guidance import Conditioning, GuidanceConfig, SampleResult, cfg_epsilon, ddim_sample
from src.utils.validation_utils import ArgumentError, require_finite, require_range


@dataclass(frozen=True)
class InjectionConfig:
    self_attention_sites: Tuple[int, ...] = tuple(range(4, 12))
    residual_sites: Tuple[int, ...] = (4,)
    injection_fraction: float = 0.8

    def __post_init__(self) -> None:
        for site in (*self.self_attention_sites, *self.residual_sites):
            if not (0 <= site < NUM_SITES):
                raise ArgumentError(f"injection site {site} outside [0, {NUM_SITES})")
        require_range(self.injection_fraction, "injection_fraction", 0.0, 1.0)

    @classmethod
    def from_preset(cls, name: str = "default", injection_fraction: float = 0.8) -> "InjectionConfig":
        preset = resolve_injection_preset(name)
        return cls(preset.self_attention_sites, preset.residual_sites, injection_fraction)


@dataclass
class DiffusionTrajectory:
    """Inversion latents z_T .. z_0 plus per-timestep recorded features of the source."""

    latents: List[torch.Tensor]
    timesteps: Tuple[int, ...]
    residuals: Dict[int, Dict[int, torch.Tensor]]
    attention: Dict[int, Dict[int, torch.Tensor]]
    residual_sites: Tuple[int, ...]
    self_attention_sites: Tuple[int, ...]
    reconstruction: Optional[torch.Tensor] = None
    recorded_during_inversion: bool = False
    metadata: Dict[str, object] = field(default_factory=dict)

    @property
    def z_T(self) -> torch.Tensor:
        return self.latents[0]

    @property
    def steps(self) -> int:
        return len(self.timesteps)

    @property
    def recorded_timesteps(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.residuals) | set(self.attention), reverse=True))


@torch.no_grad()
def ddim_invert(
    image: torch.Tensor,
    model,
    adapters,
    cond: Conditioning,
    schedule: NoiseSchedule,
    steps: int = 50,
    injection: Optional[InjectionConfig] = None,
    record_during_inversion: bool = False,
) -> DiffusionTrajectory:
    """
    Invert image latents [B, 3, H, W] with deterministic reverse DDIM.

    cond should be the null pairing (cond.null() of any Conditioning).
    """
    injection = injection or InjectionConfig()
    cfg = GuidanceConfig(scale=1.0, steps=steps, eta=0.0)
    timesteps = ddim_timesteps(schedule.num_timesteps, steps)
    recorder = FeatureRecorder(injection.residual_sites, injection.self_attention_sites)
    hooks = recorder if record_during_inversion else FeatureHooks()

    z = image
    latents = [image]
    t_prev = -1
    for index, t in enumerate(reversed(timesteps)):
        hooks.begin_step(steps - 1 - index, t)
        eps = cfg_epsilon(model, z, t, cond, cfg, adapters, hooks)
        z = ddim_inversion_step(eps, t_prev, t, z, schedule)
        require_finite(z, f"inverted latent at timestep {t}")
        latents.append(z)
        t_prev = t
    latents.reverse()

    reconstruction = None
    if not record_during_inversion:
        result = ddim_sample(model, adapters, cond, cfg, schedule, z_T=latents[0], hooks=recorder)
        reconstruction = result.z0

    return DiffusionTrajectory(
        latents=latents,
        timesteps=timesteps,
        residuals=dict(recorder.residuals),
        attention=dict(recorder.attention),
        residual_sites=tuple(injection.residual_sites),
        self_attention_sites=tuple(injection.self_attention_sites),
        reconstruction=reconstruction,
        recorded_during_inversion=record_during_inversion,
    )


def pnp_edit(
    trajectory: DiffusionTrajectory,
    model,
    adapters,
    cond: Conditioning,
    injection: InjectionConfig,
    cfg: GuidanceConfig,
    schedule: NoiseSchedule,
    hooks: Optional[FeatureHooks] = None,
) -> SampleResult:
    """
    Generate from the inverted z_T with feature injection and audio conditioning.

    Raises:
        ArgumentError: step count differs from the trajectory, or an
            injection site was not recorded
    """
    if cfg.steps != trajectory.steps:
        raise ArgumentError(
            f"guidance uses {cfg.steps} steps but the trajectory has {trajectory.steps}"
        )
    missing = (set(injection.residual_sites) - set(trajectory.residual_sites)) | (
        set(injection.self_attention_sites) - set(trajectory.self_attention_sites)
    )
    if missing:
        raise ArgumentError(f"sites {sorted(missing)} were not recorded in the trajectory")

    injector = FeatureInjector(
        trajectory.residuals,
        trajectory.attention,
        injection.residual_sites,
        injection.self_attention_sites,
        injection.injection_fraction,
        trajectory.steps,
    )
    chain = CompositeHooks([injector, hooks]) if hooks is not None else injector
    return ddim_sample(model, adapters, cond, cfg, schedule, z_T=trajectory.z_T, hooks=chain)


__all__ = ["InjectionConfig", "DiffusionTrajectory", "ddim_invert", "pnp_edit"]
