"""
Feature hooks threaded through the UNet forward pass.

The UNet calls a FeatureHooks object at every cross-attention site:

- residual(site, h): may replace the residual-layer output
- self_attention_override(site): may supply a self-attention map
- on_self_attention(site, probs): observes the computed map
- on_adapter_output(site, delta): observes the gated adapter contribution

begin_step(index, t) is called by samplers before each denoising step and
set_branch("cond" | "null") before each guidance branch; observers only
record the conditional branch, injectors act on both.
"""

from __future__ import annotations

from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import torch


class FeatureHooks:
    """No-op base; subclasses override what they need."""

    def __init__(self) -> None:
        self.step_index: int = 0
        self.timestep: int = -1
        self.branch: str = "cond"

    def begin_step(self, index: int, t: int) -> None:
        self.step_index, self.timestep = index, int(t)

    def set_branch(self, branch: str) -> None:
        self.branch = branch

    @property
    def observing(self) -> bool:
        return self.branch == "cond"

    def residual(self, site: int, h: torch.Tensor) -> torch.Tensor:
        return h

    def self_attention_override(self, site: int) -> Optional[torch.Tensor]:
        return None

    def on_self_attention(self, site: int, probs: torch.Tensor) -> None:
        pass

    def on_adapter_output(self, site: int, delta: torch.Tensor) -> None:
        pass


class FeatureRecorder(FeatureHooks):
    """Records residual features and self-attention maps at chosen sites, keyed by timestep."""

    def __init__(self, residual_sites: Iterable[int] = (), self_attention_sites: Iterable[int] = ()):
        super().__init__()
        self.residual_sites = frozenset(residual_sites)
        self.self_attention_sites = frozenset(self_attention_sites)
        self.residuals: Dict[int, Dict[int, torch.Tensor]] = defaultdict(dict)
        self.attention: Dict[int, Dict[int, torch.Tensor]] = defaultdict(dict)

    def residual(self, site: int, h: torch.Tensor) -> torch.Tensor:
        if self.observing and site in self.residual_sites:
            self.residuals[self.timestep][site] = h.detach().clone()
        return h

    def on_self_attention(self, site: int, probs: torch.Tensor) -> None:
        if self.observing and site in self.self_attention_sites:
            self.attention[self.timestep][site] = probs.detach().clone()

    @property
    def timesteps(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.residuals) | set(self.attention), reverse=True))


def _match_batch(stored: torch.Tensor, batch_size: int) -> torch.Tensor:
    if stored.shape[0] == batch_size:
        return stored
    return stored[:1].expand(batch_size, *stored.shape[1:])


class FeatureInjector(FeatureHooks):
    """
    Overwrites residual features and self-attention maps with recorded ones.

    Injection is active while step index < injection_fraction * total_steps.
    """

    def __init__(
        self,
        residuals: Dict[int, Dict[int, torch.Tensor]],
        attention: Dict[int, Dict[int, torch.Tensor]],
        residual_sites: Iterable[int],
        self_attention_sites: Iterable[int],
        injection_fraction: float,
        total_steps: int,
    ):
        super().__init__()
        self.stored_residuals = residuals
        self.stored_attention = attention
        self.residual_sites = frozenset(residual_sites)
        self.self_attention_sites = frozenset(self_attention_sites)
        self.injection_fraction = injection_fraction
        self.total_steps = total_steps

    @property
    def active(self) -> bool:
        return self.step_index < self.injection_fraction * self.total_steps

    def residual(self, site: int, h: torch.Tensor) -> torch.Tensor:
        if self.active and site in self.residual_sites:
            stored = self.stored_residuals.get(self.timestep, {}).get(site)
            if stored is not None:
                return _match_batch(stored, h.shape[0]).to(dtype=h.dtype, device=h.device)
        return h

    def self_attention_override(self, site: int) -> Optional[torch.Tensor]:
        if self.active and site in self.self_attention_sites:
            return self.stored_attention.get(self.timestep, {}).get(site)
        return None


class AdapterNormHook(FeatureHooks):
    """Collects (site, timestep, mean L2 norm) of every gated adapter contribution."""

    def __init__(self) -> None:
        super().__init__()
        self.rows: List[Tuple[int, int, float]] = []

    def on_adapter_output(self, site: int, delta: torch.Tensor) -> None:
        if not self.observing:
            return
        norm = delta.detach().flatten(1).norm(dim=1).mean()
        self.rows.append((site, self.timestep, float(norm)))


class CompositeHooks(FeatureHooks):
    """Chains hooks: residual replacements compose in order, the first override wins."""

    def __init__(self, hooks: Sequence[FeatureHooks]):
        super().__init__()
        self.hooks = list(hooks)

    def begin_step(self, index: int, t: int) -> None:
        super().begin_step(index, t)
        for hook in self.hooks:
            hook.begin_step(index, t)

    def set_branch(self, branch: str) -> None:
        super().set_branch(branch)
        for hook in self.hooks:
            hook.set_branch(branch)

    def residual(self, site: int, h: torch.Tensor) -> torch.Tensor:
        for hook in self.hooks:
            h = hook.residual(site, h)
        return h

    def self_attention_override(self, site: int) -> Optional[torch.Tensor]:
        for hook in self.hooks:
            override = hook.self_attention_override(site)
            if override is not None:
                return override
        return None

    def on_self_attention(self, site: int, probs: torch.Tensor) -> None:
        for hook in self.hooks:
            hook.on_self_attention(site, probs)

    def on_adapter_output(self, site: int, delta: torch.Tensor) -> None:
        for hook in self.hooks:
            hook.on_adapter_output(site, delta)


__all__ = [
    "FeatureHooks",
    "FeatureRecorder",
    "FeatureInjector",
    "AdapterNormHook",
    "CompositeHooks",
]
