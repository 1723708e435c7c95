"""
Gated audio cross-attention adapters and the trainable/frozen partition.

An adapter at a site adds beta * tanh(gamma) * branch(v, c_audio) to the
image token sequence v right after the frozen text cross-attention, where
branch = CrossAttn(norm(v), c_audio) followed by a dense feed-forward.
gamma starts at zero so an untrained adapter leaves the backbone's output
unchanged.
"""

from __future__ import annotations

import copy
import hashlib
from typing import Dict, Iterable, Mapping, Optional, Tuple

import torch
import torch.nn as nn

from config.settings import resolve_insertion_set
from src.diffusion.attention import Attention, FeedForward
from src.diffusion.unet import DenoisingUNet
from src.schemas.reports import PartitionReport
from src.utils.validation_utils import ConfigurationError


class GatedCrossAttention(nn.Module):
    def __init__(self, dim: int, context_dim: int, heads: int = 1, ff_mult: int = 1):
        super().__init__()
        self.context_dim = context_dim
        self.heads = heads
        self.ff_mult = ff_mult
        self.norm_attn = nn.LayerNorm(dim)
        self.attn = Attention(dim, context_dim, heads=heads)
        self.norm_ff = nn.LayerNorm(dim)
        self.ff = FeedForward(dim, ff_mult)
        self.gamma = nn.Parameter(torch.zeros(()))

    def branch(self, seq: torch.Tensor, c_audio: torch.Tensor) -> torch.Tensor:
        attended = self.attn(self.norm_attn(seq), c_audio)[0]
        return attended + self.ff(self.norm_ff(seq + attended))

    def forward(self, seq: torch.Tensor, c_audio: torch.Tensor, beta: float = 1.0) -> torch.Tensor:
        """Gated contribution beta * tanh(gamma) * branch; the caller adds it to seq."""
        return beta * torch.tanh(self.gamma) * self.branch(seq, c_audio)


class AdapterState(nn.Module):
    """
    Adapters keyed by site index plus the inference-time strength beta.

    site_beta holds per-site overrides of the global beta.
    """

    def __init__(
        self,
        adapters: Mapping[int, GatedCrossAttention],
        insertion_set: str,
        beta: float = 1.0,
        site_beta: Optional[Mapping[int, float]] = None,
    ):
        super().__init__()
        self.blocks = nn.ModuleDict({str(site): module for site, module in sorted(adapters.items())})
        self.insertion_set = insertion_set
        self.beta = float(beta)
        self.site_beta: Dict[int, float] = {int(k): float(v) for k, v in (site_beta or {}).items()}

    @property
    def sites(self) -> Tuple[int, ...]:
        return tuple(sorted(int(k) for k in self.blocks.keys()))

    def get(self, site: int) -> Optional[GatedCrossAttention]:
        key = str(site)
        return self.blocks[key] if key in self.blocks else None

    def beta_for(self, site: int, beta: Optional[float] = None) -> float:
        if site in self.site_beta:
            return self.site_beta[site]
        return self.beta if beta is None else float(beta)

    def gammas(self) -> Dict[int, float]:
        return {site: float(self.get(site).gamma.detach()) for site in self.sites}

    def header(self) -> Dict[str, object]:
        first = next(iter(self.blocks.values()), None)
        return {
            "insertion_set": self.insertion_set,
            "audio_dim": first.context_dim if first is not None else None,
            "heads": first.heads if first is not None else 1,
            "ff_mult": first.ff_mult if first is not None else 1,
            "beta": self.beta,
            "site_beta": dict(self.site_beta),
        }

    def set_gammas(self, value: float) -> None:
        with torch.no_grad():
            for module in self.blocks.values():
                module.gamma.fill_(value)


def build_adapters(
    backbone: DenoisingUNet,
    insertion_set: str = "middle_decoder",
    audio_dim: Optional[int] = None,
    heads: int = 1,
    ff_mult: int = 1,
) -> AdapterState:
    """Freshly initialized adapters (gamma = 0) at every site of insertion_set."""
    sites = resolve_insertion_set(insertion_set).sites
    widths = backbone.site_widths()
    audio_dim = audio_dim or backbone.context_dim
    modules = {site: GatedCrossAttention(widths[site], audio_dim, heads, ff_mult) for site in sites}
    return AdapterState(modules, insertion_set)


def init_adapters_from_text_attention(
    backbone: DenoisingUNet,
    insertion_set: str = "middle_decoder",
    audio_dim: Optional[int] = None,
    ff_mult: int = 1,
) -> AdapterState:
    """
    Adapters whose attention (and its pre-norm) copy the site's text cross-attention.

    Raises:
        ConfigurationError: audio token width differs from the text token width
    """
    audio_dim = audio_dim or backbone.context_dim
    if audio_dim != backbone.context_dim:
        raise ConfigurationError(
            f"audio token width {audio_dim} differs from text token width {backbone.context_dim}"
        )
    heads = backbone.middle.attn2.heads
    state = build_adapters(backbone, insertion_set, audio_dim, heads, ff_mult)
    for site in state.sites:
        block = backbone.site(site)
        adapter = state.get(site)
        adapter.attn.load_state_dict(copy.deepcopy(block.attn2.state_dict()))
        adapter.norm_attn.load_state_dict(copy.deepcopy(block.norm2.state_dict()))
    return state


def count_parameters(module: Optional[nn.Module]) -> int:
    return sum(p.numel() for p in module.parameters()) if module is not None else 0


def set_trainable(modules: Iterable[Optional[nn.Module]], trainable: bool) -> None:
    for module in modules:
        if module is not None:
            module.requires_grad_(trainable)


def trainable_partition(
    backbone: nn.Module,
    adapters: Optional[AdapterState],
    projector: Optional[nn.Module],
    text_embedder: Optional[nn.Module] = None,
    train_projector: bool = True,
) -> PartitionReport:
    """
    Freeze the backbone (and caption embedder), unfreeze adapters and projector.

    Returns:
        PartitionReport with per-group parameter counts
    """
    set_trainable([backbone, text_embedder], False)
    set_trainable([adapters], True)
    set_trainable([projector], train_projector)

    groups = {
        "backbone": count_parameters(backbone),
        "text_embedder": count_parameters(text_embedder),
        "adapters": count_parameters(adapters),
        "projector": count_parameters(projector),
    }
    trainable_groups = ["adapters"] + (["projector"] if train_projector and projector is not None else [])
    trainable = sum(groups[g] for g in trainable_groups)
    return PartitionReport(
        groups=groups,
        trainable_groups=trainable_groups,
        trainable=trainable,
        frozen=sum(groups.values()) - trainable,
    )


def parameter_digest(module: nn.Module) -> str:
    """SHA-256 over the raw bytes of every parameter and buffer, in state_dict order."""
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


__all__ = [
    "GatedCrossAttention",
    "AdapterState",
    "build_adapters",
    "init_adapters_from_text_attention",
    "count_parameters",
    "set_trainable",
    "trainable_partition",
    "parameter_digest",
]
