"""
Environment settings and named presets for sonic-adapters.

Loads environment variables (with support for .env files), resolves the output
root and compute device, and centralizes the named registries of adapter
insertion sets and feature-injection presets so that training, sampling and
editing share the same configuration surface.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Tuple

from dotenv import load_dotenv

# Resolve project root and load a .env file if it exists (non-fatal when missing).
PROJECT_ROOT = Path(__file__).resolve().parents[1]
load_dotenv(PROJECT_ROOT / ".env")

OUTPUT_ROOT_ENV = "SONIC_OUTPUT_ROOT"
DEVICE_ENV = "SONIC_DEVICE"

# Cross-attention site layout of the denoising UNet. Indices mirror the
# sixteen text-image cross-attention layers of a Stable Diffusion UNet.
NUM_SITES = 16
ENCODER_SITES: Tuple[int, ...] = tuple(range(0, 6))
MIDDLE_SITE = 6
DECODER_SITES: Tuple[int, ...] = tuple(range(7, 16))


@dataclass(frozen=True)
class InsertionSet:
    """Immutable description of where gated audio adapters are inserted."""

    name: str
    sites: Tuple[int, ...]
    description: str


@dataclass(frozen=True)
class InjectionPreset:
    """Immutable set of sites whose features are injected during editing."""

    name: str
    self_attention_sites: Tuple[int, ...]
    residual_sites: Tuple[int, ...]


INSERTION_SETS: Dict[str, InsertionSet] = {
    "middle_decoder": InsertionSet(
        name="middle_decoder",
        sites=(MIDDLE_SITE,) + DECODER_SITES,
        description="middle block and every decoder block (default)",
    ),
    "layers_6_11": InsertionSet(
        name="layers_6_11",
        sites=tuple(range(6, 12)),
        description="global cross-attention layers 6 to 11",
    ),
    "all": InsertionSet(
        name="all",
        sites=tuple(range(NUM_SITES)),
        description="all sixteen cross-attention layers",
    ),
}

INJECTION_PRESETS: Dict[str, InjectionPreset] = {
    "default": InjectionPreset(
        name="default",
        self_attention_sites=tuple(range(4, 12)),
        residual_sites=(4,),
    ),
    "rich": InjectionPreset(
        name="rich",
        self_attention_sites=tuple(range(4, 12)),
        residual_sites=(4, 5, 6),
    ),
}


def get_env(name: str, default: Optional[str] = None, required: bool = False) -> Optional[str]:
    """
    Fetch an environment variable with optional default/required semantics.
    """
    value = os.getenv(name, default)
    if required and not value:
        raise RuntimeError(
            f"Missing required environment variable: {name}. "
            "Define it in your shell or .env file."
        )
    return value


def get_output_root(override: Optional[str] = None) -> Path:
    """
    Return the directory all run artifacts are written under.

    Checks in order:
    1. Explicit override (CLI flag)
    2. SONIC_OUTPUT_ROOT environment variable
    3. <PROJECT_ROOT>/runs
    """
    if override:
        return Path(override).resolve()
    env_root = get_env(OUTPUT_ROOT_ENV)
    if env_root:
        return Path(env_root).resolve()
    return PROJECT_ROOT / "runs"


def get_device() -> str:
    """Return the torch device string (SONIC_DEVICE, default cpu)."""
    return get_env(DEVICE_ENV, "cpu") or "cpu"


def resolve_insertion_set(name: str) -> InsertionSet:
    """
    Lookup an adapter insertion set by name.

    Args:
        name: One of the keys defined in INSERTION_SETS.
    """
    if name not in INSERTION_SETS:
        raise KeyError(
            f"Unknown insertion set '{name}'. Available sets: {', '.join(INSERTION_SETS)}"
        )
    return INSERTION_SETS[name]


def resolve_injection_preset(name: str) -> InjectionPreset:
    """Lookup a feature-injection preset by name."""
    if name not in INJECTION_PRESETS:
        raise KeyError(
            f"Unknown injection preset '{name}'. Available presets: {', '.join(INJECTION_PRESETS)}"
        )
    return INJECTION_PRESETS[name]


__all__ = [
    "PROJECT_ROOT",
    "NUM_SITES",
    "ENCODER_SITES",
    "MIDDLE_SITE",
    "DECODER_SITES",
    "InsertionSet",
    "InjectionPreset",
    "INSERTION_SETS",
    "INJECTION_PRESETS",
    "get_env",
    "get_output_root",
    "get_device",
    "resolve_insertion_set",
    "resolve_injection_preset",
]
