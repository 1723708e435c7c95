"""Sound-level editing controls: embedding interpolation and volume scaling."""

from __future__ import annotations

import numpy as np
import torch

from src.data.synth import AudioClip
from src.utils.validation_utils import ArgumentError, require_range, require_same_shape


def interpolate_audio(first: torch.Tensor, second: torch.Tensor, lam: float) -> torch.Tensor:
    """(1 - lam) * first + lam * second for two AudioEmbeddings of the same dimension."""
    require_same_shape(first, second, "audio embeddings")
    require_range(lam, "lam", 0.0, 1.0)
    if lam == 0.0:
        return first.clone()
    if lam == 1.0:
        return second.clone()
    return (1.0 - lam) * first + lam * second


def scale_volume(clip: AudioClip, gain: float) -> AudioClip:
    """Multiply the waveform by gain and clip to [-1, 1]."""
    if gain < 0:
        raise ArgumentError(f"gain must be non-negative, got {gain}")
    waveform = np.clip(clip.waveform * np.float32(gain), -1.0, 1.0).astype(clip.waveform.dtype)
    return AudioClip(waveform=waveform, sample_rate=clip.sample_rate, class_id=clip.class_id)


__all__ = ["interpolate_audio", "scale_volume"]
