"""
Audio and image preprocessing transforms.

Log-mel spectrograms follow the CLAP front end (hop 320 / window 1024
samples, 64 mel bins). Image augmentation is limited to horizontal flips
and random crops; colour and geometric jitter are deliberately absent.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
import torchaudio.transforms as T

from src.data.synth import AudioClip, ImageSample
from src.utils.validation_utils import ArgumentError

LOG_FLOOR = 1e-10
DEFAULT_HOP = 320
DEFAULT_WINDOW = 1024
DEFAULT_N_MELS = 64
MIN_CROP_FRACTION = 0.875


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-scaled mel spectrogram [n_mels, frames]."""

    values: torch.Tensor
    hop: int
    window: int
    n_mels: int

    @property
    def frames(self) -> int:
        return self.values.shape[-1]


def expected_frames(num_samples: int, hop: int, window: int) -> int:
    return (num_samples - window) // hop + 1


@lru_cache(maxsize=8)
def _mel_transform(sample_rate: int, hop: int, window: int, n_mels: int) -> T.MelSpectrogram:
    return T.MelSpectrogram(
        sample_rate=sample_rate,
        n_fft=window,
        win_length=window,
        hop_length=hop,
        n_mels=n_mels,
        center=False,
        power=2.0,
    )


def logmel_from_waveform(
    waveform: torch.Tensor,
    sample_rate: int,
    hop: int = DEFAULT_HOP,
    window: int = DEFAULT_WINDOW,
    n_mels: int = DEFAULT_N_MELS,
) -> torch.Tensor:
    """Batched log-mel: waveform [..., N] -> [..., n_mels, frames]."""
    if waveform.shape[-1] < window:
        raise ArgumentError(
            f"Clip of {waveform.shape[-1]} samples is shorter than the window ({window})"
        )
    mel = _mel_transform(sample_rate, hop, window, n_mels)(waveform.float())
    return torch.log(mel + LOG_FLOOR)


def compute_logmel(
    clip: AudioClip,
    hop: int = DEFAULT_HOP,
    window: int = DEFAULT_WINDOW,
    n_mels: int = DEFAULT_N_MELS,
) -> MelSpectrogram:
    """
    Compute log(mel_filterbank(|STFT|^2) + 1e-10) of a clip.

    Frames follow floor((len - window) / hop) + 1 (no centre padding).
    """
    values = logmel_from_waveform(
        torch.from_numpy(np.ascontiguousarray(clip.waveform)),
        clip.sample_rate,
        hop,
        window,
        n_mels,
    )
    return MelSpectrogram(values=values, hop=hop, window=window, n_mels=n_mels)


def horizontal_flip(image: ImageSample) -> ImageSample:
    return ImageSample(pixels=np.ascontiguousarray(image.pixels[:, ::-1, :]), class_id=image.class_id)


def random_crop_resize(pixels: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """Crop a random square of at least MIN_CROP_FRACTION of the side, resize back to size."""
    height, width = pixels.shape[:2]
    side = min(height, width)
    crop = int(rng.integers(int(np.ceil(MIN_CROP_FRACTION * side)), side + 1))
    top = int(rng.integers(0, height - crop + 1))
    left = int(rng.integers(0, width - crop + 1))
    patch = pixels[top:top + crop, left:left + crop, :]
    if crop == size:
        return np.ascontiguousarray(patch)
    tensor = torch.from_numpy(np.ascontiguousarray(patch)).permute(2, 0, 1).unsqueeze(0)
    resized = F.interpolate(tensor, size=(size, size), mode="bilinear", align_corners=False)
    return resized.squeeze(0).permute(1, 2, 0).numpy().astype(pixels.dtype)


def augment(
    image: ImageSample,
    rng: np.random.Generator,
    *,
    size: Optional[int] = None,
    flip_prob: float = 0.5,
    crop: bool = True,
) -> ImageSample:
    """Horizontal flip with probability flip_prob, then random crop + resize."""
    size = size or image.size
    out = horizontal_flip(image) if rng.random() < flip_prob else image
    if crop:
        out = ImageSample(pixels=random_crop_resize(out.pixels, rng, size), class_id=out.class_id)
    return out


def augment_batch(images: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Apply augment() to a [B, 3, H, W] tensor batch."""
    out = []
    for pixels in images.permute(0, 2, 3, 1).cpu().numpy():
        sample = augment(ImageSample(pixels=pixels, class_id=-1), rng)
        out.append(torch.from_numpy(sample.pixels).permute(2, 0, 1))
    return torch.stack(out).to(images.device)


def mel_center_frequencies(sample_rate: int, n_mels: int, f_min: float = 0.0) -> Tuple[float, ...]:
    """Centre frequency (Hz) of each HTK mel band used by compute_logmel."""
    def hz_to_mel(f: float) -> float:
        return 2595.0 * np.log10(1.0 + f / 700.0)

    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz = 700.0 * (10.0 ** (mels / 2595.0) - 1.0)
    return tuple(float(f) for f in hz[1:-1])


__all__ = [
    "LOG_FLOOR",
    "MelSpectrogram",
    "expected_frames",
    "logmel_from_waveform",
    "compute_logmel",
    "horizontal_flip",
    "random_crop_resize",
    "augment",
    "augment_batch",
    "mel_center_frequencies",
]
