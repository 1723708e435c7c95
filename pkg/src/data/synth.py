"""
Synthetic paired audio-image-caption dataset.

Every class k owns a fundamental frequency f_k (audio) and a dominant hue,
shape and stripe texture (image). Examples add seeded jitter around those
class prototypes so that class semantics are known exactly and every
example is reproducible from (seed, parameters).
"""

from __future__ import annotations

import colorsys
import hashlib
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.data.captions import CaptionTokenizer, caption_for
from src.utils.validation_utils import ArgumentError

DEFAULT_CLASS_NAMES: Tuple[str, ...] = (
    "forest", "ocean", "fire", "rain", "thunder", "wind", "birds", "engine",
    "river", "crowd", "bells", "insects",
)
SHAPES: Tuple[str, ...] = ("circle", "square", "triangle", "diamond")
BASE_FREQUENCY = 200.0
FREQUENCY_SPAN_OCTAVES = 4.0


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform with amplitude in [-1, 1]."""

    waveform: np.ndarray
    sample_rate: int
    class_id: int

    def __post_init__(self) -> None:
        if self.waveform.ndim != 1:
            raise ArgumentError("waveform must be one-dimensional")
        if self.waveform.size and float(np.max(np.abs(self.waveform))) > 1.0:
            raise ArgumentError("waveform amplitude exceeds 1")

    @property
    def duration(self) -> float:
        return self.waveform.shape[0] / self.sample_rate


@dataclass(frozen=True)
class ImageSample:
    """H x W x 3 image with pixel values in [-1, 1]."""

    pixels: np.ndarray
    class_id: int

    @property
    def size(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class PairedExample:
    example_id: str
    audio: AudioClip
    image: ImageSample
    caption: str
    caption_tokens: Tuple[int, ...]
    class_id: int

    def __post_init__(self) -> None:
        if not (self.audio.class_id == self.image.class_id == self.class_id):
            raise ArgumentError(f"class ids disagree in example {self.example_id}")


@dataclass(frozen=True)
class DatasetSplit:
    train: Tuple[PairedExample, ...]
    val: Tuple[PairedExample, ...]
    class_names: Tuple[str, ...]
    seed: int = 0
    heldout: Tuple[PairedExample, ...] = field(default_factory=tuple)

    @property
    def tokenizer(self) -> CaptionTokenizer:
        return CaptionTokenizer(self.class_names)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)


def class_names_for(n_classes: int) -> Tuple[str, ...]:
    names = list(DEFAULT_CLASS_NAMES[:n_classes])
    names.extend(f"class{k}" for k in range(len(names), n_classes))
    return tuple(names)


def class_frequency(class_id: int, n_classes: int) -> float:
    """Fundamental frequency f_k, geometrically spaced over FREQUENCY_SPAN_OCTAVES."""
    return BASE_FREQUENCY * 2.0 ** (FREQUENCY_SPAN_OCTAVES * class_id / max(n_classes - 1, 1))


def class_hue(class_id: int, n_classes: int) -> float:
    return class_id / n_classes


def synthesize_audio(
    class_id: int,
    n_classes: int,
    rng: np.random.Generator,
    sample_rate: int = 16000,
    duration: float = 2.0,
) -> AudioClip:
    """Band-limited harmonic tone around f_k with seeded jitter."""
    n = int(round(sample_rate * duration))
    t = np.arange(n, dtype=np.float64) / sample_rate
    f0 = class_frequency(class_id, n_classes) * (1.0 + rng.uniform(-0.03, 0.03))
    nyquist = sample_rate / 2.0

    wave = np.zeros(n, dtype=np.float64)
    for harmonic in range(1, 5):
        freq = f0 * harmonic
        if freq >= 0.9 * nyquist:
            break
        amplitude = rng.uniform(0.7, 1.0) / harmonic
        wave += amplitude * np.sin(2.0 * math.pi * freq * t + rng.uniform(0.0, 2.0 * math.pi))

    # slow amplitude envelope plus a low noise floor
    envelope = 0.75 + 0.25 * np.sin(2.0 * math.pi * rng.uniform(0.5, 2.0) * t + rng.uniform(0, math.pi))
    wave = wave * envelope + rng.normal(0.0, 0.02, size=n)

    peak = float(np.max(np.abs(wave))) or 1.0
    wave = wave / peak * rng.uniform(0.6, 0.9)
    return AudioClip(waveform=wave.astype(np.float32), sample_rate=sample_rate, class_id=class_id)


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(h % 1.0, s, v), dtype=np.float64)


def synthesize_image(
    class_id: int,
    n_classes: int,
    rng: np.random.Generator,
    size: int = 32,
) -> ImageSample:
    """Class hue + shape + stripe texture on a dark tinted background."""
    hue = class_hue(class_id, n_classes)
    shape = SHAPES[class_id % len(SHAPES)]
    angle = (class_id // len(SHAPES)) * math.pi / 3.0 + rng.uniform(-0.1, 0.1)
    stripe_freq = 3.0 + (class_id % 3)

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)
    cx, cy = 0.5 + rng.uniform(-0.12, 0.12, size=2)
    radius = rng.uniform(0.22, 0.32)
    dx, dy = xs - cx, ys - cy

    if shape == "circle":
        mask = dx ** 2 + dy ** 2 <= radius ** 2
    elif shape == "square":
        mask = (np.abs(dx) <= radius * 0.85) & (np.abs(dy) <= radius * 0.85)
    elif shape == "triangle":
        mask = (dy <= radius * 0.8) & (dy >= -radius) & (np.abs(dx) <= (dy + radius) * 0.6)
    else:
        mask = np.abs(dx) + np.abs(dy) <= radius * 1.1

    background = _hsv(hue + 0.5, 0.35, 0.25 + rng.uniform(-0.05, 0.05))
    foreground = _hsv(hue + rng.uniform(-0.02, 0.02), 0.85, 0.9)
    texture = 0.8 + 0.2 * np.sin(
        2.0 * math.pi * stripe_freq * (xs * math.cos(angle) + ys * math.sin(angle))
    )

    img = np.broadcast_to(background, (size, size, 3)).copy()
    img[mask] = foreground * texture[mask][:, None]
    img += rng.normal(0.0, 0.02, size=img.shape)
    pixels = np.clip(img, 0.0, 1.0) * 2.0 - 1.0
    return ImageSample(pixels=pixels.astype(np.float32), class_id=class_id)


def _make_example(
    prefix: str,
    index: int,
    class_id: int,
    class_names: Sequence[str],
    tokenizer: CaptionTokenizer,
    rng: np.random.Generator,
    sample_rate: int,
    duration: float,
    image_size: int,
) -> PairedExample:
    n_classes = len(class_names)
    audio = synthesize_audio(class_id, n_classes, rng, sample_rate, duration)
    image = synthesize_image(class_id, n_classes, rng, image_size)
    caption = caption_for(class_names[class_id])
    return PairedExample(
        example_id=f"{prefix}{index:05d}",
        audio=audio,
        image=image,
        caption=caption,
        caption_tokens=tokenizer.encode(caption),
        class_id=class_id,
    )


def generate_dataset(
    seed: int,
    n_classes: int,
    n_per_class: int,
    val_fraction: float,
    *,
    sample_rate: int = 16000,
    duration: float = 2.0,
    image_size: int = 32,
    heldout_per_class: int = 0,
) -> DatasetSplit:
    """
    Generate the deterministic synthetic dataset.

    Args:
        seed: Master seed; identical arguments give byte-identical datasets.
        n_classes: Number of classes (>= 2).
        n_per_class: Examples per class (>= 4), split into train/val.
        val_fraction: Fraction of each class placed in the validation split.
        heldout_per_class: Extra examples per class for the evaluation embedder.

    Returns:
        DatasetSplit with disjoint train/val and every class in both.
    """
    if n_classes < 2:
        raise ArgumentError(f"n_classes must be >= 2, got {n_classes}")
    if n_per_class < 4:
        raise ArgumentError(f"n_per_class must be >= 4, got {n_per_class}")
    if not (0.0 < val_fraction < 1.0):
        raise ArgumentError(f"val_fraction must lie in (0, 1), got {val_fraction}")

    class_names = class_names_for(n_classes)
    tokenizer = CaptionTokenizer(class_names)
    n_val = min(max(1, int(round(n_per_class * val_fraction))), n_per_class - 1)

    root = np.random.SeedSequence(seed)
    class_seeds = root.spawn(n_classes)
    train: List[PairedExample] = []
    val: List[PairedExample] = []
    heldout: List[PairedExample] = []

    for class_id, class_seed in enumerate(class_seeds):
        example_seeds = class_seed.spawn(n_per_class + heldout_per_class)
        order = np.random.default_rng(class_seed.spawn(1)[0]).permutation(n_per_class)
        val_members = set(order[:n_val].tolist())
        for i, example_seed in enumerate(example_seeds):
            rng = np.random.default_rng(example_seed)
            global_index = class_id * (n_per_class + heldout_per_class) + i
            if i >= n_per_class:
                target, prefix = heldout, "h"
            elif i in val_members:
                target, prefix = val, "v"
            else:
                target, prefix = train, "t"
            target.append(
                _make_example(
                    prefix, global_index, class_id, class_names, tokenizer, rng,
                    sample_rate, duration, image_size,
                )
            )

    return DatasetSplit(
        train=tuple(train),
        val=tuple(val),
        class_names=class_names,
        seed=seed,
        heldout=tuple(heldout),
    )


def dataset_checksum(split: DatasetSplit) -> str:
    """SHA-256 over every waveform, image and label of the split."""
    digest = hashlib.sha256()
    digest.update("|".join(split.class_names).encode("utf-8"))
    for part in (split.train, split.val, split.heldout):
        for ex in part:
            digest.update(ex.example_id.encode("utf-8"))
            digest.update(np.int64(ex.class_id).tobytes())
            digest.update(ex.audio.waveform.tobytes())
            digest.update(ex.image.pixels.tobytes())
            digest.update(np.asarray(ex.caption_tokens, dtype=np.int64).tobytes())
    return digest.hexdigest()


__all__ = [
    "DEFAULT_CLASS_NAMES",
    "AudioClip",
    "ImageSample",
    "PairedExample",
    "DatasetSplit",
    "class_names_for",
    "class_frequency",
    "class_hue",
    "synthesize_audio",
    "synthesize_image",
    "generate_dataset",
    "dataset_checksum",
]
