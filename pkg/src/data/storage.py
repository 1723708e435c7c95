"""
On-disk dataset layout.

    <root>/manifest.json               class names, seed, counts, checksum
    <root>/<split>/metadata.jsonl      one record per example
    <root>/<split>/<id>.wav            16-bit PCM mono
    <root>/<split>/<id>.png            8-bit RGB
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from PIL import Image
from scipy.io import wavfile

from src.data.synth import AudioClip, DatasetSplit, ImageSample, PairedExample, dataset_checksum
from src.utils.validation_utils import ArtifactNotFoundError

SPLITS = ("train", "val", "heldout")
MANIFEST_NAME = "manifest.json"


def write_wav(path: Path, clip: AudioClip) -> None:
    pcm = np.round(np.clip(clip.waveform, -1.0, 1.0) * 32767.0).astype(np.int16)
    wavfile.write(str(path), clip.sample_rate, pcm)


def read_wav(path: Path, class_id: int = -1) -> AudioClip:
    if not Path(path).exists():
        raise ArtifactNotFoundError(f"Audio file not found: {path}")
    sample_rate, pcm = wavfile.read(str(path))
    if pcm.ndim > 1:
        pcm = pcm.mean(axis=1)
    if pcm.dtype == np.int16:
        waveform = pcm.astype(np.float32) / 32767.0
    else:
        waveform = pcm.astype(np.float32)
    return AudioClip(waveform=np.clip(waveform, -1.0, 1.0), sample_rate=int(sample_rate), class_id=class_id)


def pixels_to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.round((np.clip(pixels, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


def write_png(path: Path, pixels: np.ndarray) -> None:
    """Write an H x W x 3 array in [-1, 1] as an 8-bit PNG."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels_to_uint8(pixels)).save(path)


def read_png(path: Path, class_id: int = -1, size: int | None = None) -> ImageSample:
    if not Path(path).exists():
        raise ArtifactNotFoundError(f"Image file not found: {path}")
    image = Image.open(path).convert("RGB")
    if size is not None and image.size != (size, size):
        image = image.resize((size, size), Image.BILINEAR)
    pixels = np.asarray(image, dtype=np.float32) / 127.5 - 1.0
    return ImageSample(pixels=pixels, class_id=class_id)


def save_dataset(split: DatasetSplit, root: Path | str) -> Path:
    """Persist a DatasetSplit under root; returns the manifest path."""
    root = Path(root)
    counts: Dict[str, int] = {}
    for name in SPLITS:
        examples = getattr(split, name)
        split_dir = root / name
        split_dir.mkdir(parents=True, exist_ok=True)
        with open(split_dir / "metadata.jsonl", "w", encoding="utf-8") as f:
            for ex in examples:
                wav_name, png_name = f"{ex.example_id}.wav", f"{ex.example_id}.png"
                write_wav(split_dir / wav_name, ex.audio)
                write_png(split_dir / png_name, ex.image.pixels)
                record = {
                    "example_id": ex.example_id,
                    "class_id": ex.class_id,
                    "caption": ex.caption,
                    "caption_tokens": list(ex.caption_tokens),
                    "audio_path": wav_name,
                    "image_path": png_name,
                }
                f.write(json.dumps(record) + "\n")
        counts[name] = len(examples)

    manifest = {
        "class_names": list(split.class_names),
        "seed": split.seed,
        "counts": counts,
        "checksum": dataset_checksum(split),
    }
    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return manifest_path


def _load_split(split_dir: Path) -> Tuple[PairedExample, ...]:
    metadata = split_dir / "metadata.jsonl"
    if not metadata.exists():
        return ()
    examples: List[PairedExample] = []
    with open(metadata, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            class_id = int(rec["class_id"])
            examples.append(
                PairedExample(
                    example_id=rec["example_id"],
                    audio=read_wav(split_dir / rec["audio_path"], class_id),
                    image=read_png(split_dir / rec["image_path"], class_id),
                    caption=rec["caption"],
                    caption_tokens=tuple(rec["caption_tokens"]),
                    class_id=class_id,
                )
            )
    return tuple(examples)


def load_dataset(root: Path | str) -> DatasetSplit:
    """Load a dataset directory written by save_dataset."""
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.exists():
        raise ArtifactNotFoundError(
            f"Dataset manifest not found: {manifest_path}. Run 'synth-data' first."
        )
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    return DatasetSplit(
        train=_load_split(root / "train"),
        val=_load_split(root / "val"),
        heldout=_load_split(root / "heldout"),
        class_names=tuple(manifest["class_names"]),
        seed=int(manifest.get("seed", 0)),
    )


__all__ = [
    "write_wav",
    "read_wav",
    "write_png",
    "read_png",
    "pixels_to_uint8",
    "save_dataset",
    "load_dataset",
]
