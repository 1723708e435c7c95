"""
Synthetic paired audio-image dataset and preprocessing.

Components:
- synth: deterministic dataset generator with known class semantics
- preprocessing: log-mel front end and flip/crop augmentation
- captions: caption templates and vocabulary
- storage: WAV/PNG/JSONL persistence
"""

from src.data.captions import NULL_TOKEN_ID, CaptionTokenizer, caption_for
from src.data.preprocessing import (
    MelSpectrogram,
    augment,
    augment_batch,
    compute_logmel,
    horizontal_flip,
    logmel_from_waveform,
)
from src.data.storage import load_dataset, read_png, read_wav, save_dataset, write_png, write_wav
from src.data.synth import (
    AudioClip,
    DatasetSplit,
    ImageSample,
    PairedExample,
    dataset_checksum,
    generate_dataset,
)

__all__ = [
    "NULL_TOKEN_ID",
    "CaptionTokenizer",
    "caption_for",
    "MelSpectrogram",
    "augment",
    "augment_batch",
    "compute_logmel",
    "horizontal_flip",
    "logmel_from_waveform",
    "load_dataset",
    "read_png",
    "read_wav",
    "save_dataset",
    "write_png",
    "write_wav",
    "AudioClip",
    "DatasetSplit",
    "ImageSample",
    "PairedExample",
    "dataset_checksum",
    "generate_dataset",
]
