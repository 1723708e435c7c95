"""
Audio conditioning path: frozen featurizer and trainable token projector.
"""

from src.audio.encoder import FrozenAudioEncoder, encode_audio
from src.audio.projector import (
    AudioProjector,
    load_projector,
    null_audio_tokens,
    project,
    save_projector,
)

__all__ = [
    "FrozenAudioEncoder",
    "encode_audio",
    "AudioProjector",
    "load_projector",
    "null_audio_tokens",
    "project",
    "save_projector",
]
