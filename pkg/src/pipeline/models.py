"""
Model bundle construction and dataset tensorization.

Builds the backbone, caption embedder, projector, frozen audio encoder and
noise schedule from a RunConfig, and turns dataset examples into the
stacked tensors every training stage and the evaluator consume.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.audio.encoder import FrozenAudioEncoder
from src.audio.projector import AudioProjector
from src.config.run_config import RunConfig
from src.data.captions import CaptionTokenizer
from src.data.preprocessing import logmel_from_waveform
from src.data.synth import PairedExample
from src.diffusion.adapters import AdapterState
from src.diffusion.latent import pixels_to_tensor
from src.diffusion.schedule import NoiseSchedule
from src.diffusion.text import CaptionEmbedder
from src.diffusion.unet import DenoisingUNet
from src.metrics.embedder import EvalEmbedder
from src.utils.validation_utils import ArgumentError, require


@dataclass
class ModelBundle:
    """Every module a run may touch; absent groups stay None."""

    backbone: DenoisingUNet
    text_embedder: CaptionEmbedder
    encoder: FrozenAudioEncoder
    schedule: NoiseSchedule
    projector: Optional[AudioProjector] = None
    adapters: Optional[AdapterState] = None
    eval_embedder: Optional[EvalEmbedder] = None

    def to(self, device: torch.device | str) -> "ModelBundle":
        for module in (self.backbone, self.text_embedder, self.projector, self.adapters, self.eval_embedder):
            if module is not None:
                module.to(device)
        return self

    @property
    def device(self) -> torch.device:
        return next(self.backbone.parameters()).device


@dataclass
class ExampleTensors:
    """Stacked tensors of a list of examples, row-aligned with example_ids."""

    example_ids: List[str]
    images: torch.Tensor
    audio_embeddings: torch.Tensor
    caption_ids: torch.Tensor
    labels: torch.Tensor
    mels: Optional[torch.Tensor] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.example_ids)

    def subset(self, count: Optional[int]) -> "ExampleTensors":
        if count is None or count >= len(self):
            return self
        return ExampleTensors(
            example_ids=self.example_ids[:count],
            images=self.images[:count],
            audio_embeddings=self.audio_embeddings[:count],
            caption_ids=self.caption_ids[:count],
            labels=self.labels[:count],
            mels=self.mels[:count] if self.mels is not None else None,
        )


def build_schedule(config: RunConfig) -> NoiseSchedule:
    bb = config.backbone
    return NoiseSchedule.linear(bb.num_timesteps, bb.beta_start, bb.beta_end)


def build_encoder(config: RunConfig) -> FrozenAudioEncoder:
    return FrozenAudioEncoder(config.audio.n_mels, config.audio.embed_dim, config.audio.encoder_seed)


def build_backbone(config: RunConfig, vocab_size: int) -> Tuple[DenoisingUNet, CaptionEmbedder]:
    """Fresh backbone and caption embedder; the token width is shared with the projector."""
    bb = config.backbone
    token_dim = config.projector.token_dim
    backbone = DenoisingUNet(
        in_channels=3,
        widths=tuple(bb.widths),
        context_dim=token_dim,
        time_dim=bb.time_dim,
        heads=bb.heads,
        ff_mult=bb.ff_mult,
        groups=bb.groups,
    )
    text_embedder = CaptionEmbedder(vocab_size, bb.text_tokens, token_dim, bb.heads)
    return backbone, text_embedder


def build_audio_projector(config: RunConfig) -> AudioProjector:
    pc = config.projector
    return AudioProjector(
        embed_dim=config.audio.embed_dim,
        num_tokens=pc.num_tokens,
        token_dim=pc.token_dim,
        hidden_channels=pc.hidden_channels,
        heads=pc.heads,
        ff_mult=pc.ff_mult,
    )


def build_bundle(config: RunConfig, vocab_size: int, with_projector: bool = True) -> ModelBundle:
    backbone, text_embedder = build_backbone(config, vocab_size)
    return ModelBundle(
        backbone=backbone,
        text_embedder=text_embedder,
        encoder=build_encoder(config),
        schedule=build_schedule(config),
        projector=build_audio_projector(config) if with_projector else None,
    )


def caption_id_tensor(
    captions: Sequence[Sequence[int]],
    tokenizer: CaptionTokenizer,
    length: int,
) -> torch.Tensor:
    return torch.tensor([tokenizer.pad(ids, length) for ids in captions], dtype=torch.long)


@torch.no_grad()
def embed_waveforms(
    waveforms: Sequence[np.ndarray],
    sample_rate: int,
    config: RunConfig,
    encoder: FrozenAudioEncoder,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Equal-length waveforms -> (log-mels [N, n_mels, F], embeddings [N, D_a])."""
    lengths = {len(w) for w in waveforms}
    if len(lengths) != 1:
        raise ArgumentError(f"waveforms must share one length to be batched, got {sorted(lengths)}")
    stacked = torch.from_numpy(np.stack([np.asarray(w, dtype=np.float32) for w in waveforms]))
    mels = logmel_from_waveform(stacked, sample_rate, config.audio.hop, config.audio.window, config.audio.n_mels)
    return mels, encoder.encode_batch(mels)


def tensorize_examples(
    examples: Sequence[PairedExample],
    config: RunConfig,
    encoder: FrozenAudioEncoder,
    tokenizer: CaptionTokenizer,
    keep_mels: bool = False,
) -> ExampleTensors:
    """
    Stack images, frozen audio embeddings and padded caption ids.

    Raises:
        ArgumentError: no examples
    """
    require(bool(examples), "cannot tensorize an empty example list")
    images = pixels_to_tensor(np.stack([ex.image.pixels for ex in examples]))
    mels, embeddings = embed_waveforms(
        [ex.audio.waveform for ex in examples], examples[0].audio.sample_rate, config, encoder
    )
    return ExampleTensors(
        example_ids=[ex.example_id for ex in examples],
        images=images,
        audio_embeddings=embeddings,
        caption_ids=caption_id_tensor([ex.caption_tokens for ex in examples], tokenizer, config.backbone.text_tokens),
        labels=torch.tensor([ex.class_id for ex in examples], dtype=torch.long),
        mels=mels if keep_mels else None,
    )


def batch_plan(num_examples: int, batch_size: int, steps: int, seed: int) -> List[np.ndarray]:
    """
    Index arrays for every training step, fixed up front.

    Each epoch is a fresh seeded permutation; batches never straddle epochs
    unless the dataset is smaller than one batch.
    """
    if num_examples < 1:
        raise ArgumentError("batch_plan needs at least one example")
    rng = np.random.default_rng(seed)
    size = min(batch_size, num_examples)
    plan: List[np.ndarray] = []
    while len(plan) < steps:
        order = rng.permutation(num_examples)
        for start in range(0, num_examples - size + 1, size):
            plan.append(order[start:start + size])
            if len(plan) == steps:
                break
    return plan


__all__ = [
    "ModelBundle",
    "ExampleTensors",
    "build_schedule",
    "build_encoder",
    "build_backbone",
    "build_audio_projector",
    "build_bundle",
    "caption_id_tensor",
    "embed_waveforms",
    "tensorize_examples",
    "batch_plan",
]
