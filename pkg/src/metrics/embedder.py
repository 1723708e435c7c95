"""
Evaluation embedding space.

A tiny dual encoder (image CNN + MLP over frozen audio embeddings) with a
caption-text pathway for zero-shot class prototypes. It is trained once on
the held-out split with the symmetric contrastive loss (image-audio and
image-caption, same-class pairs as positives) and frozen afterwards; its
parameter checksum is recorded in every metrics report.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from src.data.captions import NULL_TOKEN_ID, CaptionTokenizer, caption_for
from src.diffusion.adapters import parameter_digest
from src.losses.objectives import contrastive_alignment_loss
from src.utils.validation_utils import ArgumentError


class EvalEmbedder(nn.Module):
    def __init__(self, audio_dim: int = 512, vocab_size: int = 16, dim: int = 64, image_channels: int = 3):
        super().__init__()
        self.audio_dim = audio_dim
        self.vocab_size = vocab_size
        self.dim = dim
        self.image_channels = image_channels
        self.image_encoder = nn.Sequential(
            nn.Conv2d(image_channels, 32, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.GELU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1),
            nn.GELU(),
            nn.AdaptiveAvgPool2d(1),
            nn.Flatten(),
            nn.Linear(64, dim),
        )
        self.audio_encoder = nn.Sequential(nn.Linear(audio_dim, 128), nn.GELU(), nn.Linear(128, dim))
        self.text_embedding = nn.EmbeddingBag(vocab_size, dim, mode="mean", padding_idx=NULL_TOKEN_ID)
        self.text_proj = nn.Linear(dim, dim)
        self.register_buffer("prototypes", torch.zeros(0, dim))

    def encode_images(self, images: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.image_encoder(images), dim=-1)

    def encode_audio(self, audio_embeddings: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.audio_encoder(audio_embeddings), dim=-1)

    def encode_captions(self, ids: torch.Tensor) -> torch.Tensor:
        # null ids are left out of the mean, so padding length never matters
        return F.normalize(self.text_proj(self.text_embedding(ids)), dim=-1)

    @torch.no_grad()
    def build_prototypes(self, class_names: Sequence[str], tokenizer: CaptionTokenizer) -> torch.Tensor:
        """Class prototypes from the caption template of every class name."""
        ids = [tokenizer.encode(caption_for(name)) for name in class_names]
        width = max(len(i) for i in ids)
        padded = torch.tensor([tokenizer.pad(i, width) for i in ids], dtype=torch.long)
        self.prototypes = self.encode_captions(padded.to(self.prototypes.device))
        return self.prototypes

    @property
    def checksum(self) -> str:
        return parameter_digest(self)

    # numpy-facing helpers used by the metrics

    @torch.no_grad()
    def image_features(self, images: torch.Tensor, batch_size: int = 256) -> np.ndarray:
        chunks = [self.encode_images(images[i:i + batch_size]) for i in range(0, images.shape[0], batch_size)]
        return torch.cat(chunks).cpu().numpy().astype(np.float64)

    @torch.no_grad()
    def audio_features(self, audio_embeddings: torch.Tensor) -> np.ndarray:
        return self.encode_audio(audio_embeddings).cpu().numpy().astype(np.float64)

    def prototype_features(self) -> np.ndarray:
        if self.prototypes.shape[0] == 0:
            raise ArgumentError("class prototypes have not been built")
        return self.prototypes.detach().cpu().numpy().astype(np.float64)


def train_eval_embedder(
    images: torch.Tensor,
    audio_embeddings: torch.Tensor,
    caption_ids: torch.Tensor,
    labels: torch.Tensor,
    class_names: Sequence[str],
    tokenizer: CaptionTokenizer,
    *,
    steps: int = 800,
    dim: int = 64,
    lr: float = 1e-3,
    batch_size: int = 64,
    temperature: float = 0.07,
    seed: int = 0,
    show_progress: bool = False,
) -> EvalEmbedder:
    """
    Train and freeze the evaluation embedder on held-out examples.

    Args:
        images: [N, 3, H, W] in [-1, 1]
        audio_embeddings: [N, D_a] frozen audio encoder outputs
        caption_ids: [N, L] caption token ids
        labels: [N] class ids
    """
    if images.shape[0] < 2:
        raise ArgumentError("the evaluation embedder needs at least two training examples")
    torch.manual_seed(seed)
    embedder = EvalEmbedder(audio_embeddings.shape[1], tokenizer.vocab_size, dim, images.shape[1])
    optimizer = torch.optim.AdamW(embedder.parameters(), lr=lr, weight_decay=1e-4)
    order_rng = np.random.default_rng(seed)
    n = images.shape[0]

    embedder.train()
    for _ in tqdm(range(steps), desc="eval embedder", disable=not show_progress):
        idx = torch.from_numpy(order_rng.choice(n, size=min(batch_size, n), replace=False))
        img = embedder.encode_images(images[idx])
        loss = contrastive_alignment_loss(img, embedder.encode_audio(audio_embeddings[idx]), temperature, labels[idx])
        loss = loss + contrastive_alignment_loss(
            img, embedder.encode_captions(caption_ids[idx]), temperature, labels[idx]
        )
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

    embedder.eval()
    embedder.requires_grad_(False)
    embedder.build_prototypes(class_names, tokenizer)
    return embedder


def load_eval_embedder(state: dict, header: dict) -> EvalEmbedder:
    embedder = EvalEmbedder(
        int(header["audio_dim"]),
        int(header["vocab_size"]),
        int(header["dim"]),
        int(header.get("image_channels", 3)),
    )
    embedder.prototypes = torch.zeros(int(header["n_classes"]), int(header["dim"]))
    embedder.load_state_dict(state)
    embedder.eval()
    embedder.requires_grad_(False)
    return embedder


def embedder_header(embedder: EvalEmbedder) -> dict:
    return {
        "audio_dim": embedder.audio_dim,
        "vocab_size": embedder.vocab_size,
        "dim": embedder.dim,
        "image_channels": embedder.image_channels,
        "n_classes": int(embedder.prototypes.shape[0]),
    }


__all__ = [
    "EvalEmbedder",
    "train_eval_embedder",
    "load_eval_embedder",
    "embedder_header",
]
