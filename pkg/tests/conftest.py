"""Shared fixtures: a tiny run configuration, its dataset and a trained checkpoint chain."""

import copy
from pathlib import Path

import pytest
import torch

from src.config.run_config import RunConfig, build_run_config
from src.data.storage import save_dataset
from src.data.synth import DatasetSplit, generate_dataset
from src.diffusion.latent import tensor_to_pixels
from src.pipeline.commands import build_conditioning, edit_image
from src.pipeline.training import train_backbone, train_stage1, train_stage2
from src.sampling.guidance import ddim_sample

TINY_CONFIG = {
    "seed": 0,
    "data": {
        "seed": 0,
        "n_classes": 3,
        "n_per_class": 6,
        "val_fraction": 0.34,
        "heldout_per_class": 2,
        "sample_rate": 8000,
        "duration": 0.25,
        "image_size": 8,
    },
    "audio": {"hop": 128, "window": 256, "n_mels": 16, "embed_dim": 32},
    "projector": {"num_tokens": 4, "token_dim": 16, "hidden_channels": 16, "ff_mult": 2},
    "backbone": {"widths": [16, 32], "text_tokens": 8, "time_dim": 32, "num_timesteps": 50},
    "stage0": {"steps": 3, "batch_size": 4},
    "stage1": {"steps": 3, "batch_size": 3, "num_negatives": 4},
    "stage2": {"steps": 3, "batch_size": 3},
    "sampler": {"steps": 4, "guidance_scale": 3.0},
    "evaluation": {"embedder_steps": 5, "embedder_dim": 16, "embedder_batch_size": 6, "max_samples": 3},
}


def tiny_config_dict() -> dict:
    return copy.deepcopy(TINY_CONFIG)


def edit_with_plain_baseline(bundle, source_pixels, audio_embedding, cfg, injection):
    """A feature-injected edit and the uninjected sample from the same inverted noise, as H x W x 3 arrays."""
    result = edit_image(bundle, source_pixels, audio_embedding, cfg=cfg, injection=injection)
    cond = build_conditioning(bundle, audio_embedding.reshape(1, -1))
    plain = ddim_sample(bundle.backbone, bundle.adapters, cond, cfg, bundle.schedule, z_T=result.trajectory.z_T)
    return result.edited, tensor_to_pixels(plain.z0)[0]


@pytest.fixture
def tiny_config() -> RunConfig:
    return build_run_config(tiny_config_dict())


@pytest.fixture(scope="session")
def tiny_dataset() -> DatasetSplit:
    d = TINY_CONFIG["data"]
    return generate_dataset(
        d["seed"], d["n_classes"], d["n_per_class"], d["val_fraction"],
        sample_rate=d["sample_rate"], duration=d["duration"], image_size=d["image_size"],
        heldout_per_class=d["heldout_per_class"],
    )


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory, tiny_dataset):
    """Output root holding data/ and checkpoints/{backbone,projector,adapters}.pt."""
    root: Path = tmp_path_factory.mktemp("run")
    config = build_run_config(tiny_config_dict())
    save_dataset(tiny_dataset, root / "data")
    checkpoints = root / "checkpoints"
    torch.manual_seed(0)
    train_backbone(config, tiny_dataset, checkpoints / "backbone.pt")
    train_stage1(config, tiny_dataset, checkpoints / "backbone.pt", checkpoints / "projector.pt")
    train_stage2(config, tiny_dataset, checkpoints / "projector.pt", checkpoints / "adapters.pt")
    return root
