"""
Versioned checkpoint archives.

A checkpoint is a single ``torch.save`` file:

    version       "sonic-adapters/1"
    stage         stage0 / stage1 / stage2 / eval
    config        RunConfig snapshot
    headers       constructor arguments per parameter group
    groups        state_dict per group (backbone, text_embedder, adapters,
                  projector, eval_embedder); missing groups are absent
    optimizer     optimizer state or None
    step          optimizer step counter
    partition     PartitionReport of the stage, if any
    extras        free-form metadata (dataset checksum, loss summary)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

import torch

from src.audio.projector import NUM_SELF_ATTENTION_BLOCKS, build_projector
from src.config.run_config import RunConfig, build_run_config
from src.diffusion.adapters import build_adapters
from src.diffusion.text import CaptionEmbedder
from src.diffusion.unet import DenoisingUNet
from src.metrics.embedder import embedder_header, load_eval_embedder
from src.pipeline.models import ModelBundle, build_encoder, build_schedule
from src.schemas.reports import PartitionReport
from src.utils.validation_utils import ArtifactNotFoundError, ConfigurationError

CHECKPOINT_VERSION = "sonic-adapters/1"
CHECKPOINT_GROUPS = ("backbone", "text_embedder", "adapters", "projector", "eval_embedder")


@dataclass
class LoadedCheckpoint:
    version: str
    stage: str
    config: RunConfig
    bundle: ModelBundle
    step: int = 0
    optimizer_state: Optional[Dict[str, Any]] = None
    partition: Optional[PartitionReport] = None
    extras: Dict[str, Any] = field(default_factory=dict)

    @property
    def groups(self) -> tuple:
        present = {
            "backbone": self.bundle.backbone,
            "text_embedder": self.bundle.text_embedder,
            "adapters": self.bundle.adapters,
            "projector": self.bundle.projector,
            "eval_embedder": self.bundle.eval_embedder,
        }
        return tuple(name for name in CHECKPOINT_GROUPS if present[name] is not None)


def save_checkpoint(
    path: Path | str,
    bundle: ModelBundle,
    config: RunConfig,
    *,
    stage: str,
    step: int = 0,
    optimizer: Optional[torch.optim.Optimizer] = None,
    partition: Optional[PartitionReport] = None,
    extras: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write every non-None group of bundle into one archive at path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    groups: Dict[str, Dict[str, torch.Tensor]] = {}
    headers: Dict[str, Dict[str, Any]] = {}
    for name, module, header in (
        ("backbone", bundle.backbone, lambda m: m.header()),
        ("text_embedder", bundle.text_embedder, lambda m: m.header()),
        ("adapters", bundle.adapters, lambda m: m.header()),
        ("projector", bundle.projector, lambda m: m.header()),
        ("eval_embedder", bundle.eval_embedder, embedder_header),
    ):
        if module is None:
            continue
        groups[name] = {k: v.detach().cpu() for k, v in module.state_dict().items()}
        headers[name] = header(module)

    archive = {
        "version": CHECKPOINT_VERSION,
        "stage": stage,
        "config": config.model_dump(mode="json"),
        "headers": headers,
        "groups": groups,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "step": int(step),
        "partition": partition.model_dump() if partition is not None else None,
        "extras": dict(extras or {}),
    }
    torch.save(archive, path)
    return path


def _restore_backbone(header: Dict[str, Any]) -> DenoisingUNet:
    return DenoisingUNet(
        in_channels=int(header["in_channels"]),
        widths=tuple(int(w) for w in header["widths"]),
        context_dim=int(header["context_dim"]),
        time_dim=int(header["time_dim"]),
        heads=int(header["heads"]),
        ff_mult=int(header["ff_mult"]),
        groups=int(header["groups"]),
    )


def _restore_text_embedder(header: Dict[str, Any]) -> CaptionEmbedder:
    return CaptionEmbedder(
        int(header["vocab_size"]),
        int(header["num_tokens"]),
        int(header["token_dim"]),
        int(header.get("heads", 1)),
    )


def load_checkpoint(
    path: Path | str,
    required_groups: Iterable[str] = ("backbone", "text_embedder"),
    device: torch.device | str = "cpu",
) -> LoadedCheckpoint:
    """
    Load and rebuild a checkpoint written by save_checkpoint.

    Raises:
        ArtifactNotFoundError: path does not exist
        ConfigurationError: wrong version, missing groups or inconsistent headers
    """
    path = Path(path)
    if not path.exists():
        raise ArtifactNotFoundError(f"Checkpoint not found: {path}")
    try:
        archive = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise ConfigurationError(f"Unreadable checkpoint {path}: {e}") from e

    version = archive.get("version") if isinstance(archive, dict) else None
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"Checkpoint {path} has version {version!r}, expected {CHECKPOINT_VERSION!r}")

    groups: Dict[str, Dict[str, torch.Tensor]] = archive.get("groups", {})
    headers: Dict[str, Dict[str, Any]] = archive.get("headers", {})
    unknown = set(groups) - set(CHECKPOINT_GROUPS)
    if unknown:
        raise ConfigurationError(f"Checkpoint {path} carries unknown groups {sorted(unknown)}")
    missing = [name for name in required_groups if name not in groups]
    if missing:
        raise ConfigurationError(
            f"Checkpoint {path} (stage {archive.get('stage')}) lacks required groups {missing}"
        )
    if "backbone" not in groups or "text_embedder" not in groups:
        raise ConfigurationError(f"Checkpoint {path} has no backbone")

    config = build_run_config(archive["config"])
    backbone = _restore_backbone(headers["backbone"])
    text_embedder = _restore_text_embedder(headers["text_embedder"])
    try:
        backbone.load_state_dict(groups["backbone"])
        text_embedder.load_state_dict(groups["text_embedder"])
    except RuntimeError as e:
        raise ConfigurationError(f"Backbone weights in {path} do not match their header: {e}") from e

    bundle = ModelBundle(
        backbone=backbone,
        text_embedder=text_embedder,
        encoder=build_encoder(config),
        schedule=build_schedule(config),
    )

    if "projector" in groups:
        header = headers["projector"]
        if header.get("num_blocks") != NUM_SELF_ATTENTION_BLOCKS:
            raise ConfigurationError(f"Incompatible projector header in {path}: {header}")
        if int(header["token_dim"]) != backbone.context_dim:
            raise ConfigurationError(
                f"projector token width {header['token_dim']} differs from the backbone's {backbone.context_dim}"
            )
        bundle.projector = build_projector(header)
        bundle.projector.load_state_dict(groups["projector"])

    if "adapters" in groups:
        header = headers["adapters"]
        adapters = build_adapters(
            backbone,
            header["insertion_set"],
            header.get("audio_dim") or backbone.context_dim,
            int(header.get("heads", 1)),
            int(header.get("ff_mult", 1)),
        )
        try:
            adapters.load_state_dict(groups["adapters"])
        except RuntimeError as e:
            raise ConfigurationError(f"Adapter weights in {path} do not match insertion set: {e}") from e
        adapters.beta = float(header.get("beta", 1.0))
        adapters.site_beta = {int(k): float(v) for k, v in (header.get("site_beta") or {}).items()}
        bundle.adapters = adapters

    if "eval_embedder" in groups:
        bundle.eval_embedder = load_eval_embedder(groups["eval_embedder"], headers["eval_embedder"])

    partition = archive.get("partition")
    return LoadedCheckpoint(
        version=version,
        stage=str(archive.get("stage", "")),
        config=config,
        bundle=bundle.to(device),
        step=int(archive.get("step", 0)),
        optimizer_state=archive.get("optimizer"),
        partition=PartitionReport.model_validate(partition) if partition else None,
        extras=dict(archive.get("extras") or {}),
    )


__all__ = [
    "CHECKPOINT_VERSION",
    "CHECKPOINT_GROUPS",
    "LoadedCheckpoint",
    "save_checkpoint",
    "load_checkpoint",
]
