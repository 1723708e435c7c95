"""
Training stages.

    stage 0  train_backbone   text-conditioned denoiser + caption embedder
    stage 1  train_stage1     audio projector alignment to frozen caption tokens
    stage 2  train_stage2     gated adapters (+ projector) on the frozen backbone

Every stage draws batches from a plan fixed up front by the run seed,
appends one loss row per step to the run logger, and saves a checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from src.config.run_config import RunConfig
from src.data.captions import NULL_TOKEN_ID
from src.data.preprocessing import augment_batch
from src.data.synth import DatasetSplit
from src.diffusion.adapters import (
    build_adapters,
    init_adapters_from_text_attention,
    parameter_digest,
    set_trainable,
    trainable_partition,
)
from src.diffusion.text import align_tokens
from src.logging.run_logger import RunLogger
from src.losses.objectives import LossWeights, Stage1Batch, ddpm_loss, stage1_loss_terms
from src.metrics.probes import nearest_centroid_accuracy
from src.pipeline.checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from src.pipeline.models import (
    ExampleTensors,
    ModelBundle,
    batch_plan,
    build_audio_projector,
    build_bundle,
    tensorize_examples,
)
from src.sampling.guidance import null_caption_dropout, null_conditioning_dropout
from src.schemas.reports import PartitionReport
from src.utils.validation_utils import ArgumentError, ConfigurationError, require_finite


@dataclass
class StageResult:
    stage: str
    checkpoint: Path
    bundle: ModelBundle
    losses: List[float] = field(default_factory=list)
    partition: Optional[PartitionReport] = None
    metrics: Dict[str, float] = field(default_factory=dict)

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def _adamw(params, lr: float, config: RunConfig) -> torch.optim.AdamW:
    opt = config.optimizer
    return torch.optim.AdamW(params, lr=lr, weight_decay=opt.weight_decay, betas=tuple(opt.betas))


def _clip(parameters: Sequence[torch.nn.Parameter], config: RunConfig) -> None:
    if config.optimizer.grad_clip is not None:
        torch.nn.utils.clip_grad_norm_(parameters, config.optimizer.grad_clip)


def _log(logger: Optional[RunLogger], stage: str, step: int, components: Dict[str, float]) -> None:
    if logger is not None:
        logger.append_loss_row(stage, step, components)


def _sample_timesteps(batch: int, num_timesteps: int, generator: torch.Generator) -> torch.Tensor:
    return torch.randint(0, num_timesteps, (batch,), generator=generator)


# ---------------------------------------------------------------- stage 0


def train_backbone(
    config: RunConfig,
    dataset: DatasetSplit,
    checkpoint_path: Path | str,
    *,
    logger: Optional[RunLogger] = None,
    device: torch.device | str = "cpu",
    show_progress: bool = False,
) -> StageResult:
    """Pretrain the toy denoiser under caption conditioning with caption dropout."""
    torch.manual_seed(config.seed)
    bundle = build_bundle(config, dataset.tokenizer.vocab_size, with_projector=False).to(device)
    tensors = tensorize_examples(dataset.train, config, bundle.encoder, dataset.tokenizer)
    backbone, text_embedder, schedule = bundle.backbone, bundle.text_embedder, bundle.schedule

    params = [*backbone.parameters(), *text_embedder.parameters()]
    optimizer = _adamw(params, config.stage0.lr, config)
    rng = np.random.default_rng(config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    plan = batch_plan(len(tensors), config.stage0.batch_size, config.stage0.steps, config.seed)

    backbone.train()
    text_embedder.train()
    losses: List[float] = []
    for step, idx in enumerate(tqdm(plan, desc="stage0", disable=not show_progress)):
        index = torch.from_numpy(idx)
        z0 = augment_batch(tensors.images[index], rng).to(device)
        ids = null_caption_dropout(tensors.caption_ids[index], config.stage0.caption_dropout, NULL_TOKEN_ID, rng)
        c_text = text_embedder(ids.to(device))
        t = _sample_timesteps(z0.shape[0], schedule.num_timesteps, generator).to(device)
        noise = torch.randn(z0.shape, generator=generator).to(device)

        loss = ddpm_loss(lambda z, tt, _: backbone(z, tt, c_text), z0, t, None, noise, schedule)
        require_finite(loss, f"stage0 loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        _clip(params, config)
        optimizer.step()

        losses.append(float(loss.detach()))
        _log(logger, "stage0", step, {"ddpm": losses[-1]})

    backbone.eval()
    text_embedder.eval()
    path = save_checkpoint(
        checkpoint_path, bundle, config, stage="stage0", step=len(plan), optimizer=optimizer,
        extras={"final_loss": losses[-1] if losses else None, "class_names": list(dataset.class_names)},
    )
    return StageResult(stage="stage0", checkpoint=path, bundle=bundle, losses=losses)


# ---------------------------------------------------------------- stage 1


def stage1_indices(
    labels: np.ndarray,
    anchors: np.ndarray,
    num_negatives: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Positive and negative example indices for a batch of anchors.

    The positive shares the anchor's class (another example when one
    exists); negatives come from other classes without replacement, their
    count capped by the smallest pool available in the batch.

    Returns:
        (positives [B], negatives [B, N])
    """
    labels = np.asarray(labels)
    pools = [np.flatnonzero(labels != labels[a]) for a in anchors]
    n = min(num_negatives, *(len(p) for p in pools))
    if n < 1:
        raise ArgumentError("stage-1 batches need at least two classes")

    positives = np.empty(len(anchors), dtype=np.int64)
    negatives = np.empty((len(anchors), n), dtype=np.int64)
    for row, (anchor, pool) in enumerate(zip(anchors, pools)):
        same = np.flatnonzero(labels == labels[anchor])
        others = same[same != anchor]
        positives[row] = rng.choice(others) if others.size else anchor
        negatives[row] = rng.choice(pool, size=n, replace=False)
    return positives, negatives


def _stage1_batch(
    projector: torch.nn.Module,
    tensors: ExampleTensors,
    text_targets: torch.Tensor,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    device: torch.device | str,
) -> Stage1Batch:
    emb = tensors.audio_embeddings.to(device)
    b, n = negatives.shape
    anchor = projector(emb[torch.from_numpy(anchors)])
    positive = projector(emb[torch.from_numpy(positives)])
    negative = projector(emb[torch.from_numpy(negatives.reshape(-1))]).view(b, n, *anchor.shape[1:])
    return Stage1Batch(anchor=anchor, positive=positive, negatives=negative, text=text_targets[torch.from_numpy(anchors)])


@torch.no_grad()
def caption_token_targets(bundle: ModelBundle, caption_ids: torch.Tensor, num_tokens: int) -> torch.Tensor:
    """Frozen caption tokens resampled to the projector's K positions."""
    tokens = bundle.text_embedder(caption_ids.to(bundle.device))
    return align_tokens(tokens, num_tokens)


@torch.no_grad()
def token_centroid_accuracy(
    projector: torch.nn.Module,
    train: ExampleTensors,
    val: ExampleTensors,
) -> float:
    """Nearest-centroid accuracy of flattened projected tokens (train centroids, val queries)."""
    device = next(projector.parameters()).device
    train_tokens = projector(train.audio_embeddings.to(device)).flatten(1).cpu().numpy()
    val_tokens = projector(val.audio_embeddings.to(device)).flatten(1).cpu().numpy()
    return nearest_centroid_accuracy(train_tokens, train.labels.numpy(), val_tokens, val.labels.numpy())


def train_stage1(
    config: RunConfig,
    dataset: DatasetSplit,
    backbone_checkpoint: Path | str,
    checkpoint_path: Path | str,
    *,
    logger: Optional[RunLogger] = None,
    device: torch.device | str = "cpu",
    show_progress: bool = False,
) -> StageResult:
    """
    Align the audio projector with the frozen caption tokens.

    With stage1.skip set the projector keeps its random initialization and
    is saved untouched.
    """
    loaded = load_checkpoint(backbone_checkpoint, ("backbone", "text_embedder"), device)
    bundle = loaded.bundle
    set_trainable([bundle.backbone, bundle.text_embedder], False)
    bundle.backbone.eval()
    bundle.text_embedder.eval()

    torch.manual_seed(config.seed + 1)
    bundle.projector = build_audio_projector(config).to(device)
    if bundle.projector.token_dim != bundle.backbone.context_dim:
        raise ConfigurationError(
            f"projector token width {bundle.projector.token_dim} differs from the backbone's "
            f"{bundle.backbone.context_dim}"
        )

    tensors = tensorize_examples(dataset.train, config, bundle.encoder, dataset.tokenizer)
    val = tensorize_examples(dataset.val, config, bundle.encoder, dataset.tokenizer)
    s1 = config.stage1
    losses: List[float] = []
    optimizer = None

    if not s1.skip:
        projector = bundle.projector
        targets = caption_token_targets(bundle, tensors.caption_ids, projector.num_tokens)
        weights = LossWeights(s1.alpha_contrastive, s1.alpha_mse, s1.weight_temperature)
        optimizer = _adamw(projector.parameters(), s1.lr, config)
        rng = np.random.default_rng(config.seed + 1)
        labels = tensors.labels.numpy()
        plan = batch_plan(len(tensors), s1.batch_size, s1.steps, config.seed + 1)

        projector.train()
        for step, anchors in enumerate(tqdm(plan, desc="stage1", disable=not show_progress)):
            positives, negatives = stage1_indices(labels, anchors, s1.num_negatives, rng)
            batch = _stage1_batch(projector, tensors, targets, anchors, positives, negatives, device)
            terms = stage1_loss_terms(
                batch, weights, weighting=s1.weighting, similarity=s1.similarity, reduction=s1.reduction
            )
            require_finite(terms["total"], f"stage1 loss at step {step}")
            optimizer.zero_grad()
            terms["total"].backward()
            _clip(list(projector.parameters()), config)
            optimizer.step()

            losses.append(float(terms["total"].detach()))
            _log(logger, "stage1", step, {k: float(v.detach()) for k, v in terms.items()})
        projector.eval()

    accuracy = token_centroid_accuracy(bundle.projector, tensors, val)
    path = save_checkpoint(
        checkpoint_path, bundle, config, stage="stage1", step=len(losses), optimizer=optimizer,
        extras={
            "final_loss": losses[-1] if losses else None,
            "centroid_accuracy": accuracy,
            "skipped": s1.skip,
            "class_names": list(dataset.class_names),
        },
    )
    return StageResult(
        stage="stage1", checkpoint=path, bundle=bundle, losses=losses,
        metrics={"centroid_accuracy": accuracy},
    )


# ---------------------------------------------------------------- stage 2


def prepare_stage2(config: RunConfig, loaded: LoadedCheckpoint) -> PartitionReport:
    """Attach fresh adapters to loaded.bundle and apply the trainable/frozen partition."""
    bundle = loaded.bundle
    if bundle.projector is None:
        raise ConfigurationError("stage 2 needs a checkpoint with a trained projector")
    s2 = config.stage2
    if s2.init_from_text:
        adapters = init_adapters_from_text_attention(
            bundle.backbone, s2.insertion_set, bundle.projector.token_dim, config.backbone.adapter_ff_mult
        )
    else:
        adapters = build_adapters(
            bundle.backbone, s2.insertion_set, bundle.projector.token_dim,
            config.backbone.heads, config.backbone.adapter_ff_mult,
        )
    adapters.beta = config.sampler.beta
    bundle.adapters = adapters.to(bundle.device)
    bundle.backbone.eval()
    bundle.text_embedder.eval()
    return trainable_partition(
        bundle.backbone, bundle.adapters, bundle.projector, bundle.text_embedder, s2.train_projector
    )


def train_stage2(
    config: RunConfig,
    dataset: DatasetSplit,
    stage1_checkpoint: Path | str,
    checkpoint_path: Path | str,
    *,
    logger: Optional[RunLogger] = None,
    device: torch.device | str = "cpu",
    show_progress: bool = False,
) -> StageResult:
    """
    Tune gated adapters (and the projector at a lower rate) with the
    denoising loss under null text, null-audio dropout and flip/crop
    augmentation. The backbone's parameter digest is checked unchanged.

    Raises:
        ConfigurationError: the stage-1 checkpoint is incompatible
    """
    loaded = load_checkpoint(stage1_checkpoint, ("backbone", "text_embedder", "projector"), device)
    partition = prepare_stage2(config, loaded)
    bundle = loaded.bundle
    backbone, adapters, projector, schedule = bundle.backbone, bundle.adapters, bundle.projector, bundle.schedule
    backbone_digest = parameter_digest(backbone)

    s2 = config.stage2
    groups = [{"params": list(adapters.parameters()), "lr": s2.adapter_lr}]
    if s2.train_projector:
        groups.append({"params": list(projector.parameters()), "lr": s2.projector_lr})
    trainable = [p for g in groups for p in g["params"]]
    optimizer = _adamw(groups, s2.adapter_lr, config)

    tensors = tensorize_examples(dataset.train, config, bundle.encoder, dataset.tokenizer)
    rng = np.random.default_rng(config.seed + 2)
    generator = torch.Generator().manual_seed(config.seed + 2)
    plan = batch_plan(len(tensors), s2.batch_size, s2.steps, config.seed + 2)
    with torch.no_grad():
        null_text = bundle.text_embedder.null_tokens(1, bundle.device)

    adapters.train()
    projector.train(s2.train_projector)
    losses: List[float] = []
    for step, idx in enumerate(tqdm(plan, desc="stage2", disable=not show_progress)):
        index = torch.from_numpy(idx)
        z0 = augment_batch(tensors.images[index], rng).to(device)
        emb, _ = null_conditioning_dropout(tensors.audio_embeddings[index], s2.null_audio_prob, generator)
        c_audio = projector(emb.to(device))
        t = _sample_timesteps(z0.shape[0], schedule.num_timesteps, generator).to(device)
        noise = torch.randn(z0.shape, generator=generator).to(device)

        loss = ddpm_loss(
            lambda z, tt, ca: backbone(z, tt, null_text, c_audio=ca, adapters=adapters),
            z0, t, c_audio, noise, schedule,
        )
        require_finite(loss, f"stage2 loss at step {step}")
        optimizer.zero_grad()
        loss.backward()
        _clip(trainable, config)
        optimizer.step()

        losses.append(float(loss.detach()))
        gammas = adapters.gammas()
        _log(logger, "stage2", step, {
            "ddpm": losses[-1],
            "mean_abs_gamma": float(np.mean(np.abs(list(gammas.values())))),
        })

    adapters.eval()
    projector.eval()
    if parameter_digest(backbone) != backbone_digest:
        raise ConfigurationError("backbone parameters changed during adapter tuning")

    path = save_checkpoint(
        checkpoint_path, bundle, config, stage="stage2", step=len(plan), optimizer=optimizer,
        partition=partition,
        extras={
            "final_loss": losses[-1] if losses else None,
            "backbone_digest": backbone_digest,
            "class_names": list(dataset.class_names),
        },
    )
    return StageResult(stage="stage2", checkpoint=path, bundle=bundle, losses=losses, partition=partition)


__all__ = [
    "StageResult",
    "train_backbone",
    "stage1_indices",
    "caption_token_targets",
    "token_centroid_accuracy",
    "train_stage1",
    "prepare_stage2",
    "train_stage2",
]
