"""
Generation, editing and evaluation on top of trained checkpoints.

These functions are what the CLI subcommands call; they take a loaded
checkpoint and plain tensors and return arrays and reports, leaving file
layout to the caller except for the manifest helper.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from src.audio.projector import null_audio_tokens
from src.config.run_config import RunConfig
from src.data.captions import CaptionTokenizer
from src.data.preprocessing import compute_logmel
from src.data.storage import read_png, read_wav
from src.data.synth import DatasetSplit, dataset_checksum
from src.diffusion.hooks import AdapterNormHook, FeatureHooks
from src.diffusion.latent import IdentityCodec, LatentCodec, pixels_to_tensor, tensor_to_pixels
from src.editing.controls import interpolate_audio, scale_volume
from src.editing.pnp import DiffusionTrajectory, InjectionConfig, ddim_invert, pnp_edit
from src.metrics.embedder import EvalEmbedder, embedder_header, load_eval_embedder, train_eval_embedder
from src.metrics.fid import fid
from src.metrics.scores import semantic_scores
from src.pipeline.checkpoint import LoadedCheckpoint
from src.pipeline.models import ExampleTensors, ModelBundle, tensorize_examples
from src.sampling.guidance import Conditioning, GuidanceConfig, ddim_sample
from src.schemas.base import RunMetadata, Status
from src.schemas.reports import MetricsReport, PerSampleRecord, RunManifest
from src.utils.validation_utils import ArgumentError, ArtifactNotFoundError, ConfigurationError

CODEC: LatentCodec = IdentityCodec()


# ------------------------------------------------------------- conditioning


def checkpoint_tokenizer(loaded: LoadedCheckpoint) -> CaptionTokenizer:
    names = loaded.extras.get("class_names")
    if not names:
        raise ConfigurationError("checkpoint does not record the caption vocabulary")
    return CaptionTokenizer(names)


def caption_ids(caption: str, tokenizer: CaptionTokenizer, length: int) -> torch.Tensor:
    return torch.tensor([tokenizer.pad(tokenizer.encode(caption), length)], dtype=torch.long)


@torch.no_grad()
def build_conditioning(
    bundle: ModelBundle,
    audio_embeddings: Optional[torch.Tensor],
    caption: Optional[torch.Tensor] = None,
) -> Conditioning:
    """
    Conditional and null token pairs for a batch of audio embeddings.

    Without a caption the conditional text is the null-text sequence.
    """
    device = bundle.device
    null_text = bundle.text_embedder.null_tokens(1, device)
    c_text = bundle.text_embedder(caption.to(device)) if caption is not None else null_text
    if audio_embeddings is None or bundle.projector is None:
        return Conditioning(c_text=c_text, null_text=null_text)
    return Conditioning(
        c_text=c_text,
        null_text=null_text,
        c_audio=bundle.projector(audio_embeddings.to(device)),
        null_audio=null_audio_tokens(bundle.projector, 1),
    )


@torch.no_grad()
def embed_audio_file(
    path: Path | str,
    config: RunConfig,
    bundle: ModelBundle,
    gain: Optional[float] = None,
) -> torch.Tensor:
    """WAV file -> frozen AudioEmbedding [D_a], with optional volume scaling first."""
    clip = read_wav(Path(path))
    if gain is not None:
        clip = scale_volume(clip, gain)
    mel = compute_logmel(clip, config.audio.hop, config.audio.window, config.audio.n_mels)
    return bundle.encoder(mel)


# ----------------------------------------------------------------- generate


@dataclass
class GenerationOutput:
    images: Dict[float, np.ndarray]
    norm_rows: Dict[float, List[Tuple[int, int, float]]] = field(default_factory=dict)


def generate_images(
    bundle: ModelBundle,
    audio_embeddings: torch.Tensor,
    *,
    cfg: GuidanceConfig,
    image_size: int,
    betas: Optional[Sequence[float]] = None,
    caption: Optional[torch.Tensor] = None,
    seed: int = 0,
    site_beta: Optional[Mapping[int, float]] = None,
    log_norms: bool = False,
) -> GenerationOutput:
    """
    Sample one image per audio embedding for every beta in the sweep.

    All betas share z_T, so the sweep isolates the audio strength.
    """
    if bundle.adapters is None:
        raise ConfigurationError("generation needs a checkpoint with trained adapters")
    if audio_embeddings.dim() == 1:
        audio_embeddings = audio_embeddings.unsqueeze(0)
    cond = build_conditioning(bundle, audio_embeddings, caption)
    shape = (audio_embeddings.shape[0], 3, image_size, image_size)

    previous = dict(bundle.adapters.site_beta)
    if site_beta:
        bundle.adapters.site_beta.update({int(k): float(v) for k, v in site_beta.items()})
    output = GenerationOutput(images={})
    try:
        for beta in betas or [cfg.beta]:
            hooks = AdapterNormHook() if log_norms else FeatureHooks()
            result = ddim_sample(
                bundle.backbone, bundle.adapters, cond, replace(cfg, beta=float(beta)),
                bundle.schedule, seed=seed, shape=shape, hooks=hooks,
            )
            output.images[float(beta)] = tensor_to_pixels(CODEC.decode(result.z0))
            if log_norms:
                output.norm_rows[float(beta)] = list(hooks.rows)
    finally:
        bundle.adapters.site_beta = previous
    return output


# --------------------------------------------------------------------- edit


@dataclass
class EditOutput:
    edited: np.ndarray
    reconstruction: Optional[np.ndarray]
    trajectory: DiffusionTrajectory


def edit_image(
    bundle: ModelBundle,
    image: np.ndarray,
    audio_embedding: torch.Tensor,
    *,
    cfg: GuidanceConfig,
    injection: InjectionConfig,
    caption: Optional[torch.Tensor] = None,
    record_during_inversion: bool = False,
) -> EditOutput:
    """
    Invert an H x W x 3 source image under null conditioning, then regenerate
    it with the given audio while injecting the recorded source features.
    """
    if bundle.adapters is None:
        raise ConfigurationError("editing needs a checkpoint with trained adapters")
    device = bundle.device
    z0 = CODEC.encode(pixels_to_tensor(image).to(device))
    cond = build_conditioning(bundle, audio_embedding.reshape(1, -1), caption)

    trajectory = ddim_invert(
        z0, bundle.backbone, bundle.adapters, cond.null(), bundle.schedule,
        steps=cfg.steps, injection=injection, record_during_inversion=record_during_inversion,
    )
    result = pnp_edit(trajectory, bundle.backbone, bundle.adapters, cond, injection, cfg, bundle.schedule)
    reconstruction = trajectory.reconstruction
    return EditOutput(
        edited=tensor_to_pixels(CODEC.decode(result.z0))[0],
        reconstruction=tensor_to_pixels(CODEC.decode(reconstruction))[0] if reconstruction is not None else None,
        trajectory=trajectory,
    )


def mixed_audio_embedding(
    first: torch.Tensor,
    second: Optional[torch.Tensor],
    lam: Optional[float],
) -> torch.Tensor:
    if second is None:
        if lam is not None:
            raise ArgumentError("--lam needs a second audio file")
        return first
    return interpolate_audio(first, second, 0.5 if lam is None else lam)


# ----------------------------------------------------------------- evaluate


def eval_embedder_for(
    config: RunConfig,
    dataset: DatasetSplit,
    bundle: ModelBundle,
    cache_path: Optional[Path] = None,
    show_progress: bool = False,
) -> EvalEmbedder:
    """
    The frozen evaluation embedder: the checkpoint's own when present, a
    cached one trained on the same dataset, or a fresh one trained on the
    held-out split (and cached).
    """
    if bundle.eval_embedder is not None:
        return bundle.eval_embedder
    checksum = dataset_checksum(dataset)
    if cache_path is not None and cache_path.exists():
        archive = torch.load(cache_path, map_location="cpu", weights_only=False)
        if (
            archive.get("dataset_checksum") == checksum
            and archive.get("seed") == config.seed
            and archive.get("evaluation") == config.evaluation.model_dump()
        ):
            return load_eval_embedder(archive["state"], archive["header"])

    if len(dataset.heldout) < 2:
        raise ConfigurationError("the dataset has no held-out split to train the evaluation embedder on")
    heldout = tensorize_examples(dataset.heldout, config, bundle.encoder, dataset.tokenizer)
    ev = config.evaluation
    embedder = train_eval_embedder(
        heldout.images,
        heldout.audio_embeddings,
        heldout.caption_ids,
        heldout.labels,
        dataset.class_names,
        dataset.tokenizer,
        steps=ev.embedder_steps,
        dim=ev.embedder_dim,
        lr=ev.embedder_lr,
        batch_size=ev.embedder_batch_size,
        temperature=ev.temperature,
        seed=config.seed,
        show_progress=show_progress,
    )
    if cache_path is not None:
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "header": embedder_header(embedder),
                "state": embedder.state_dict(),
                "dataset_checksum": checksum,
                "seed": config.seed,
                "evaluation": ev.model_dump(),
            },
            cache_path,
        )
    return embedder


def compute_metrics(
    embedder: EvalEmbedder,
    generated: torch.Tensor,
    cond_audio: torch.Tensor,
    ground_truth: torch.Tensor,
    labels: Sequence[int],
    reference_images: torch.Tensor,
    reference_audio: torch.Tensor,
    sample_ids: Optional[Sequence[str]] = None,
    fid_eps: float = 1e-6,
) -> MetricsReport:
    """
    AIS / IIS / AIC against the reference sets plus FID between embedder
    features of the generated and reference images. Image tensors are
    [N, 3, H, W] in [-1, 1]; audio tensors are frozen audio embeddings.
    """
    gen_features = embedder.image_features(generated)
    ref_features = embedder.image_features(reference_images)
    ais_value, iis_value, aic_value, records = semantic_scores(
        gen_features,
        embedder.audio_features(cond_audio),
        embedder.audio_features(reference_audio),
        embedder.image_features(ground_truth),
        ref_features,
        list(labels),
        embedder.prototype_features(),
        sample_ids,
    )
    return MetricsReport(
        ais=ais_value,
        aic=aic_value,
        iis=iis_value,
        fid=fid(ref_features, gen_features, fid_eps),
        num_samples=len(records),
        num_audio_references=int(reference_audio.shape[0]),
        num_image_references=int(reference_images.shape[0]),
        embedder_checksum=embedder.checksum,
        per_sample=[PerSampleRecord(**r) for r in records],
    )


def generate_for_evaluation(
    bundle: ModelBundle,
    samples: ExampleTensors,
    cfg: GuidanceConfig,
    image_size: int,
    seed: int,
    batch_size: int = 16,
    show_progress: bool = False,
) -> torch.Tensor:
    """One generation per sample audio under null text; batch b uses seed + b."""
    if bundle.adapters is None:
        raise ConfigurationError("evaluation needs a checkpoint with trained adapters")
    chunks = []
    starts = range(0, len(samples), batch_size)
    for b, start in enumerate(tqdm(starts, desc="generate", disable=not show_progress)):
        emb = samples.audio_embeddings[start:start + batch_size]
        cond = build_conditioning(bundle, emb)
        result = ddim_sample(
            bundle.backbone, bundle.adapters, cond, cfg, bundle.schedule,
            seed=seed + b, shape=(emb.shape[0], 3, image_size, image_size),
        )
        chunks.append(CODEC.decode(result.z0).cpu())
    return torch.cat(chunks)


def load_generated_images(directory: Path, example_ids: Sequence[str], size: int) -> torch.Tensor:
    """Read <id>.png for every example id from directory as [N, 3, H, W]."""
    if not directory.is_dir():
        raise ArtifactNotFoundError(f"Generated image directory not found: {directory}")
    return torch.cat([pixels_to_tensor(read_png(directory / f"{eid}.png", size=size).pixels) for eid in example_ids])


def evaluate_checkpoint(
    loaded: LoadedCheckpoint,
    dataset: DatasetSplit,
    config: RunConfig,
    *,
    cfg: Optional[GuidanceConfig] = None,
    embedder: Optional[EvalEmbedder] = None,
    generated: Optional[torch.Tensor] = None,
    embedder_cache: Optional[Path] = None,
    show_progress: bool = False,
) -> Tuple[MetricsReport, torch.Tensor, ExampleTensors]:
    """
    Generate (unless images are supplied) for the first max_samples val
    examples and score them against the whole val split.

    Returns:
        (report, generated images, evaluated samples)
    """
    bundle = loaded.bundle
    cfg = cfg or GuidanceConfig.from_config(config.sampler)
    embedder = embedder or eval_embedder_for(config, dataset, bundle, embedder_cache, show_progress)
    references = tensorize_examples(dataset.val, config, bundle.encoder, dataset.tokenizer)
    samples = references.subset(config.evaluation.max_samples)
    if generated is None:
        generated = generate_for_evaluation(
            bundle, samples, cfg, config.data.image_size, config.seed, show_progress=show_progress
        )
    if generated.shape[0] != len(samples):
        raise ArgumentError(f"{generated.shape[0]} generated images for {len(samples)} samples")

    report = compute_metrics(
        embedder,
        generated,
        samples.audio_embeddings,
        samples.images,
        samples.labels.tolist(),
        references.images,
        references.audio_embeddings,
        samples.example_ids,
        config.evaluation.fid_eps,
    )
    return report, generated, samples


# ---------------------------------------------------------------- manifests


def write_manifest(
    output_dir: Path,
    run_id: str,
    command: str,
    config: RunConfig,
    settings: Mapping[str, Any],
    outputs: Sequence[Path | str],
    status: Status = Status.COMPLETED,
) -> Path:
    """Write manifest.json with everything needed to re-run the command."""
    manifest = RunManifest(
        metadata=RunMetadata(run_id=run_id, command=command, seed=config.seed),
        status=status,
        settings={k: (str(v) if isinstance(v, Path) else v) for k, v in settings.items()},
        config=config.model_dump(mode="json"),
        outputs=[str(p) for p in outputs],
    )
    output_dir.mkdir(parents=True, exist_ok=True)
    path = output_dir / "manifest.json"
    path.write_text(json.dumps(manifest.model_dump(mode="json"), indent=2), encoding="utf-8")
    return path


__all__ = [
    "checkpoint_tokenizer",
    "caption_ids",
    "build_conditioning",
    "embed_audio_file",
    "GenerationOutput",
    "generate_images",
    "EditOutput",
    "edit_image",
    "mixed_audio_embedding",
    "eval_embedder_for",
    "compute_metrics",
    "generate_for_evaluation",
    "load_generated_images",
    "evaluate_checkpoint",
    "write_manifest",
]
