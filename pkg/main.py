"""Entry point for the sonic-adapters pipeline: data, training, generation, editing, evaluation and ablations."""

from __future__ import annotations

import argparse
import json
import sys
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import torch

from config.settings import INJECTION_PRESETS, INSERTION_SETS, get_device, get_output_root
from src.config.run_config import RunConfig, dump_default_config, load_run_config, save_run_config
from src.data.storage import load_dataset, read_png, save_dataset, write_png
from src.data.synth import dataset_checksum, generate_dataset
from src.diffusion.latent import tensor_to_pixels
from src.editing.pnp import InjectionConfig
from src.logging.run_logger import RunLogger, write_csv
from src.pipeline.ablation import ABLATIONS, run_ablations
from src.pipeline.checkpoint import load_checkpoint
from src.pipeline.commands import (
    caption_ids,
    checkpoint_tokenizer,
    edit_image,
    embed_audio_file,
    evaluate_checkpoint,
    generate_images,
    load_generated_images,
    mixed_audio_embedding,
    write_manifest,
)
from src.pipeline.models import tensorize_examples
from src.pipeline.training import train_backbone, train_stage1, train_stage2
from src.sampling.guidance import FORMULATIONS, GuidanceConfig
from src.schemas.base import RunMetadata, Status
from src.utils.validation_utils import (
    ArgumentError,
    ArtifactNotFoundError,
    ConfigurationError,
    NumericFailureError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3

ADAPTER_GROUPS = ("backbone", "text_embedder", "adapters", "projector")


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors exit with EXIT_USAGE."""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


@dataclass
class RunContext:
    run_id: str
    command: str
    output_root: Path
    run_dir: Path
    config: RunConfig
    config_given: bool
    logger: RunLogger
    device: str
    show_progress: bool

    @property
    def checkpoint_dir(self) -> Path:
        return self.output_root / "checkpoints"

    @property
    def data_dir(self) -> Path:
        return self.output_root / "data"


def _path_or(value: Optional[str], default: Path) -> Path:
    return Path(value) if value else default


def parse_site_betas(values: Optional[Sequence[str]]) -> Dict[int, float]:
    """Parse repeated SITE=VALUE strings."""
    out: Dict[int, float] = {}
    for item in values or []:
        site, sep, value = item.partition("=")
        if not sep:
            raise ArgumentError(f"--beta-site expects SITE=VALUE, got '{item}'")
        try:
            out[int(site)] = float(value)
        except ValueError as e:
            raise ArgumentError(f"--beta-site expects SITE=VALUE, got '{item}'") from e
    return out


def _guidance(config: RunConfig, args: argparse.Namespace) -> GuidanceConfig:
    return GuidanceConfig.from_config(
        config.sampler,
        scale=getattr(args, "scale", None),
        steps=getattr(args, "steps", None),
        formulation=getattr(args, "formulation", None),
    )


def _load_adapter_checkpoint(ctx: RunContext, path: Optional[str]):
    loaded = load_checkpoint(
        _path_or(path, ctx.checkpoint_dir / "adapters.pt"), ADAPTER_GROUPS, ctx.device
    )
    config = ctx.config if ctx.config_given else loaded.config
    return loaded, config


# ------------------------------------------------------------------ commands


def cmd_synth_data(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    overrides = {
        k: v
        for k, v in {"seed": args.seed, "n_classes": args.n_classes, "n_per_class": args.n_per_class}.items()
        if v is not None
    }
    config = ctx.config.override(data=overrides) if overrides else ctx.config
    d = config.data
    split = generate_dataset(
        d.seed, d.n_classes, d.n_per_class, d.val_fraction,
        sample_rate=d.sample_rate, duration=d.duration, image_size=d.image_size,
        heldout_per_class=d.heldout_per_class,
    )
    out_dir = _path_or(args.out, ctx.data_dir)
    manifest = save_dataset(split, out_dir)
    print(f"✅ Dataset written to {out_dir}")
    print(f"   train={len(split.train)} val={len(split.val)} heldout={len(split.heldout)}")
    return config, [manifest], {"checksum": dataset_checksum(split), "classes": list(split.class_names)}


def cmd_train_backbone(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    config = ctx.config.override(stage0={"steps": args.steps}) if args.steps else ctx.config
    dataset = load_dataset(_path_or(args.data, ctx.data_dir))
    result = train_backbone(
        config, dataset, _path_or(args.out, ctx.checkpoint_dir / "backbone.pt"),
        logger=ctx.logger, device=ctx.device, show_progress=ctx.show_progress,
    )
    print(f"✅ Backbone checkpoint: {result.checkpoint} (final loss {result.final_loss:.4f})")
    return config, [result.checkpoint, ctx.logger.curve_path("stage0")], {"final_loss": result.final_loss}


def cmd_train_projector(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    overrides: Dict[str, Any] = {}
    if args.steps:
        overrides["steps"] = args.steps
    if args.skip:
        overrides["skip"] = True
    config = ctx.config.override(stage1=overrides) if overrides else ctx.config
    dataset = load_dataset(_path_or(args.data, ctx.data_dir))
    result = train_stage1(
        config, dataset,
        _path_or(args.backbone, ctx.checkpoint_dir / "backbone.pt"),
        _path_or(args.out, ctx.checkpoint_dir / "projector.pt"),
        logger=ctx.logger, device=ctx.device, show_progress=ctx.show_progress,
    )
    accuracy = result.metrics["centroid_accuracy"]
    print(f"✅ Projector checkpoint: {result.checkpoint}")
    print(f"   token centroid accuracy (val): {accuracy:.3f}")
    return config, [result.checkpoint], {"final_loss": result.final_loss, "centroid_accuracy": accuracy}


def cmd_train_adapters(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    overrides: Dict[str, Any] = {}
    if args.steps:
        overrides["steps"] = args.steps
    if args.insertion_set:
        overrides["insertion_set"] = args.insertion_set
    if args.freeze_projector:
        overrides["train_projector"] = False
    config = ctx.config.override(stage2=overrides) if overrides else ctx.config
    dataset = load_dataset(_path_or(args.data, ctx.data_dir))
    result = train_stage2(
        config, dataset,
        _path_or(args.projector, ctx.checkpoint_dir / "projector.pt"),
        _path_or(args.out, ctx.checkpoint_dir / "adapters.pt"),
        logger=ctx.logger, device=ctx.device, show_progress=ctx.show_progress,
    )
    partition = result.partition
    print(f"✅ Adapter checkpoint: {result.checkpoint}")
    print(f"   trainable parameters: {partition.trainable:,} of {partition.total:,} ({partition.trainable_fraction:.1%})")
    gammas = result.bundle.adapters.gammas()
    return config, [result.checkpoint], {
        "final_loss": result.final_loss,
        "partition": partition.model_dump(),
        "gammas": gammas,
    }


def cmd_generate(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    loaded, config = _load_adapter_checkpoint(ctx, args.checkpoint)
    bundle = loaded.bundle
    if args.audio:
        names = [Path(a).stem for a in args.audio]
        embeddings = torch.stack([embed_audio_file(a, config, bundle, args.gain) for a in args.audio])
    else:
        dataset = load_dataset(_path_or(args.data, ctx.data_dir))
        samples = tensorize_examples(dataset.val[: args.val], config, bundle.encoder, dataset.tokenizer)
        names, embeddings = samples.example_ids, samples.audio_embeddings
    caption = None
    if args.caption:
        caption = caption_ids(args.caption, checkpoint_tokenizer(loaded), bundle.text_embedder.num_tokens)

    result = generate_images(
        bundle, embeddings,
        cfg=_guidance(config, args),
        image_size=config.data.image_size,
        betas=args.beta,
        caption=caption,
        seed=args.seed if args.seed is not None else config.seed,
        site_beta=parse_site_betas(args.beta_site),
        log_norms=args.log_norms,
    )
    outputs: List[Path] = []
    for beta, images in result.images.items():
        for name, pixels in zip(names, images):
            path = ctx.run_dir / f"{name}_beta{beta:g}.png"
            write_png(path, pixels)
            outputs.append(path)
    for beta, rows in result.norm_rows.items():
        outputs.append(write_csv(ctx.run_dir / f"adapter_norms_beta{beta:g}.csv", ["site", "timestep", "norm"], rows))
        ctx.logger.append_norm_rows(rows, name=f"{ctx.run_id}_norms_beta{beta:g}")
    print(f"✅ Wrote {len(outputs)} files to {ctx.run_dir}")
    return config, outputs, {"images": len(names), "betas": list(result.images)}


def cmd_edit(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    loaded, config = _load_adapter_checkpoint(ctx, args.checkpoint)
    bundle = loaded.bundle
    source = read_png(Path(args.image), size=config.data.image_size)
    first = embed_audio_file(args.audio, config, bundle, args.gain)
    second = embed_audio_file(args.audio2, config, bundle, args.gain) if args.audio2 else None
    embedding = mixed_audio_embedding(first, second, args.lam)
    caption = None
    if args.caption:
        caption = caption_ids(args.caption, checkpoint_tokenizer(loaded), bundle.text_embedder.num_tokens)

    editing = config.editing
    injection = InjectionConfig.from_preset(
        args.preset or editing.preset,
        args.tau if args.tau is not None else editing.injection_fraction,
    )
    result = edit_image(
        bundle, source.pixels, embedding,
        cfg=_guidance(config, args),
        injection=injection,
        caption=caption,
        record_during_inversion=args.record_during_inversion or editing.record_during_inversion,
    )
    outputs = [ctx.run_dir / "edited.png"]
    write_png(outputs[0], result.edited)
    if result.reconstruction is not None:
        outputs.append(ctx.run_dir / "reconstruction.png")
        write_png(outputs[-1], result.reconstruction)
    print(f"✅ Edited image: {outputs[0]}")
    return config, outputs, {
        "injection": {
            "self_attention_sites": list(injection.self_attention_sites),
            "residual_sites": list(injection.residual_sites),
            "injection_fraction": injection.injection_fraction,
        },
        "recorded_timesteps": len(result.trajectory.recorded_timesteps),
    }


def cmd_evaluate(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    loaded, config = _load_adapter_checkpoint(ctx, args.checkpoint)
    if args.max_samples:
        config = config.override(evaluation={"max_samples": args.max_samples})
    dataset = load_dataset(_path_or(args.data, ctx.data_dir))

    generated = None
    if args.generated:
        ids = [ex.example_id for ex in dataset.val][: config.evaluation.max_samples]
        generated = load_generated_images(Path(args.generated), ids, config.data.image_size)
    report, images, samples = evaluate_checkpoint(
        loaded, dataset, config,
        cfg=_guidance(config, args),
        generated=generated,
        embedder_cache=ctx.checkpoint_dir / "eval_embedder.pt",
        show_progress=ctx.show_progress,
    )
    report = report.model_copy(update={"metadata": RunMetadata(run_id=ctx.run_id, command="evaluate", seed=config.seed)})
    report_path = ctx.run_dir / "metrics.json"
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(json.dumps(report.model_dump(mode="json"), indent=2), encoding="utf-8")
    records_path = write_csv(
        ctx.run_dir / "per_sample.csv",
        ["sample_id", "true_class", "predicted_class", "ais_count", "iis_count"],
        [[r.sample_id, r.true_class, r.predicted_class, r.ais_count, r.iis_count] for r in report.per_sample],
    )
    outputs = [report_path, records_path]
    if generated is None and args.save_images:
        for sample_id, pixels in zip(samples.example_ids, tensor_to_pixels(images)):
            path = ctx.run_dir / "images" / f"{sample_id}.png"
            write_png(path, pixels)
            outputs.append(path)
    print(f"✅ AIS={report.ais:.4f} AIC={report.aic:.4f} IIS={report.iis:.4f} FID={report.fid:.3f}")
    return config, outputs, report.model_dump(exclude={"per_sample", "metadata"})


def cmd_ablate(args: argparse.Namespace, ctx: RunContext) -> Tuple[RunConfig, List[Path], Dict[str, Any]]:
    dataset = load_dataset(_path_or(args.data, ctx.data_dir))
    report = run_ablations(
        ctx.config, dataset, ctx.run_dir,
        run_id=ctx.run_id,
        names=args.only,
        backbone_checkpoint=Path(args.backbone) if args.backbone else None,
        logger=ctx.logger,
        device=ctx.device,
        show_progress=ctx.show_progress,
    )
    failed = [row.name for row in report.rows if row.status == Status.FAILED]
    print(f"✅ Ablation table: {ctx.run_dir / 'ablation.md'}")
    if failed:
        print(f"   ⚠️  failed rows: {', '.join(failed)}")
    return ctx.config, [ctx.run_dir / "ablation.json", ctx.run_dir / "ablation.md"], {
        "rows": [row.name for row in report.rows],
        "failed": failed,
    }


COMMANDS: Dict[str, Callable[[argparse.Namespace, RunContext], Tuple[RunConfig, List[Path], Dict[str, Any]]]] = {
    "synth-data": cmd_synth_data,
    "train-backbone": cmd_train_backbone,
    "train-projector": cmd_train_projector,
    "train-adapters": cmd_train_adapters,
    "generate": cmd_generate,
    "edit": cmd_edit,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


# ------------------------------------------------------------------- parsing


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = CliParser(description="sonic-adapters: audio-conditioned image generation and editing")
    parser.add_argument("--config", "-c", help="Run configuration YAML (defaults embedded)")
    parser.add_argument("--output-root", help="Artifact root (default: $SONIC_OUTPUT_ROOT or ./runs)")
    parser.add_argument("--device", help="Torch device (default: $SONIC_DEVICE or cpu)")
    parser.add_argument("--print-config", action="store_true", help="Print the embedded default config and exit")
    parser.add_argument("--progress", action="store_true", help="Show progress bars")
    sub = parser.add_subparsers(dest="command")

    synth_cmd = sub.add_parser("synth-data", help="Generate the synthetic paired dataset")
    synth_cmd.add_argument("--out", help="Dataset directory (default: <root>/data)")
    synth_cmd.add_argument("--seed", type=int)
    synth_cmd.add_argument("--n-classes", type=int)
    synth_cmd.add_argument("--n-per-class", type=int)

    for name, help_text in (
        ("train-backbone", "Pretrain the text-conditioned toy backbone"),
        ("train-projector", "Stage 1: align the audio projector with caption tokens"),
        ("train-adapters", "Stage 2: tune gated audio adapters on the frozen backbone"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--data", help="Dataset directory (default: <root>/data)")
        cmd.add_argument("--steps", type=int, help="Override the stage's step count")
        cmd.add_argument("--out", help="Checkpoint path")
        if name == "train-projector":
            cmd.add_argument("--backbone", help="Backbone checkpoint (default: <root>/checkpoints/backbone.pt)")
            cmd.add_argument("--skip", action="store_true", help="Keep the projector randomly initialized")
        if name == "train-adapters":
            cmd.add_argument("--projector", help="Stage-1 checkpoint (default: <root>/checkpoints/projector.pt)")
            cmd.add_argument("--insertion-set", choices=list(INSERTION_SETS))
            cmd.add_argument("--freeze-projector", action="store_true")

    def add_sampling(cmd: argparse.ArgumentParser) -> None:
        cmd.add_argument("--checkpoint", help="Adapter checkpoint (default: <root>/checkpoints/adapters.pt)")
        cmd.add_argument("--scale", type=float, help="Classifier-free guidance scale")
        cmd.add_argument("--steps", type=int, help="DDIM steps")
        cmd.add_argument("--formulation", choices=list(FORMULATIONS))
        cmd.add_argument("--caption", help="Optional caption, e.g. 'a photo of forest'")

    gen_cmd = sub.add_parser("generate", help="Generate images from audio")
    add_sampling(gen_cmd)
    gen_cmd.add_argument("--audio", action="append", help="WAV file (repeatable)")
    gen_cmd.add_argument("--data", help="Dataset directory used with --val")
    gen_cmd.add_argument("--val", type=int, default=4, help="Use the first N val audios when --audio is absent")
    gen_cmd.add_argument("--beta", type=float, nargs="+", help="Audio strength sweep")
    gen_cmd.add_argument("--beta-site", action="append", metavar="SITE=VALUE", help="Per-site beta override")
    gen_cmd.add_argument("--gain", type=float, help="Volume gain applied before featurization")
    gen_cmd.add_argument("--seed", type=int)
    gen_cmd.add_argument("--log-norms", action="store_true", help="Write adapter-norm CSVs")

    edit_cmd = sub.add_parser("edit", help="Edit an image with audio via inversion + feature injection")
    add_sampling(edit_cmd)
    edit_cmd.add_argument("--image", required=True, help="Source PNG")
    edit_cmd.add_argument("--audio", required=True, help="WAV file")
    edit_cmd.add_argument("--audio2", help="Second WAV file for interpolation")
    edit_cmd.add_argument("--lam", type=float, help="Interpolation weight toward --audio2")
    edit_cmd.add_argument("--gain", type=float, help="Volume gain applied before featurization")
    edit_cmd.add_argument("--preset", choices=list(INJECTION_PRESETS))
    edit_cmd.add_argument("--tau", type=float, help="Injection step fraction")
    edit_cmd.add_argument("--record-during-inversion", action="store_true")

    eval_cmd = sub.add_parser("evaluate", help="Compute AIS / IIS / AIC / FID on the val split")
    add_sampling(eval_cmd)
    eval_cmd.add_argument("--data", help="Dataset directory (default: <root>/data)")
    eval_cmd.add_argument("--max-samples", type=int)
    eval_cmd.add_argument("--generated", help="Directory of pre-generated <example_id>.png images")
    eval_cmd.add_argument("--save-images", action="store_true")

    ablate_cmd = sub.add_parser("ablate", help="Run the ablation configurations and compare them")
    ablate_cmd.add_argument("--data", help="Dataset directory (default: <root>/data)")
    ablate_cmd.add_argument("--only", action="append", choices=list(ABLATIONS))
    ablate_cmd.add_argument("--backbone", help="Reuse a backbone checkpoint instead of pretraining one")

    args = parser.parse_args(argv)
    if not args.print_config and not args.command:
        parser.error("a subcommand is required")
    return args


# ---------------------------------------------------------------------- main


def exit_code_for(error: BaseException) -> int:
    if isinstance(error, NumericFailureError):
        return EXIT_NUMERIC
    if isinstance(error, (ArtifactNotFoundError, OSError)):
        return EXIT_IO
    return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> None:
    args = parse_args(argv)
    if args.print_config:
        print(dump_default_config(), end="")
        return

    try:
        config = load_run_config(args.config)
    except (ArtifactNotFoundError, ConfigurationError) as e:
        print(f"\n❌ Config Error: {e}")
        raise SystemExit(exit_code_for(e))

    output_root = get_output_root(args.output_root)
    run_id = f"{args.command}-{uuid.uuid4().hex[:8]}"
    ctx = RunContext(
        run_id=run_id,
        command=args.command,
        output_root=output_root,
        run_dir=output_root / args.command / run_id,
        config=config,
        config_given=args.config is not None,
        logger=RunLogger(output_root),
        device=args.device or get_device(),
        show_progress=args.progress,
    )
    settings = {k: v for k, v in vars(args).items() if k not in ("print_config",)}
    ctx.logger.log_event(run_id=run_id, command=args.command, event="start", payload=settings)
    start = time.time()

    try:
        used_config, outputs, payload = COMMANDS[args.command](args, ctx)
    except (ArgumentError, ConfigurationError, KeyError, ArtifactNotFoundError, OSError, NumericFailureError) as e:
        code = exit_code_for(e)
        ctx.logger.log_event(
            run_id=run_id, command=args.command, event="failure", status="failure",
            duration_ms=int((time.time() - start) * 1000), payload={"exit_code": code}, error_message=str(e),
        )
        write_manifest(ctx.run_dir, run_id, args.command, config, settings, [], Status.FAILED)
        print(f"\n❌ {type(e).__name__}: {e}")
        raise SystemExit(code)

    save_run_config(used_config, ctx.run_dir / "config.yaml")
    manifest = write_manifest(ctx.run_dir, run_id, args.command, used_config, settings, outputs)
    ctx.logger.log_event(
        run_id=run_id, command=args.command, event="finish",
        duration_ms=int((time.time() - start) * 1000), payload=payload,
    )
    print(f"   manifest: {manifest}")


if __name__ == "__main__":
    main()
