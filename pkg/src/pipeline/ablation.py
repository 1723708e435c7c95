"""
Ablation runner.

Every named configuration is a set of per-section overrides on the base
RunConfig. All rows share one pretrained backbone and one evaluation
embedder; rows whose stage-1 settings coincide share the stage-1
checkpoint. A failing row is reported as failed instead of aborting the
table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import torch

from src.config.run_config import RunConfig
from src.data.synth import DatasetSplit
from src.logging.run_logger import RunLogger
from src.pipeline.checkpoint import load_checkpoint
from src.pipeline.commands import eval_embedder_for, evaluate_checkpoint
from src.pipeline.training import train_backbone, train_stage1, train_stage2
from src.schemas.base import RunMetadata, Status
from src.schemas.reports import AblationReport, AblationRow
from src.utils.report_renderer import render_report
from src.utils.validation_utils import (
    ArgumentError,
    ArtifactNotFoundError,
    ConfigurationError,
    NumericFailureError,
)

# torch reports shape, device and memory failures as RuntimeError
ROW_ERRORS = (ArgumentError, ArtifactNotFoundError, ConfigurationError, NumericFailureError, OSError, RuntimeError)


@dataclass(frozen=True)
class AblationSpec:
    """Immutable description of one ablation configuration."""

    name: str
    description: str
    overrides: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)


ABLATIONS: Dict[str, AblationSpec] = {
    spec.name: spec
    for spec in (
        AblationSpec("full", "both stage-1 terms, projector trainable in stage 2, middle + decoder adapters"),
        AblationSpec("no_contrastive", "stage 1 without the InfoNCE term", {"stage1": {"alpha_contrastive": 0.0}}),
        AblationSpec("no_mse", "stage 1 without the MSE term", {"stage1": {"alpha_mse": 0.0}}),
        AblationSpec("no_stage1", "randomly initialized projector, stage 1 skipped", {"stage1": {"skip": True}}),
        AblationSpec(
            "frozen_projector_stage2", "projector frozen during adapter tuning", {"stage2": {"train_projector": False}}
        ),
        AblationSpec("single_token", "one audio token (K = 1)", {"projector": {"num_tokens": 1}}),
        AblationSpec(
            "insertion_layers_6_11", "adapters at layers 6 to 11 only", {"stage2": {"insertion_set": "layers_6_11"}}
        ),
        AblationSpec("insertion_all", "adapters at all sixteen layers", {"stage2": {"insertion_set": "all"}}),
    )
}


def resolve_ablations(names: Optional[Sequence[str]] = None) -> List[AblationSpec]:
    if not names:
        return list(ABLATIONS.values())
    unknown = [n for n in names if n not in ABLATIONS]
    if unknown:
        raise ArgumentError(f"Unknown ablations {unknown}. Available: {', '.join(ABLATIONS)}")
    return [ABLATIONS[n] for n in names]


def _stage1_key(config: RunConfig) -> str:
    return json.dumps(
        {"stage1": config.stage1.model_dump(), "projector": config.projector.model_dump()}, sort_keys=True
    )


def run_ablations(
    config: RunConfig,
    dataset: DatasetSplit,
    output_dir: Path,
    *,
    run_id: str,
    names: Optional[Sequence[str]] = None,
    backbone_checkpoint: Optional[Path] = None,
    logger: Optional[RunLogger] = None,
    device: torch.device | str = "cpu",
    show_progress: bool = False,
) -> AblationReport:
    """
    Run every selected ablation end to end and write ablation.json and
    ablation.md under output_dir.
    """
    specs = resolve_ablations(names)
    output_dir.mkdir(parents=True, exist_ok=True)

    if backbone_checkpoint is None:
        backbone_checkpoint = train_backbone(
            config, dataset, output_dir / "backbone.pt", logger=logger, device=device, show_progress=show_progress
        ).checkpoint
    base = load_checkpoint(backbone_checkpoint, device=device)
    embedder = eval_embedder_for(config, dataset, base.bundle, output_dir / "eval_embedder.pt", show_progress)

    stage1_cache: Dict[str, tuple] = {}
    rows: List[AblationRow] = []
    for spec in specs:
        row_dir = output_dir / spec.name
        try:
            row_config = config.override(**{k: dict(v) for k, v in spec.overrides.items()})
            key = _stage1_key(row_config)
            if key not in stage1_cache:
                stage1 = train_stage1(
                    row_config, dataset, backbone_checkpoint, row_dir / "projector.pt",
                    logger=logger, device=device, show_progress=show_progress,
                )
                stage1_cache[key] = (stage1.checkpoint, stage1.final_loss)
            stage1_path, stage1_loss = stage1_cache[key]

            stage2 = train_stage2(
                row_config, dataset, stage1_path, row_dir / "adapters.pt",
                logger=logger, device=device, show_progress=show_progress,
            )
            loaded = load_checkpoint(stage2.checkpoint, ("backbone", "text_embedder", "adapters", "projector"), device)
            metrics, _, _ = evaluate_checkpoint(
                loaded, dataset, row_config, embedder=embedder, show_progress=show_progress
            )
            row = AblationRow(
                name=spec.name,
                description=spec.description,
                overrides={k: dict(v) for k, v in spec.overrides.items()},
                metrics=metrics.model_copy(update={"per_sample": []}),
                stage1_final_loss=stage1_loss,
                stage2_final_loss=stage2.final_loss,
            )
        except ROW_ERRORS as e:
            row = AblationRow(
                name=spec.name,
                description=spec.description,
                overrides={k: dict(v) for k, v in spec.overrides.items()},
                status=Status.FAILED,
                error_message=str(e),
            )
        rows.append(row)
        if logger is not None:
            logger.log_event(
                run_id=run_id,
                command="ablate",
                event=f"row:{spec.name}",
                status="success" if row.status == Status.COMPLETED else "failure",
                payload=row.metrics.model_dump(exclude={"per_sample"}) if row.metrics else None,
                error_message=row.error_message,
            )

    report = AblationReport(metadata=RunMetadata(run_id=run_id, command="ablate", seed=config.seed), rows=rows)
    write_ablation_report(report, output_dir)
    return report


def write_ablation_report(report: AblationReport, output_dir: Path) -> List[Path]:
    data = report.model_dump(mode="json")
    json_path = output_dir / "ablation.json"
    json_path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    md_path = output_dir / "ablation.md"
    md_path.write_text(render_report("ablation_report.md.j2", data), encoding="utf-8")
    return [json_path, md_path]


__all__ = [
    "AblationSpec",
    "ABLATIONS",
    "resolve_ablations",
    "run_ablations",
    "write_ablation_report",
]
