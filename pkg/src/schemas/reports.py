"""
Report and manifest schemas.

Metric reports, parameter-partition reports, ablation tables and the run
manifests every subcommand writes next to its outputs.
"""

from __future__ import annotations

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from src.schemas.base import RunMetadata, Status


class PerSampleRecord(BaseModel):
    """Rank counts and prediction for one generated image."""
    sample_id: str = Field(description="Identifier of the generated sample")
    true_class: int = Field(description="Class id of the conditioning audio")
    predicted_class: int = Field(description="Zero-shot predicted class of the image")
    ais_count: int = Field(ge=0, description="Validation audios less similar than the conditioning audio")
    iis_count: int = Field(ge=0, description="Validation images less similar than the ground truth")


class MetricsReport(BaseModel):
    """Reference-based semantic metrics plus FID for one evaluation run."""
    ais: float = Field(ge=0.0, le=1.0, description="Audio-image similarity rank score")
    aic: float = Field(ge=0.0, le=1.0, description="Audio-image content agreement")
    iis: float = Field(ge=0.0, le=1.0, description="Image-image similarity rank score")
    fid: float = Field(ge=0.0, description="Frechet distance of embedder features")
    num_samples: int = Field(ge=0)
    num_audio_references: int = Field(ge=0)
    num_image_references: int = Field(ge=0)
    embedder_checksum: Optional[str] = Field(default=None, description="Frozen eval embedder hash")
    per_sample: List[PerSampleRecord] = Field(default_factory=list)
    metadata: Optional[RunMetadata] = None


class PartitionReport(BaseModel):
    """Trainable / frozen parameter counts per group."""
    groups: Dict[str, int] = Field(description="Parameter count per group")
    trainable_groups: List[str] = Field(description="Groups with requires_grad set")
    trainable: int = Field(ge=0)
    frozen: int = Field(ge=0)

    @property
    def total(self) -> int:
        return self.trainable + self.frozen

    @property
    def trainable_fraction(self) -> float:
        return self.trainable / self.total if self.total else 0.0


class RunManifest(BaseModel):
    """Everything needed to re-execute a subcommand."""
    metadata: RunMetadata
    status: Status = Status.COMPLETED
    settings: Dict[str, Any] = Field(default_factory=dict, description="Subcommand arguments")
    config: Dict[str, Any] = Field(default_factory=dict, description="RunConfig snapshot")
    outputs: List[str] = Field(default_factory=list, description="Files written by the run")


class AblationRow(BaseModel):
    """One ablation configuration and its metrics."""
    name: str
    description: str
    overrides: Dict[str, Any] = Field(default_factory=dict)
    metrics: Optional[MetricsReport] = None
    stage1_final_loss: Optional[float] = None
    stage2_final_loss: Optional[float] = None
    status: Status = Status.COMPLETED
    error_message: Optional[str] = None


class AblationReport(BaseModel):
    """Comparison table across ablation configurations."""
    metadata: RunMetadata
    rows: List[AblationRow] = Field(default_factory=list)


__all__ = [
    "PerSampleRecord",
    "MetricsReport",
    "PartitionReport",
    "RunManifest",
    "AblationRow",
    "AblationReport",
]
