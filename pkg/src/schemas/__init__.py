"""
Structured report schemas for sonic-adapters.

Pydantic models for every JSON artifact the CLI writes: run manifests,
metric reports, parameter partitions and ablation tables.

Usage:
    from src.schemas import validate_report

    report = validate_report("metrics", json.loads(path.read_text()))
    print(report.aic)
"""

from __future__ import annotations

from typing import Any, Dict, Type

from pydantic import BaseModel

from src.schemas.base import SCHEMA_VERSION, RunMetadata, Status
from src.schemas.reports import (
    AblationReport,
    AblationRow,
    MetricsReport,
    PartitionReport,
    PerSampleRecord,
    RunManifest,
)


# Registry mapping report names to Pydantic models
SCHEMA_REGISTRY: Dict[str, Type[BaseModel]] = {
    "metrics": MetricsReport,
    "partition": PartitionReport,
    "manifest": RunManifest,
    "ablation": AblationReport,
}


def validate_report(schema_name: str, data: Dict[str, Any]) -> BaseModel:
    """
    Validate a JSON artifact against a registered schema.

    Raises:
        KeyError: If schema_name not in registry
        ValidationError: If data doesn't match schema
    """
    model = SCHEMA_REGISTRY[schema_name]
    return model.model_validate(data)


__all__ = [
    "SCHEMA_VERSION",
    "SCHEMA_REGISTRY",
    "validate_report",
    "RunMetadata",
    "Status",
    "PerSampleRecord",
    "MetricsReport",
    "PartitionReport",
    "RunManifest",
    "AblationRow",
    "AblationReport",
]
