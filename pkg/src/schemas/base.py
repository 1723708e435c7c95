"""
Base types shared by run reports and manifests.
"""

from __future__ import annotations

from datetime import datetime, timezone
from enum import Enum
from typing import Optional

from pydantic import BaseModel, Field

SCHEMA_VERSION = "1.0.0"


class Status(str, Enum):
    """Standard status values."""
    COMPLETED = "completed"
    FAILED = "failed"


class RunMetadata(BaseModel):
    """Metadata about the run that produced an artifact."""
    run_id: str = Field(description="Run identifier shared with the run log")
    command: str = Field(description="Subcommand that produced this artifact")
    timestamp: str = Field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(),
        description="When this artifact was generated",
    )
    seed: Optional[int] = Field(default=None, description="Seed the run was executed with")
    version: str = Field(default=SCHEMA_VERSION, description="Schema version")


__all__ = ["SCHEMA_VERSION", "Status", "RunMetadata"]
