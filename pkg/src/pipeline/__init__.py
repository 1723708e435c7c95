"""
Training pipeline, checkpoints, generation / editing / evaluation commands and ablations.
"""

from src.pipeline.checkpoint import CHECKPOINT_VERSION, LoadedCheckpoint, load_checkpoint, save_checkpoint
from src.pipeline.models import ExampleTensors, ModelBundle, batch_plan, build_bundle, tensorize_examples
from src.pipeline.training import StageResult, train_backbone, train_stage1, train_stage2

__all__ = [
    "CHECKPOINT_VERSION",
    "LoadedCheckpoint",
    "load_checkpoint",
    "save_checkpoint",
    "ExampleTensors",
    "ModelBundle",
    "batch_plan",
    "build_bundle",
    "tensorize_examples",
    "StageResult",
    "train_backbone",
    "train_stage1",
    "train_stage2",
]
