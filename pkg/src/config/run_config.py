"""
Run Configuration Loader

Defines the full configuration of a training / sampling / editing run as a
set of pydantic section models, and loads/saves it as a sectioned YAML file.
All defaults are embedded here and can be dumped with ``--print-config``.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import INJECTION_PRESETS, INSERTION_SETS
from src.utils.validation_utils import ArtifactNotFoundError, ConfigurationError


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataConfig(_Section):
    """Synthetic paired dataset parameters."""
    seed: int = 0
    n_classes: int = Field(default=8, ge=2)
    n_per_class: int = Field(default=64, ge=4)
    val_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)
    heldout_per_class: int = Field(default=16, ge=2, description="Split used to train the eval embedder")
    sample_rate: int = Field(default=16000, gt=0)
    duration: float = Field(default=2.0, gt=0.0)
    image_size: int = Field(default=32, ge=8)


class AudioConfig(_Section):
    """Log-mel front end and frozen audio featurizer."""
    hop: int = Field(default=320, gt=0)
    window: int = Field(default=1024, gt=0)
    n_mels: int = Field(default=64, gt=0)
    embed_dim: int = Field(default=512, gt=0)
    encoder_seed: int = 1234


class ProjectorConfig(_Section):
    """Audio projector dimensions. token_dim must equal the backbone text-token width."""
    num_tokens: int = Field(default=8, ge=1)
    token_dim: int = Field(default=64, gt=0)
    hidden_channels: int = Field(default=64, gt=0)
    heads: int = Field(default=1, ge=1)
    ff_mult: int = Field(default=4, ge=1)


class BackboneConfig(_Section):
    """Toy denoising UNet."""
    widths: Tuple[int, int] = (64, 128)
    text_tokens: int = Field(default=8, ge=1)
    time_dim: int = Field(default=128, gt=0)
    heads: int = Field(default=1, ge=1)
    ff_mult: int = Field(default=2, ge=1)
    groups: int = Field(default=8, ge=1)
    adapter_ff_mult: int = Field(default=1, ge=1)
    num_timesteps: int = Field(default=1000, ge=2)
    beta_start: float = Field(default=1e-4, gt=0.0, lt=1.0)
    beta_end: float = Field(default=2e-2, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check_schedule(self) -> "BackboneConfig":
        if self.beta_end <= self.beta_start:
            raise ValueError("beta_end must exceed beta_start")
        for width in self.widths:
            if width % self.groups:
                raise ValueError(f"width {width} not divisible by groups {self.groups}")
        return self


class Stage0Config(_Section):
    """Text-conditioned backbone pretraining."""
    steps: int = Field(default=2000, ge=1)
    batch_size: int = Field(default=16, ge=1)
    lr: float = Field(default=2e-4, gt=0.0)
    caption_dropout: float = Field(default=0.1, ge=0.0, le=1.0)


class Stage1Config(_Section):
    """Audio projector alignment."""
    steps: int = Field(default=600, ge=1)
    batch_size: int = Field(default=6, ge=1)
    lr: float = Field(default=1e-4, gt=0.0)
    alpha_contrastive: float = Field(default=1.0, ge=0.0)
    alpha_mse: float = Field(default=0.25, ge=0.0)
    weight_temperature: float = Field(default=5.0, gt=0.0)
    num_negatives: int = Field(default=16, ge=1)
    weighting: Literal["reverse_sigmoid", "uniform"] = "reverse_sigmoid"
    similarity: Literal["dot", "cosine"] = "dot"
    reduction: Literal["per_token", "clip"] = "per_token"
    skip: bool = False


class Stage2Config(_Section):
    """Gated adapter tuning on the frozen backbone."""
    steps: int = Field(default=2000, ge=1)
    batch_size: int = Field(default=6, ge=1)
    adapter_lr: float = Field(default=1e-4, gt=0.0)
    projector_lr: float = Field(default=1e-5, gt=0.0)
    null_audio_prob: float = Field(default=0.1, ge=0.0, le=1.0)
    insertion_set: str = "middle_decoder"
    train_projector: bool = True
    init_from_text: bool = True

    @field_validator("insertion_set")
    @classmethod
    def _known_set(cls, value: str) -> str:
        if value not in INSERTION_SETS:
            raise ValueError(f"unknown insertion set '{value}'; available: {', '.join(INSERTION_SETS)}")
        return value


class OptimizerConfig(_Section):
    """AdamW settings shared by every stage."""
    weight_decay: float = Field(default=1e-2, ge=0.0)
    betas: Tuple[float, float] = (0.9, 0.999)
    grad_clip: Optional[float] = Field(default=1.0, gt=0.0)


class SamplerConfig(_Section):
    """DDIM sampling with classifier-free guidance."""
    steps: int = Field(default=50, ge=1)
    guidance_scale: float = 8.0
    formulation: Literal["standard", "signed_null"] = "standard"
    beta: float = Field(default=1.0, ge=0.0)
    eta: float = Field(default=0.0, ge=0.0)


class EditingConfig(_Section):
    """Plug-and-play feature injection."""
    preset: str = "default"
    injection_fraction: float = Field(default=0.8, ge=0.0, le=1.0)
    record_during_inversion: bool = False

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, value: str) -> str:
        if value not in INJECTION_PRESETS:
            raise ValueError(f"unknown injection preset '{value}'; available: {', '.join(INJECTION_PRESETS)}")
        return value


class EvaluationConfig(_Section):
    """Evaluation embedder and metric run sizes."""
    embedder_steps: int = Field(default=800, ge=1)
    embedder_dim: int = Field(default=64, gt=0)
    embedder_lr: float = Field(default=1e-3, gt=0.0)
    embedder_batch_size: int = Field(default=64, ge=2)
    temperature: float = Field(default=0.07, gt=0.0)
    max_samples: Optional[int] = Field(default=None, ge=1)
    fid_eps: float = Field(default=1e-6, ge=0.0)


class RunConfig(_Section):
    """
    Complete configuration of a run.

    Sections mirror the headers of the YAML file; any missing key takes the
    default embedded here.
    """
    seed: int = 0
    data: DataConfig = Field(default_factory=DataConfig)
    audio: AudioConfig = Field(default_factory=AudioConfig)
    projector: ProjectorConfig = Field(default_factory=ProjectorConfig)
    backbone: BackboneConfig = Field(default_factory=BackboneConfig)
    stage0: Stage0Config = Field(default_factory=Stage0Config)
    stage1: Stage1Config = Field(default_factory=Stage1Config)
    stage2: Stage2Config = Field(default_factory=Stage2Config)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    editing: EditingConfig = Field(default_factory=EditingConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)

    @model_validator(mode="after")
    def _check_learning_rates(self) -> "RunConfig":
        if self.stage2.projector_lr >= self.stage1.lr:
            raise ValueError(
                "stage2.projector_lr must be lower than stage1.lr "
                f"({self.stage2.projector_lr} >= {self.stage1.lr})"
            )
        if self.audio.window > int(self.data.sample_rate * self.data.duration):
            raise ValueError("audio.window exceeds the clip length")
        return self

    def override(self, **sections: Dict[str, Any]) -> "RunConfig":
        """Return a validated copy with the given per-section key overrides applied."""
        data = self.model_dump()
        for section, values in sections.items():
            if isinstance(values, dict):
                data.setdefault(section, {}).update(values)
            else:
                data[section] = values
        return build_run_config(data)


def build_run_config(data: Dict[str, Any]) -> RunConfig:
    """Validate a raw mapping into a RunConfig, raising ConfigurationError on failure."""
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"Invalid run configuration: {e}") from e


def load_run_config(path: Optional[Path | str] = None) -> RunConfig:
    """
    Load a run configuration from a YAML file.

    Args:
        path: Path to the config file. None returns the embedded defaults.

    Returns:
        Validated RunConfig
    """
    if path is None:
        return RunConfig()

    config_path = Path(path)
    if not config_path.exists():
        raise ArtifactNotFoundError(f"Config file not found: {config_path}")

    try:
        with open(config_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML in {config_path}: {e}")

    return build_run_config(data or {})


def dump_run_config(config: RunConfig) -> str:
    """Render a RunConfig as sectioned YAML text."""
    return yaml.safe_dump(config.model_dump(mode="json"), default_flow_style=False, sort_keys=False)


def save_run_config(config: RunConfig, path: Path | str) -> Path:
    """Save a RunConfig to path, creating parent directories as needed."""
    config_path = Path(path)
    config_path.parent.mkdir(parents=True, exist_ok=True)
    config_path.write_text(dump_run_config(config), encoding="utf-8")
    return config_path


def dump_default_config() -> str:
    """Return the embedded defaults as YAML text."""
    return dump_run_config(RunConfig())


__all__ = [
    "DataConfig",
    "AudioConfig",
    "ProjectorConfig",
    "BackboneConfig",
    "Stage0Config",
    "Stage1Config",
    "Stage2Config",
    "OptimizerConfig",
    "SamplerConfig",
    "EditingConfig",
    "EvaluationConfig",
    "RunConfig",
    "build_run_config",
    "load_run_config",
    "dump_run_config",
    "save_run_config",
    "dump_default_config",
]
