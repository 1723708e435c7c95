"""Common validation helpers and the error kinds raised across the package."""

from __future__ import annotations

import math
from typing import Sequence

import torch


class ArgumentError(ValueError):
    """Raised when an operation receives arguments outside its contract."""


class ConfigurationError(ValueError):
    """Raised when model, checkpoint or run configuration is inconsistent."""


class NumericFailureError(ArithmeticError):
    """Raised when a NaN or infinity is detected during training or sampling."""


class ArtifactNotFoundError(FileNotFoundError):
    """Raised when a dataset, checkpoint or input file is missing."""


def require(condition: bool, message: str) -> None:
    """Raise ArgumentError with message unless condition holds."""
    if not condition:
        raise ArgumentError(message)


def require_range(
    value: float,
    field_name: str,
    low: float,
    high: float,
) -> None:
    """Ensure low <= value <= high."""
    if not (low <= value <= high):
        raise ArgumentError(f"Field '{field_name}' must lie in [{low}, {high}], got {value}.")


def require_same_shape(first: torch.Tensor, second: torch.Tensor, what: str) -> None:
    """Ensure two tensors share a shape."""
    if tuple(first.shape) != tuple(second.shape):
        raise ArgumentError(
            f"Shape mismatch for {what}: {tuple(first.shape)} vs {tuple(second.shape)}"
        )


def require_dim(tensor: torch.Tensor, expected: Sequence[int], what: str) -> None:
    """Ensure the trailing dimensions of tensor equal expected."""
    trailing = tuple(tensor.shape[-len(expected):]) if expected else ()
    if trailing != tuple(expected):
        raise ArgumentError(
            f"Expected {what} with trailing shape {tuple(expected)}, got {tuple(tensor.shape)}"
        )


def require_finite(value: torch.Tensor | float, what: str) -> None:
    """Raise NumericFailureError if value contains NaN or infinity."""
    if isinstance(value, torch.Tensor):
        if not bool(torch.isfinite(value).all()):
            raise NumericFailureError(f"Non-finite values detected in {what}")
    elif not math.isfinite(value):
        raise NumericFailureError(f"Non-finite value detected in {what}: {value}")


__all__ = [
    "ArgumentError",
    "ConfigurationError",
    "NumericFailureError",
    "ArtifactNotFoundError",
    "require",
    "require_range",
    "require_same_shape",
    "require_dim",
    "require_finite",
]
