"""
Frechet distance between Gaussian fits of two feature sets.

    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)

Both square roots come from symmetric eigendecompositions; negative
eigenvalues are clamped at zero. Covariances are regularized by eps * I.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np
from scipy import linalg

from src.utils.validation_utils import ArgumentError

DEFAULT_EPS = 1e-6


def _sqrtm_psd(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    return (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T


def gaussian_statistics(features: np.ndarray, eps: float = DEFAULT_EPS) -> Tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 1:
        raise ArgumentError(f"features must be a non-empty N x D array, got shape {features.shape}")
    mu = features.mean(axis=0)
    if features.shape[0] > 1:
        sigma = np.atleast_2d(np.cov(features, rowvar=False))
    else:
        sigma = np.zeros((features.shape[1], features.shape[1]))
    return mu, sigma + eps * np.eye(sigma.shape[0])


def frechet_distance(
    mu1: np.ndarray,
    sigma1: np.ndarray,
    mu2: np.ndarray,
    sigma2: np.ndarray,
) -> float:
    if mu1.shape != mu2.shape or sigma1.shape != sigma2.shape:
        raise ArgumentError(f"statistics dimensions differ: {mu1.shape} vs {mu2.shape}")
    root1 = _sqrtm_psd(sigma1)
    middle = root1 @ sigma2 @ root1
    middle = (middle + middle.T) / 2.0
    eigenvalues = np.clip(linalg.eigh(middle, eigvals_only=True), 0.0, None)
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.sqrt(eigenvalues).sum())
    return max(value, 0.0)


def fid(features_real: np.ndarray, features_gen: np.ndarray, eps: float = DEFAULT_EPS) -> float:
    """FID between N x D and M x D feature arrays."""
    real = np.asarray(features_real, dtype=np.float64)
    gen = np.asarray(features_gen, dtype=np.float64)
    if real.ndim != 2 or gen.ndim != 2 or real.shape[1] != gen.shape[1]:
        raise ArgumentError(f"feature dimensions differ: {real.shape} vs {gen.shape}")
    return frechet_distance(*gaussian_statistics(real, eps), *gaussian_statistics(gen, eps))


__all__ = ["DEFAULT_EPS", "gaussian_statistics", "frechet_distance", "fid"]
