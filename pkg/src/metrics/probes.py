"""
Probe oracles: nearest-centroid accuracy, class-probe score and an
edge-map structure proxy for editing.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

from src.utils.validation_utils import ArgumentError


def class_centroids(features: np.ndarray, labels: Sequence[int], n_classes: int) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    centroids = np.zeros((n_classes, features.shape[1]))
    for k in range(n_classes):
        members = features[labels == k]
        if members.shape[0] == 0:
            raise ArgumentError(f"class {k} has no members to build a centroid")
        centroids[k] = members.mean(axis=0)
    return centroids


def nearest_centroid_accuracy(
    train_features: np.ndarray,
    train_labels: Sequence[int],
    test_features: np.ndarray,
    test_labels: Sequence[int],
) -> float:
    """Accuracy of a Euclidean nearest-centroid classifier fit on the train features."""
    train_labels = np.asarray(train_labels)
    n_classes = int(train_labels.max()) + 1
    centroids = class_centroids(train_features, train_labels, n_classes)
    test = np.asarray(test_features, dtype=np.float64)
    distances = ((test[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float(np.mean(np.argmin(distances, axis=1) == np.asarray(test_labels)))


def class_probe_scores(image_emb: np.ndarray, prototypes: np.ndarray, temperature: float = 0.07) -> np.ndarray:
    """Softmax over prototype similarities, [N, M]."""
    logits = np.asarray(image_emb) @ np.asarray(prototypes).T / temperature
    logits = logits - logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    return probs / probs.sum(axis=1, keepdims=True)


def class_probe_score(image_emb: np.ndarray, prototypes: np.ndarray, class_id: int, temperature: float = 0.07) -> float:
    """Mean probability assigned to class_id across images."""
    return float(class_probe_scores(image_emb, prototypes, temperature)[:, class_id].mean())


def edge_map(pixels: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Boolean Sobel edge map of an H x W x 3 image in [-1, 1]."""
    gray = np.asarray(pixels, dtype=np.float64).mean(axis=-1)
    magnitude = np.hypot(ndimage.sobel(gray, axis=0), ndimage.sobel(gray, axis=1))
    peak = magnitude.max()
    if peak == 0:
        return np.zeros_like(gray, dtype=bool)
    return magnitude >= threshold * peak


def edge_iou(first: np.ndarray, second: np.ndarray, threshold: float = 0.5) -> float:
    """IoU of the edge maps of two images; 1.0 when both have no edges."""
    a, b = edge_map(first, threshold), edge_map(second, threshold)
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def is_monotone(values: Sequence[float], increasing: bool = True, tolerance: float = 0.0) -> bool:
    """Non-strict monotonicity check with an absolute tolerance."""
    diffs = np.diff(np.asarray(values, dtype=np.float64))
    return bool(np.all(diffs >= -tolerance)) if increasing else bool(np.all(diffs <= tolerance))


__all__ = [
    "class_centroids",
    "nearest_centroid_accuracy",
    "class_probe_scores",
    "class_probe_score",
    "edge_map",
    "edge_iou",
    "is_monotone",
]
