"""
Evaluation metrics: AIS / IIS / AIC rank and agreement scores, FID, and probes.
"""

from src.metrics.embedder import EvalEmbedder, train_eval_embedder
from src.metrics.fid import fid, frechet_distance, gaussian_statistics
from src.metrics.probes import (
    class_probe_score,
    edge_iou,
    is_monotone,
    nearest_centroid_accuracy,
)
from src.metrics.scores import (
    aic,
    ais,
    iis,
    predict_classes,
    reference_rank_counts,
    semantic_scores,
)

__all__ = [
    "EvalEmbedder",
    "train_eval_embedder",
    "fid",
    "frechet_distance",
    "gaussian_statistics",
    "class_probe_score",
    "edge_iou",
    "is_monotone",
    "nearest_centroid_accuracy",
    "aic",
    "ais",
    "iis",
    "predict_classes",
    "reference_rank_counts",
    "semantic_scores",
]
