"""
Reference-based semantic metrics.

AIS and IIS count, for each generated image, the reference items whose
similarity to the image is strictly lower than that of its own target
(conditioning audio for AIS, ground-truth image for IIS), as a fraction of
the references. AIC is zero-shot class agreement against class prototypes
with ties resolved to the lowest class index.

All functions take L2-normalized embeddings as numpy arrays; similarity is
the dot product.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np

from src.utils.validation_utils import ArgumentError


def _as_2d(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ArgumentError(f"{what} must be a non-empty N x D array, got shape {x.shape}")
    return x


def reference_rank_counts(target_sims: np.ndarray, reference_sims: np.ndarray) -> np.ndarray:
    """
    Args:
        target_sims: [N] similarity of each image to its own target
        reference_sims: [N, R] similarity of each image to every reference

    Returns:
        [N] counts of references with similarity strictly below the target
    """
    target_sims = np.asarray(target_sims)
    reference_sims = np.asarray(reference_sims)
    if reference_sims.ndim != 2 or reference_sims.shape[1] == 0:
        raise ArgumentError("at least one reference item is required")
    if target_sims.shape != (reference_sims.shape[0],):
        raise ArgumentError(
            f"target similarities {target_sims.shape} do not align with references {reference_sims.shape}"
        )
    return (reference_sims < target_sims[:, None]).sum(axis=1)


def ais_counts(image_emb: np.ndarray, cond_audio_emb: np.ndarray, val_audio_emb: np.ndarray) -> np.ndarray:
    images = _as_2d(image_emb, "generated image embeddings")
    cond = _as_2d(cond_audio_emb, "conditioning audio embeddings")
    refs = _as_2d(val_audio_emb, "validation audio embeddings")
    if images.shape != cond.shape:
        raise ArgumentError(f"images {images.shape} and conditioning audios {cond.shape} are misaligned")
    return reference_rank_counts((images * cond).sum(axis=1), images @ refs.T)


def ais(image_emb: np.ndarray, cond_audio_emb: np.ndarray, val_audio_emb: np.ndarray) -> float:
    """Audio-image similarity rank score in [0, 1]."""
    counts = ais_counts(image_emb, cond_audio_emb, val_audio_emb)
    return float(np.mean(counts / np.asarray(val_audio_emb).shape[0]))


def iis_counts(gen_emb: np.ndarray, gt_emb: np.ndarray, val_image_emb: np.ndarray) -> np.ndarray:
    gen = _as_2d(gen_emb, "generated image embeddings")
    gt = _as_2d(gt_emb, "ground-truth image embeddings")
    refs = _as_2d(val_image_emb, "validation image embeddings")
    if gen.shape != gt.shape:
        raise ArgumentError(f"generated {gen.shape} and ground-truth {gt.shape} images are misaligned")
    return reference_rank_counts((gen * gt).sum(axis=1), gen @ refs.T)


def iis(gen_emb: np.ndarray, gt_emb: np.ndarray, val_image_emb: np.ndarray) -> float:
    """Image-image similarity rank score in [0, 1]."""
    counts = iis_counts(gen_emb, gt_emb, val_image_emb)
    return float(np.mean(counts / np.asarray(val_image_emb).shape[0]))


def predict_classes(image_emb: np.ndarray, prototypes: np.ndarray) -> np.ndarray:
    """Argmax over prototype similarities; np.argmax returns the lowest index on ties."""
    sims = _as_2d(image_emb, "image embeddings") @ _as_2d(prototypes, "class prototypes").T
    return np.argmax(sims, axis=1)


def aic(image_emb: np.ndarray, true_ids: Sequence[int], prototypes: np.ndarray) -> float:
    """Fraction of images whose zero-shot prediction equals the audio's class."""
    true_ids = np.asarray(true_ids, dtype=np.int64)
    n_classes = np.asarray(prototypes).shape[0]
    if true_ids.size == 0:
        raise ArgumentError("aic needs at least one sample")
    if true_ids.min() < 0 or true_ids.max() >= n_classes:
        raise ArgumentError(f"class id outside [0, {n_classes})")
    predicted = predict_classes(image_emb, prototypes)
    if predicted.shape != true_ids.shape:
        raise ArgumentError("image embeddings and class ids are misaligned")
    return float(np.mean(predicted == true_ids))


def semantic_scores(
    image_emb: np.ndarray,
    cond_audio_emb: np.ndarray,
    val_audio_emb: np.ndarray,
    gt_image_emb: np.ndarray,
    val_image_emb: np.ndarray,
    true_ids: Sequence[int],
    prototypes: np.ndarray,
    sample_ids: Optional[Sequence[str]] = None,
) -> Tuple[float, float, float, list]:
    """Compute (ais, iis, aic, per-sample records) in one pass."""
    a_counts = ais_counts(image_emb, cond_audio_emb, val_audio_emb)
    i_counts = iis_counts(image_emb, gt_image_emb, val_image_emb)
    predicted = predict_classes(image_emb, prototypes)
    sample_ids = list(sample_ids) if sample_ids is not None else [f"sample{i:05d}" for i in range(len(predicted))]
    records = [
        {
            "sample_id": sid,
            "true_class": int(true),
            "predicted_class": int(pred),
            "ais_count": int(ac),
            "iis_count": int(ic),
        }
        for sid, true, pred, ac, ic in zip(sample_ids, true_ids, predicted, a_counts, i_counts)
    ]
    return (
        float(np.mean(a_counts / np.asarray(val_audio_emb).shape[0])),
        float(np.mean(i_counts / np.asarray(val_image_emb).shape[0])),
        aic(image_emb, true_ids, prototypes),
        records,
    )


__all__ = [
    "reference_rank_counts",
    "ais_counts",
    "ais",
    "iis_counts",
    "iis",
    "predict_classes",
    "aic",
    "semantic_scores",
]
