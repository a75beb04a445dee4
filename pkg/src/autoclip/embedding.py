"""Unit-norm embeddings and descriptor-image cosine similarities.

All arithmetic happens in float64 regardless of the input dtype.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, NormalizationError, ShapeError

SIMPLEX_ATOL = 1e-6


def normalize(v, axis: int = -1) -> np.ndarray:
    """Scale ``v`` to unit L2 norm along ``axis``.

    Works on a single vector or on a stack of vectors. Raises
    :class:`NormalizationError` when any vector is all-zero or holds a
    non-finite entry.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise NormalizationError("cannot normalize an empty vector")
    if not np.all(np.isfinite(v)):
        raise NormalizationError("vector contains NaN or Inf")
    norm = np.linalg.norm(v, axis=axis, keepdims=True)
    if np.any(norm == 0):
        raise NormalizationError("cannot normalize a zero vector")
    return v / norm


def check_descriptors(desc) -> np.ndarray:
    desc = np.asarray(desc, dtype=np.float64)
    if desc.ndim != 3:
        raise ShapeError(f"descriptor tensor must be K x C x d, got shape {desc.shape}")
    K, C, d = desc.shape
    if K < 1 or C < 1 or d < 1:
        raise ShapeError(f"descriptor tensor has an empty axis: {desc.shape}")
    return desc


def pairwise_similarities(desc, img) -> np.ndarray:
    """Cosine similarity of every class descriptor with the image.

    Parameters
    ----------
    desc : array of shape (K, C, d)
        Encoded class descriptors, normalized here if they are not already.
    img : array of shape (d,) or (N, d)
        Encoded image(s).

    Returns
    -------
    ndarray of shape (K, C), or (N, K, C) for a stack of images.
    """
    desc = normalize(check_descriptors(desc))
    img = np.asarray(img, dtype=np.float64)
    if img.ndim not in (1, 2):
        raise ShapeError(f"image embedding must be 1-D or 2-D, got shape {img.shape}")
    if img.shape[-1] != desc.shape[-1]:
        raise ShapeError(
            f"dimension mismatch: descriptors d={desc.shape[-1]}, image d={img.shape[-1]}"
        )
    img = normalize(img)
    if img.ndim == 1:
        return np.einsum("kcd,d->kc", desc, img)
    return np.einsum("kcd,nd->nkc", desc, img)


def class_scores(S, w) -> np.ndarray:
    """Weighted column sums ``s_j = sum_i w_i S_ij``.

    Because the image is unit norm, this is the cosine-style similarity
    between the image and the weighted class query.
    """
    S = np.asarray(S, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if S.ndim < 2 or w.shape != S.shape[:-1]:
        raise ShapeError(f"weights of shape {w.shape} do not match similarities {S.shape}")
    if np.any(w < -SIMPLEX_ATOL) or np.any(np.abs(w.sum(axis=-1) - 1.0) > SIMPLEX_ATOL):
        raise ConfigError("weights are not on the probability simplex")
    return weighted_scores(S, w)


def weighted_scores(S: np.ndarray, w: np.ndarray) -> np.ndarray:
    # unchecked fast path used by the batched engines
    return np.einsum("...kc,...k->...c", S, w)
