"""Baseline reductions of a K x C similarity matrix to C class scores.

Every function accepts either one similarity matrix of shape (K, C) or a
stack of shape (N, K, C) and reduces over the template axis. Ties are
always broken towards the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .embedding import weighted_scores
from .exceptions import ConfigError, ScoreError, ShapeError
from .stepsize import BisectionParams, check_beta, softmax, solve_step_sizes

SIMPLEX_ATOL = 1e-6


def _check_similarities(S) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    if S.ndim not in (2, 3) or S.shape[-2] < 1 or S.shape[-1] < 1:
        raise ShapeError(f"similarities must be K x C or N x K x C, got shape {S.shape}")
    return S


def aggregate_mean(S) -> np.ndarray:
    S = _check_similarities(S)
    return S.sum(axis=-2) / S.shape[-2]


def aggregate_max(S) -> np.ndarray:
    S = _check_similarities(S)
    return S.max(axis=-2)


def topr_mask(S, R: int) -> np.ndarray:
    """Boolean mask over templates selecting the ``R`` largest row means."""
    S = _check_similarities(S)
    K = S.shape[-2]
    if not isinstance(R, (int, np.integer)) or not 1 <= R <= K:
        raise ConfigError(f"TopR needs 1 <= R <= K={K}, got R={R}")
    row_means = S.sum(axis=-1) / S.shape[-1]
    # stable sort of the negated means keeps the lowest index first among ties
    order = np.argsort(-row_means, axis=-1, kind="stable")
    mask = np.zeros(row_means.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :R], True, axis=-1)
    return mask


def aggregate_topr(S, R: int) -> np.ndarray:
    """Column means over the ``R`` templates with the largest row means."""
    S = _check_similarities(S)
    mask = topr_mask(S, R)
    return np.where(mask[..., None], S, 0.0).sum(axis=-2) / R


def aggregate_softmax_weighting(S, beta: float = 0.85, bisection: BisectionParams = BisectionParams()):
    """Weights ``softmax(t * rowmean)`` with ``t`` solved for a target entropy.

    Returns ``(weights, scores, info)`` where ``info`` carries the solved
    inverse temperature under ``"alpha"`` and a ``"degenerate"`` flag that
    is set when all row means coincide (uniform weights are returned).
    """
    S = _check_similarities(S)
    single = S.ndim == 2
    S3 = S[None] if single else S
    row_means = S3.sum(axis=-1) / S3.shape[-1]
    sol = solve_step_sizes(row_means, beta, bisection)
    w = softmax(sol["alpha"][:, None] * row_means)
    scores = weighted_scores(S3, w)
    if single:
        return w[0], scores[0], {k: v[0] for k, v in sol.items()}
    return w, scores, sol


def entropy_bits(w) -> float:
    """Shannon entropy of a simplex vector in bits, with ``0 log 0 = 0``."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ShapeError(f"weights must be a non-empty vector, got shape {w.shape}")
    if np.any(w < -SIMPLEX_ATOL) or abs(w.sum() - 1.0) > SIMPLEX_ATOL:
        raise ConfigError("weights are not on the probability simplex")
    w = np.clip(w, 0.0, None)
    nz = w[w > 0]
    return float(-np.sum(nz * np.log2(nz)) + 0.0)


def predict(scores) -> int:
    """Index of the largest score; the lowest index wins a tie."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise ScoreError("scores must be a non-empty vector")
    if np.any(np.isnan(scores)):
        raise ScoreError("scores contain NaN")
    return int(np.argmax(scores))


def predict_batch(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if np.any(np.isnan(scores)):
        raise ScoreError("scores contain NaN")
    return np.argmax(scores, axis=-1)


class Aggregation(NamedTuple):
    """Output of an aggregation method.

    Fields carry a leading sample axis when the similarities were N x K x C
    and none when a single K x C matrix was aggregated.
    """

    scores: np.ndarray
    weights: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    entropy_bits: Optional[np.ndarray] = None
    iterations: Optional[np.ndarray] = None
    degenerate: Optional[np.ndarray] = None

    def first(self) -> "Aggregation":
        """The first sample of a batched result, without the sample axis."""
        return Aggregation._make(None if x is None else x[0] for x in self)


@dataclass(frozen=True)
class PredictionResult:
    predicted_class: int
    scores: np.ndarray
    weights: Optional[np.ndarray] = None
    weight_entropy_bits: Optional[float] = None


# Aggregation methods. Each exposes ``name`` and ``aggregate(S)`` with S of
# shape (N, K, C).


@dataclass(frozen=True)
class Mean:
    name: str = field(default="mean", init=False)

    def aggregate(self, S) -> Aggregation:
        return Aggregation(aggregate_mean(S))


@dataclass(frozen=True)
class Max:
    name: str = field(default="max", init=False)

    def aggregate(self, S) -> Aggregation:
        return Aggregation(aggregate_max(S))


@dataclass(frozen=True)
class TopR:
    R: int

    def __post_init__(self):
        if not isinstance(self.R, (int, np.integer)) or self.R < 1:
            raise ConfigError(f"TopR needs a positive integer R, got {self.R!r}")

    @property
    def name(self) -> str:
        return f"topr{self.R}"

    def aggregate(self, S) -> Aggregation:
        S = _check_similarities(S)
        mask = topr_mask(S, self.R)
        scores = np.where(mask[..., None], S, 0.0).sum(axis=-2) / self.R
        return Aggregation(scores, weights=mask / self.R)


@dataclass(frozen=True)
class SoftmaxWeighting:
    beta: float = 0.85
    bisection: BisectionParams = BisectionParams()

    def __post_init__(self):
        check_beta(self.beta)

    @property
    def name(self) -> str:
        return "softmax"

    def aggregate(self, S) -> Aggregation:
        S = _check_similarities(S)
        single = S.ndim == 2
        w, scores, sol = aggregate_softmax_weighting(S[None] if single else S, self.beta, self.bisection)
        out = Aggregation(
            scores,
            weights=w,
            alpha=sol["alpha"],
            entropy_bits=sol["entropy_bits"],
            iterations=sol["iterations"],
            degenerate=sol["degenerate"],
        )
        return out.first() if single else out
