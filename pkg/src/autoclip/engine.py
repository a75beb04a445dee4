"""Per-sample auto-tuning of template weights.

For one image the template weights are ``w = softmax(rho)``. Starting at
``rho = 0`` (uniform weights) we take a single gradient-ascent step
``rho = alpha * g`` on an objective of the class scores, with ``alpha``
picked so that the new weights keep a fraction ``beta`` of the maximal
entropy ``log2(K)``. Classification then uses the re-weighted scores.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .aggregators import Aggregation, PredictionResult, predict
from .embedding import check_descriptors, normalize, pairwise_similarities, weighted_scores
from .exceptions import AutoclipError, ConfigError, ShapeError, SampleError
from .stepsize import (
    BisectionParams,
    StepSizeSolution,
    check_beta,
    log_softmax,
    softmax,
    softmax_entropy_bits,
    solve_step_size,
    solve_step_sizes,
)

__all__ = [
    "ObjectiveKind",
    "AutoclipConfig",
    "AutoclipResult",
    "AutoClip",
    "logsumexp",
    "objective_value",
    "grad_rho",
    "grad_fd",
    "solve_step_size",
    "autoclip_classify",
    "batch_classify",
]

# batches are always cut at the same boundaries so results never depend on
# the number of workers
CHUNK_SIZE = 64


class ObjectiveKind(str, Enum):
    LOGSUMEXP = "logsumexp"
    NEG_ENTROPY = "entropy"
    MEAN = "mean"
    MAX = "max"


@dataclass(frozen=True)
class AutoclipConfig:
    beta: float = 0.85
    tau: float = 100.0
    objective: ObjectiveKind = ObjectiveKind.LOGSUMEXP
    bisection: BisectionParams = field(default_factory=BisectionParams)
    fixed_alpha: Optional[float] = None

    def __post_init__(self):
        check_beta(self.beta)
        if not self.tau > 0:
            raise ConfigError(f"temperature tau must be positive, got {self.tau}")
        object.__setattr__(self, "objective", ObjectiveKind(self.objective))
        if self.fixed_alpha is not None and not self.fixed_alpha >= 0:
            raise ConfigError(f"fixed_alpha must be non-negative, got {self.fixed_alpha}")


@dataclass(frozen=True)
class AutoclipResult:
    prediction: PredictionResult
    logits: np.ndarray
    step: StepSizeSolution
    objective_before: float
    objective_after: float


def logsumexp(x, axis: int = -1):
    """``log(sum(exp(x)))`` with a max shift, so large inputs never overflow."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("logsumexp of an empty vector")
    m = np.max(x, axis=axis, keepdims=True)
    out = np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))
    return float(out) if out.ndim == 0 else out


def _check_pair(S, rho):
    S = np.asarray(S, dtype=np.float64)
    rho = np.asarray(rho, dtype=np.float64)
    if S.ndim < 2 or rho.shape != S.shape[:-1]:
        raise ShapeError(f"logits of shape {rho.shape} do not match similarities {S.shape}")
    return S, rho


def objective_value(S, rho, kind=ObjectiveKind.LOGSUMEXP, tau: float = 100.0):
    """Objective of the class scores under weights ``softmax(rho)``.

    Larger is better for every kind, so the update is always an ascent.
    Broadcasts over leading batch axes of ``S`` (..., K, C) and ``rho`` (..., K).
    """
    kind = ObjectiveKind(kind)
    S, rho = _check_pair(S, rho)
    s = weighted_scores(S, softmax(rho))
    if kind is ObjectiveKind.LOGSUMEXP:
        return logsumexp(tau * s)
    if kind is ObjectiveKind.MEAN:
        out = s.mean(axis=-1)
    elif kind is ObjectiveKind.MAX:
        out = s.max(axis=-1)
    else:
        logp = log_softmax(tau * s)
        out = np.sum(np.exp(logp) * logp, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _score_sensitivity(s: np.ndarray, kind: ObjectiveKind, tau: float) -> np.ndarray:
    """Derivative of the objective with respect to the class scores."""
    if kind is ObjectiveKind.LOGSUMEXP:
        return tau * softmax(tau * s)
    if kind is ObjectiveKind.MEAN:
        return np.full_like(s, 1.0 / s.shape[-1])
    if kind is ObjectiveKind.MAX:
        onehot = np.zeros_like(s)
        np.put_along_axis(onehot, np.argmax(s, axis=-1)[..., None], 1.0, axis=-1)
        return onehot
    # d(sum p log p)/dz_j = p_j (log p_j + H) with H the natural-log entropy
    logp = log_softmax(tau * s)
    p = np.exp(logp)
    H = -np.sum(p * logp, axis=-1, keepdims=True)
    return tau * p * (logp + H)


def grad_rho(S, rho, kind=ObjectiveKind.LOGSUMEXP, tau: float = 100.0) -> np.ndarray:
    """Closed-form gradient of :func:`objective_value` with respect to ``rho``.

    With ``u_i = sum_j (df/ds_j) S_ij`` the softmax Jacobian gives
    ``g_i = w_i (u_i - sum_k w_k u_k)``. The max objective uses the
    subgradient of the lowest-index maximiser.
    """
    kind = ObjectiveKind(kind)
    S, rho = _check_pair(S, rho)
    w = softmax(rho)
    s = weighted_scores(S, w)
    u = np.einsum("...kc,...c->...k", S, _score_sensitivity(s, kind, tau))
    return w * (u - np.sum(w * u, axis=-1, keepdims=True))


def grad_fd(S, rho, kind=ObjectiveKind.LOGSUMEXP, tau: float = 100.0, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient, one coordinate at a time."""
    if not h > 0:
        raise ConfigError(f"finite-difference step must be positive, got {h}")
    S, rho = _check_pair(S, rho)
    if rho.ndim != 1:
        raise ShapeError("grad_fd works on a single instance")
    g = np.empty_like(rho)
    for i in range(rho.size):
        step = np.zeros_like(rho)
        step[i] = h
        g[i] = (objective_value(S, rho + step, kind, tau) - objective_value(S, rho - step, kind, tau)) / (2 * h)
    return g


def autoclip_weights(S: np.ndarray, config: AutoclipConfig) -> dict:
    """Run the tuning step for a stack of similarity matrices (N, K, C)."""
    N, K, _ = S.shape
    rho0 = np.zeros((N, K))
    g = grad_rho(S, rho0, config.objective, config.tau)
    if config.fixed_alpha is not None:
        sol = {
            "alpha": np.full(N, float(config.fixed_alpha)),
            "entropy_bits": softmax_entropy_bits(config.fixed_alpha * g),
            "iterations": np.zeros(N, dtype=np.int64),
            "degenerate": np.ptp(g, axis=1) == 0,
            "converged": np.ones(N, dtype=bool),
        }
    else:
        sol = solve_step_sizes(g, config.beta, config.bisection)
    rho = sol["alpha"][:, None] * g
    w = softmax(rho)
    sol.update(rho=rho, weights=w, scores=weighted_scores(S, w), grad=g)
    return sol


@dataclass(frozen=True)
class AutoClip:
    """AutoCLIP as an aggregation method, usable next to the baselines."""

    config: AutoclipConfig = field(default_factory=AutoclipConfig)

    @property
    def name(self) -> str:
        return "autoclip"

    def aggregate(self, S) -> Aggregation:
        S = np.asarray(S, dtype=np.float64)
        single = S.ndim == 2
        out = autoclip_weights(S[None] if single else S, self.config)
        agg = Aggregation(
            out["scores"],
            weights=out["weights"],
            alpha=out["alpha"],
            entropy_bits=out["entropy_bits"],
            iterations=out["iterations"],
            degenerate=out["degenerate"],
        )
        return agg.first() if single else agg


def _results_from_similarities(S: np.ndarray, config: AutoclipConfig) -> list:
    out = autoclip_weights(S, config)
    K = S.shape[1]
    before = objective_value(S, np.zeros((S.shape[0], K)), config.objective, config.tau)
    after = objective_value(S, out["rho"], config.objective, config.tau)
    results = []
    for n in range(S.shape[0]):
        scores = out["scores"][n]
        w = out["weights"][n]
        step = StepSizeSolution(
            alpha=float(out["alpha"][n]),
            achieved_entropy_bits=float(out["entropy_bits"][n]),
            iterations=int(out["iterations"][n]),
            degenerate=bool(out["degenerate"][n]),
            converged=bool(out["converged"][n]),
        )
        pred = PredictionResult(
            predicted_class=predict(scores),
            scores=scores,
            weights=w,
            weight_entropy_bits=step.achieved_entropy_bits,
        )
        results.append(AutoclipResult(pred, out["rho"][n], step, float(before[n]), float(after[n])))
    return results


def autoclip_classify(desc, img, config: AutoclipConfig = AutoclipConfig()) -> AutoclipResult:
    """Classify one image with auto-tuned template weights."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 1:
        raise ShapeError(f"expected a single image embedding, got shape {img.shape}")
    # same stacked path as batch_classify so a batch of one matches bit-for-bit
    return _results_from_similarities(pairwise_similarities(desc, img[None]), config)[0]


def default_workers() -> int:
    env = os.environ.get("AUTOCLIP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"AUTOCLIP_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def batch_classify(desc, imgs: Sequence, config: AutoclipConfig = AutoclipConfig(), workers: Optional[int] = None) -> list:
    """Classify every image; output order follows input order.

    Any failure on an individual image is re-raised as :class:`SampleError`
    carrying that image's index.
    """
    desc = normalize(check_descriptors(desc))
    d = desc.shape[-1]
    rows = []
    for n, img in enumerate(imgs):
        try:
            img = np.asarray(img, dtype=np.float64)
            if img.shape != (d,):
                raise ShapeError(f"expected an embedding of length {d}, got shape {img.shape}")
            rows.append(normalize(img))
        except AutoclipError as exc:
            raise SampleError(n, exc) from exc
    if not rows:
        return []
    X = np.stack(rows)
    chunks = [X[i:i + CHUNK_SIZE] for i in range(0, len(X), CHUNK_SIZE)]

    def run(chunk):
        return _results_from_similarities(np.einsum("kcd,nd->nkc", desc, chunk), config)

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(chunks) == 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    return [r for part in parts for r in part]



def _concat(parts: list) -> Aggregation:
    fields = {}
    for name in Aggregation._fields:
        vals = [getattr(p, name) for p in parts]
        fields[name] = None if vals[0] is None else np.concatenate(vals)
    return Aggregation(**fields)


def aggregate_batch(desc, imgs, method, workers: Optional[int] = None) -> Aggregation:
    """Apply any aggregation method to a stack of images (N x d).

    Images are processed in fixed chunks of ``CHUNK_SIZE``, so the output is
    bit-identical for every worker count.
    """
    desc = normalize(check_descriptors(desc))
    X = np.asarray(imgs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != desc.shape[-1]:
        raise ShapeError(f"expected images of shape N x {desc.shape[-1]}, got {X.shape}")
    X = normalize(X)
    chunks = [X[i:i + CHUNK_SIZE] for i in range(0, len(X), CHUNK_SIZE)]
    if not chunks:
        raise ShapeError("no images to classify")

    def run(chunk):
        return method.aggregate(np.einsum("kcd,nd->nkc", desc, chunk))

    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(chunks) == 1:
        parts = [run(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    return _concat(parts)
