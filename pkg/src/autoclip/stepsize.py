"""Entropy-targeted step-size selection by bisection.

Both AutoCLIP (step size along the gradient) and the softmax-weighting
baseline (inverse temperature on the template row means) need the same
thing: a scalar ``alpha >= 0`` such that ``softmax(alpha * g)`` has a given
entropy. The entropy of ``softmax(alpha * g)`` is non-increasing in
``alpha``, so bisection on a fixed bracket is sufficient.

The batched solver treats every row independently; running a row alone or
inside any batch yields bit-identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError

# g whose spread, scaled by the bracket's upper end, stays below this is
# indistinguishable from a constant vector
_DEGENERATE_SPREAD = 1e-6


@dataclass(frozen=True)
class BisectionParams:
    lo: float = 0.0
    hi: float = 1e10
    maxiter: int = 100
    xtol: float = 1e-2
    rtol: float = 1e-2

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ConfigError(f"bisection bracket must satisfy lo < hi, got [{self.lo}, {self.hi}]")
        if self.lo < 0:
            raise ConfigError("bisection bracket must be non-negative")
        if self.maxiter < 1:
            raise ConfigError("maxiter must be at least 1")
        if self.xtol <= 0 or self.rtol <= 0:
            raise ConfigError("bisection tolerances must be positive")


@dataclass(frozen=True)
class StepSizeSolution:
    """Outcome of one step-size search.

    ``degenerate`` marks a constant direction (every alpha gives uniform
    weights); ``converged`` is False when the iteration budget ran out or
    the target entropy lies outside the bracket.
    """

    alpha: float
    achieved_entropy_bits: float
    iterations: int
    degenerate: bool
    converged: bool = True


def log_softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    zmax = np.max(z, axis=axis, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(z, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def softmax_entropy_bits(z, axis: int = -1) -> np.ndarray:
    """Entropy in bits of ``softmax(z)``, computed from log-probabilities."""
    logp = log_softmax(z, axis=axis)
    p = np.exp(logp)
    return -np.sum(p * logp, axis=axis) / math.log(2.0)


def check_beta(beta: float) -> float:
    beta = float(beta)
    if not 0.0 < beta <= 1.0:
        raise ConfigError(f"target entropy rate beta must lie in (0, 1], got {beta}")
    return beta


def solve_step_sizes(G, beta: float, params: BisectionParams = BisectionParams()):
    """Batched bisection over the rows of ``G`` (shape N x K).

    Returns a dict of arrays ``alpha``, ``entropy_bits``, ``iterations``,
    ``degenerate`` and ``converged``, each of length N.
    """
    beta = check_beta(beta)
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[1] < 1:
        raise ShapeError(f"expected an N x K array of directions, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        raise ConfigError("direction contains NaN or Inf")
    N, K = G.shape
    target = beta * math.log2(K)

    alpha = np.zeros(N)
    iterations = np.zeros(N, dtype=np.int64)
    converged = np.ones(N, dtype=bool)
    degenerate = np.ptp(G, axis=1) * params.hi <= _DEGENERATE_SPREAD

    if beta == 1.0:
        active = np.zeros(N, dtype=bool)
    else:
        active = ~degenerate
    idx = np.flatnonzero(active)

    if idx.size:
        f_hi = softmax_entropy_bits(params.hi * G[idx]) - target
        f_lo = softmax_entropy_bits(params.lo * G[idx]) - target
        # target entropy unreachable inside the bracket (e.g. tied maxima)
        above = f_hi > 0
        alpha[idx[above]] = params.hi
        converged[idx[above]] = False
        below = ~above & (f_lo <= 0)
        alpha[idx[below]] = params.lo
        idx = idx[~above & ~below]

    lo = np.full(idx.size, params.lo)
    hi = np.full(idx.size, params.hi)
    done = np.zeros(idx.size, dtype=bool)
    for _ in range(params.maxiter):
        live = np.flatnonzero(~done)
        if live.size == 0:
            break
        rows = idx[live]
        mid = lo[live] + (hi[live] - lo[live]) / 2
        fm = softmax_entropy_bits(mid[:, None] * G[rows]) - target
        iterations[rows] += 1
        pos = fm > 0
        lo[live] = np.where(pos, mid, lo[live])
        hi[live] = np.where(pos, hi[live], mid)
        centre = lo[live] + (hi[live] - lo[live]) / 2
        exact = fm == 0
        alpha[rows] = np.where(exact, mid, centre)
        done[live] = exact | (hi[live] - lo[live] <= params.xtol + params.rtol * np.abs(centre))
    converged[idx] = done

    entropy = softmax_entropy_bits(alpha[:, None] * G)
    return {
        "alpha": alpha,
        "entropy_bits": entropy,
        "iterations": iterations,
        "degenerate": degenerate,
        "converged": converged,
    }


def solve_step_size(g, beta: float, params: BisectionParams = BisectionParams()) -> StepSizeSolution:
    """Find ``alpha`` in the bracket so that ``softmax(alpha * g)`` keeps
    ``beta * log2(K)`` bits of entropy.

    ``beta == 1`` returns ``alpha = 0`` without iterating. A constant ``g``
    returns ``alpha = 0`` flagged as degenerate.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1:
        raise ShapeError(f"direction must be a vector, got shape {g.shape}")
    out = solve_step_sizes(g[None, :], beta, params)
    return StepSizeSolution(
        alpha=float(out["alpha"][0]),
        achieved_entropy_bits=float(out["entropy_bits"][0]),
        iterations=int(out["iterations"][0]),
        degenerate=bool(out["degenerate"][0]),
        converged=bool(out["converged"][0]),
    )
