"""Randomised comparison of the closed-form gradient with finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedding import pairwise_similarities
from .engine import ObjectiveKind, grad_fd, grad_rho

TAUS = (1.0, 10.0, 100.0)
KINDS = tuple(ObjectiveKind)


@dataclass(frozen=True)
class GradInstance:
    S: np.ndarray
    rho: np.ndarray
    kind: ObjectiveKind
    tau: float


def random_instance(seed: int, trial: int) -> GradInstance:
    """Instance ``trial`` of the stream keyed by ``seed``.

    K in [2, 20], C in [2, 10], d in [8, 64], tau from {1, 10, 100}; the
    objective cycles through all kinds so every batch of four covers each.
    """
    rng = np.random.default_rng([seed, trial])
    K = int(rng.integers(2, 21))
    C = int(rng.integers(2, 11))
    d = int(rng.integers(8, 65))
    tau = float(rng.choice(TAUS))
    desc = rng.standard_normal((K, C, d))
    img = rng.standard_normal(d)
    rho = rng.standard_normal(K)
    return GradInstance(pairwise_similarities(desc, img), rho, KINDS[trial % len(KINDS)], tau)


def deviation(inst: GradInstance, h: float = 1e-5) -> float:
    exact = grad_rho(inst.S, inst.rho, inst.kind, inst.tau)
    approx = grad_fd(inst.S, inst.rho, inst.kind, inst.tau, h)
    return float(np.max(np.abs(exact - approx)))


def run_gradcheck(trials: int = 100, seed: int = 0, tolerance: float = 1e-4, h: float = 1e-5) -> dict:
    devs = [deviation(random_instance(seed, t), h) for t in range(trials)]
    failures = [t for t, dev in enumerate(devs) if not dev <= tolerance]
    return {
        "trials": trials,
        "seed": seed,
        "tolerance": tolerance,
        "max_deviation": max(devs) if devs else 0.0,
        "deviations": devs,
        "failures": failures,
    }
