"""scikit-learn compatible zero-shot classifier over precomputed embeddings.

``fit`` takes the K x C x d tensor of encoded class descriptors (one row per
prompt template, or per exemplar in few-shot use); ``predict`` and
``decision_function`` take N x d image embeddings.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .aggregators import Max, Mean, SoftmaxWeighting, TopR
from .embedding import normalize
from .engine import AutoClip, AutoclipConfig, aggregate_batch
from .exceptions import ConfigError, ShapeError
from .stepsize import BisectionParams, softmax

METHODS = ("mean", "max", "topr", "softmax", "autoclip")


def make_method(
    method: str = "autoclip",
    *,
    beta: float = 0.85,
    tau: float = 100.0,
    objective: str = "logsumexp",
    topr=None,
    fixed_alpha=None,
    bisection: BisectionParams = BisectionParams(),
):
    """Build an aggregation method object from flat, CLI-style settings."""
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    if fixed_alpha is not None and method != "autoclip":
        raise ConfigError("fixed_alpha only applies to method 'autoclip'")
    if topr is not None and method != "topr":
        raise ConfigError("topr only applies to method 'topr'")
    if method == "mean":
        return Mean()
    if method == "max":
        return Max()
    if method == "topr":
        if topr is None:
            raise ConfigError("method 'topr' needs R (topr=...)")
        return TopR(int(topr))
    if method == "softmax":
        return SoftmaxWeighting(beta, bisection)
    return AutoClip(AutoclipConfig(beta=beta, tau=tau, objective=objective, bisection=bisection, fixed_alpha=fixed_alpha))


class ZeroShotClassifier(ClassifierMixin, BaseEstimator):
    """Zero-shot classifier with pluggable template aggregation.

    Parameters
    ----------
    method : {"autoclip", "mean", "max", "topr", "softmax"}, default="autoclip"
        How the K x C descriptor-image similarities are reduced to class
        scores.
    beta : float, default=0.85
        Target entropy rate for "autoclip" and "softmax": the tuned weights
        keep ``beta * log2(K)`` bits of entropy.
    tau : float, default=100.0
        Logit scale applied to class scores inside the AutoCLIP objective and
        in :meth:`predict_proba`.
    objective : {"logsumexp", "entropy", "mean", "max"}, default="logsumexp"
        Objective whose gradient sets the AutoCLIP template weights.
    topr : int, optional
        Number of templates kept by the "topr" method.
    fixed_alpha : float, optional
        Use this AutoCLIP step size instead of solving for ``beta``.
    maxiter, xtol, rtol : bisection settings for the step-size search.
    n_jobs : int, optional
        Worker threads; defaults to ``AUTOCLIP_THREADS`` or the core count.
        Results do not depend on it.

    Attributes
    ----------
    descriptors_ : ndarray of shape (K, C, d)
        Unit-normalized descriptor embeddings.
    classes_ : ndarray of shape (C,)
    n_features_in_ : int
    """

    def __init__(
        self,
        method="autoclip",
        beta=0.85,
        tau=100.0,
        objective="logsumexp",
        topr=None,
        fixed_alpha=None,
        maxiter=100,
        xtol=1e-2,
        rtol=1e-2,
        n_jobs=None,
    ):
        self.method = method
        self.beta = beta
        self.tau = tau
        self.objective = objective
        self.topr = topr
        self.fixed_alpha = fixed_alpha
        self.maxiter = maxiter
        self.xtol = xtol
        self.rtol = rtol
        self.n_jobs = n_jobs

    def _method(self):
        return make_method(
            self.method,
            beta=self.beta,
            tau=self.tau,
            objective=self.objective,
            topr=self.topr,
            fixed_alpha=self.fixed_alpha,
            bisection=BisectionParams(maxiter=self.maxiter, xtol=self.xtol, rtol=self.rtol),
        )

    def fit(self, descriptors, y=None, classes=None):
        """Store the descriptor tensor; ``classes`` optionally names the C classes."""
        desc = check_array(descriptors, allow_nd=True, dtype=np.float64)
        if desc.ndim != 3:
            raise ShapeError(f"descriptors must be K x C x d, got shape {desc.shape}")
        self._method()  # validate hyper-parameters early
        if self.method == "topr" and not 1 <= self.topr <= desc.shape[0]:
            raise ConfigError(f"topr={self.topr} outside [1, K={desc.shape[0]}]")
        self.descriptors_ = normalize(desc)
        C = desc.shape[1]
        self.classes_ = np.arange(C) if classes is None else np.asarray(classes)
        if len(self.classes_) != C:
            raise ShapeError(f"got {len(self.classes_)} class names for C={C}")
        self.n_features_in_ = desc.shape[2]
        return self

    def _check_images(self, X):
        check_is_fitted(self)
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} features, descriptors have {self.n_features_in_}")
        return X

    def aggregate(self, X):
        """Full per-sample output: scores, weights, step sizes and entropies."""
        X = self._check_images(X)
        return aggregate_batch(self.descriptors_, X, self._method(), self.n_jobs)

    def decision_function(self, X):
        return self.aggregate(X).scores

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]

    def predict_proba(self, X):
        return softmax(self.tau * self.decision_function(X))

    def template_weights(self, X):
        """Per-sample weights over the K templates (N x K).

        Mean aggregation reports uniform weights; max aggregation has no
        single weight vector and raises.
        """
        agg = self.aggregate(X)
        if agg.weights is not None:
            return agg.weights
        if self.method == "mean":
            K = self.descriptors_.shape[0]
            return np.full((agg.scores.shape[0], K), 1.0 / K)
        raise ConfigError(f"method {self.method!r} does not define template weights")
