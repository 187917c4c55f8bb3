"""Linear SVM trained by dual coordinate descent on the hinge loss."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from ..errors import ConfigError
from ..featurespace import LabeledDataset
from .base import DecisionModel, TrainingInfo, as_matrix


@dataclass(eq=False)
class LinearSvmModel(DecisionModel):
    w: np.ndarray
    b: float
    hyperparameters: dict = field(default_factory=dict)
    vocabulary_hash: str = ""
    info: TrainingInfo = field(default_factory=TrainingInfo, repr=False)

    model_type = "linear_svm"
    differentiable = True

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = float(self.b)
        if not np.all(np.isfinite(self.w)) or not np.isfinite(self.b):
            raise ValueError("non-finite linear SVM parameters")

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    def decision_function(self, X) -> np.ndarray:
        X = as_matrix(X, self.dim)
        return np.asarray(X @ self.w).ravel() + self.b

    def gradient(self, x) -> np.ndarray:
        return self.w.copy()

    def gradients(self, X) -> np.ndarray:
        X = as_matrix(X, self.dim)
        return np.tile(self.w, (X.shape[0], 1))


@numba.njit(cache=True, nogil=True)
def _dcd_epoch(indptr, indices, data, y, C, qii, order, alpha, w, bias):
    # bias[0] is the weight of an implicit constant feature equal to 1
    for i in order:
        lo, hi = indptr[i], indptr[i + 1]
        f = bias[0]
        for p in range(lo, hi):
            f += w[indices[p]] * data[p]
        G = y[i] * f - 1.0
        a = alpha[i]
        if a <= 0.0:
            pg = min(G, 0.0)
        elif a >= C[i]:
            pg = max(G, 0.0)
        else:
            pg = G
        if pg != 0.0:
            a_new = min(max(a - G / qii[i], 0.0), C[i])
            d = (a_new - a) * y[i]
            alpha[i] = a_new
            for p in range(lo, hi):
                w[indices[p]] += d * data[p]
            bias[0] += d


def hinge_objective(w, b, X, y, C) -> float:
    """``0.5 ||w||^2 + sum_i C_i max(0, 1 - y_i f(x_i))``."""
    margins = y * (np.asarray(X @ w).ravel() + b)
    return 0.5 * float(w @ w) + float(np.sum(C * np.maximum(0.0, 1.0 - margins)))


def per_sample_cost(labels, C, class_weight=None) -> np.ndarray:
    costs = np.full(labels.shape[0], float(C))
    if class_weight:
        for label, weight in class_weight.items():
            costs[labels == int(label)] *= float(weight)
    return costs


def train_linear_svm(
    ds: LabeledDataset,
    C: float = 1.0,
    *,
    max_epochs: int = 1000,
    tol: float = 1e-6,
    seed: int = 0,
    class_weight: dict | None = None,
    vocabulary_hash: str = "",
) -> LinearSvmModel:
    """Fit ``f(x) = w.x + b`` by dual coordinate descent.

    The bias is learned as the weight of a constant unit feature, as
    liblinear does.  Sample order is reshuffled every epoch from ``seed``;
    training stops once the dual objective improves by less than
    ``tol`` (relative) over an epoch.  Hitting ``max_epochs`` emits a
    ``RuntimeWarning`` and sets ``info.converged = False``.
    """
    if not C > 0:
        raise ConfigError(f"C must be positive, got {C}")
    ds.require_both_classes()
    X = ds.X
    y = ds.labels.astype(np.float64)
    costs = per_sample_cost(ds.labels, C, class_weight)
    qii = np.asarray(X.multiply(X).sum(axis=1)).ravel() + 1.0

    alpha = np.zeros(len(ds))
    w = np.zeros(ds.dim)
    bias = np.zeros(1)
    rng = np.random.default_rng(seed)
    info = TrainingInfo(converged=False)
    dual_prev = 0.0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(ds))
        _dcd_epoch(X.indptr, X.indices, X.data, y, costs, qii, order, alpha, w, bias)
        dual = float(alpha.sum() - 0.5 * (w @ w + bias[0] ** 2))
        primal = hinge_objective(w, bias[0], X, y, costs)
        info.trace.append((dual, primal))
        info.iterations = epoch
        if dual - dual_prev <= tol * max(abs(dual), 1e-12):
            info.converged = True
            break
        dual_prev = dual
    if not info.converged:
        warnings.warn(f"linear SVM did not converge in {max_epochs} epochs", RuntimeWarning)
    hyper = {"C": float(C)}
    if class_weight:
        hyper["class_weight"] = {str(k): float(v) for k, v in class_weight.items()}
    return LinearSvmModel(w, float(bias[0]), hyper, vocabulary_hash, info)
