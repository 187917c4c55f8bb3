"""RBF-kernel SVM: kernel evaluation, an SMO dual solver and analytic gradients."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from ..errors import ConfigError, DimensionMismatch, InvalidGamma
from ..featurespace import LabeledDataset, SparseBinaryVector
from .base import DecisionModel, TrainingInfo, as_matrix, row_sq_norms
from .linear import per_sample_cost

TAU = 1e-12


def kernel_rbf(a: SparseBinaryVector, b: SparseBinaryVector, gamma: float) -> float:
    """``exp(-gamma ||a - b||^2)`` using ``||a-b||^2 = |a| + |b| - 2|a & b|``."""
    if not gamma > 0:
        raise InvalidGamma(f"gamma must be positive, got {gamma}")
    if a.dim != b.dim:
        raise DimensionMismatch(f"dims {a.dim} and {b.dim} differ")
    common = len(set(a.active).intersection(b.active))
    return float(np.exp(-gamma * (len(a) + len(b) - 2 * common)))


def squared_distances(A, B) -> np.ndarray:
    """Dense matrix of squared Euclidean distances between rows of ``A`` and ``B``."""
    cross = A @ B.T
    if sp.issparse(cross):
        cross = cross.toarray()
    d = row_sq_norms(A)[:, None] + row_sq_norms(B)[None, :] - 2.0 * np.asarray(cross)
    return np.maximum(d, 0.0)


@dataclass(eq=False)
class RbfSvmModel(DecisionModel):
    support_vectors: sp.csr_matrix
    beta: np.ndarray
    b: float
    gamma: float
    hyperparameters: dict = field(default_factory=dict)
    vocabulary_hash: str = ""
    info: TrainingInfo = field(default_factory=TrainingInfo, repr=False)

    model_type = "rbf_svm"
    differentiable = True

    def __post_init__(self):
        self.support_vectors = sp.csr_matrix(self.support_vectors, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.b = float(self.b)
        self.gamma = float(self.gamma)
        if not self.gamma > 0:
            raise InvalidGamma(f"gamma must be positive, got {self.gamma}")
        if self.beta.shape[0] != self.support_vectors.shape[0] or not self.beta.shape[0]:
            raise ValueError("need one nonzero coefficient per support vector")

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    @property
    def n_support(self) -> int:
        return self.beta.shape[0]

    def kernel_to_support(self, X) -> np.ndarray:
        return np.exp(-self.gamma * squared_distances(X, self.support_vectors))

    def decision_function(self, X) -> np.ndarray:
        X = as_matrix(X, self.dim)
        return self.kernel_to_support(X) @ self.beta + self.b

    def gradient(self, x) -> np.ndarray:
        return self.gradients(x)[0]

    def gradients(self, X) -> np.ndarray:
        """Rows of ``sum_i beta_i K(x_i, x) (-2 gamma)(x - x_i)``."""
        X = as_matrix(X, self.dim)
        weights = self.kernel_to_support(X) * self.beta  # n x n_sv
        pull = weights @ self.support_vectors  # sum_i w_i x_i, n x d
        pull = np.asarray(pull.toarray() if sp.issparse(pull) else pull)
        Xd = X.toarray() if sp.issparse(X) else X
        return -2.0 * self.gamma * (Xd * weights.sum(axis=1)[:, None] - pull)


@dataclass
class SmoResult:
    alpha: np.ndarray
    b: float
    iterations: int
    converged: bool
    gap: float


@numba.njit(cache=True, nogil=True)
def _smo(K, y, C, tol, max_iter, alpha, G):
    n = y.shape[0]
    it = 0
    gap = np.inf
    while it < max_iter:
        # most violating pair
        g_max = -np.inf
        g_min = np.inf
        i = -1
        j = -1
        for t in range(n):
            v = -y[t] * G[t]
            if (y[t] > 0 and alpha[t] < C[t]) or (y[t] < 0 and alpha[t] > 0):
                if v > g_max:
                    g_max = v
                    i = t
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C[t]):
                if v < g_min:
                    g_min = v
                    j = t
        gap = g_max - g_min
        if i < 0 or j < 0 or gap < tol:
            return it, gap
        it += 1
        ai, aj = alpha[i], alpha[j]
        Ci, Cj = C[i], C[j]
        if y[i] != y[j]:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            else:
                if ai < 0:
                    ai = 0.0
                    aj = -diff
            if diff > Ci - Cj:
                if ai > Ci:
                    ai = Ci
                    aj = Ci - diff
            else:
                if aj > Cj:
                    aj = Cj
                    ai = Cj + diff
        else:
            quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if quad <= 0:
                quad = TAU
            delta = (G[i] - G[j]) / quad
            s = ai + aj
            ai -= delta
            aj += delta
            if s > Ci:
                if ai > Ci:
                    ai = Ci
                    aj = s - Ci
            else:
                if aj < 0:
                    aj = 0.0
                    ai = s
            if s > Cj:
                if aj > Cj:
                    aj = Cj
                    ai = s - Cj
            else:
                if ai < 0:
                    ai = 0.0
                    aj = s
        di = ai - alpha[i]
        dj = aj - alpha[j]
        alpha[i] = ai
        alpha[j] = aj
        # G_t = sum_s y_t y_s K_ts alpha_s - 1
        for t in range(n):
            G[t] += y[t] * (y[i] * K[t, i] * di + y[j] * K[t, j] * dj)
    return it, gap


def _bias(alpha, G, y, C) -> float:
    yG = y * G
    upper = alpha >= C
    lower = alpha <= 0
    free = ~(upper | lower)
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2)
    return -rho


def smo_solve(K: np.ndarray, labels, C, tol: float = 1e-3, max_iter: int | None = None) -> SmoResult:
    """Maximise the SVM dual ``sum(a) - a'Qa/2``, ``0 <= a_i <= C_i``, ``sum a_i y_i = 0``.

    ``C`` is a scalar or per-sample array.  Stops when the maximal KKT
    violation ``max_up(-yG) - min_low(-yG)`` drops below ``tol``.
    """
    y = np.asarray(labels, dtype=np.float64)
    n = y.shape[0]
    costs = np.broadcast_to(np.asarray(C, dtype=np.float64), (n,)).copy()
    if max_iter is None:
        max_iter = max(1_000_000, 100 * n)
    alpha = np.zeros(n)
    G = -np.ones(n)
    it, gap = _smo(np.ascontiguousarray(K, dtype=np.float64), y, costs, tol, max_iter, alpha, G)
    return SmoResult(alpha, _bias(alpha, G, y, costs), int(it), bool(gap < tol), float(gap))


def train_rbf_svm(
    ds: LabeledDataset,
    C: float = 1.0,
    gamma: float = 1.0,
    *,
    tol: float = 1e-3,
    max_iter: int | None = None,
    class_weight: dict | None = None,
    kernel: np.ndarray | None = None,
    vocabulary_hash: str = "",
) -> RbfSvmModel:
    """Train an RBF SVM with SMO.

    ``kernel`` may carry a precomputed Gram matrix of ``ds`` (cross-validation
    reuses one distance matrix across the gamma grid).
    """
    if not C > 0:
        raise ConfigError(f"C must be positive, got {C}")
    if not gamma > 0:
        raise InvalidGamma(f"gamma must be positive, got {gamma}")
    ds.require_both_classes()
    if kernel is None:
        kernel = np.exp(-gamma * squared_distances(ds.X, ds.X))
    costs = per_sample_cost(ds.labels, C, class_weight)
    res = smo_solve(kernel, ds.labels, costs, tol, max_iter)
    if not res.converged:
        warnings.warn(
            f"SMO stopped after {res.iterations} iterations with KKT gap {res.gap:.3g}",
            RuntimeWarning,
        )
    sv = np.flatnonzero(res.alpha > 0)
    hyper = {"C": float(C), "gamma": float(gamma)}
    if class_weight:
        hyper["class_weight"] = {str(k): float(v) for k, v in class_weight.items()}
    info = TrainingInfo(res.converged, res.iterations, [res.gap])
    return RbfSvmModel(
        ds.X[sv], res.alpha[sv] * ds.labels[sv], res.b, gamma, hyper, vocabulary_hash, info
    )
