"""Helpers shared by the three classifier families."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionMismatch
from ..featurespace import LabeledDataset, SparseBinaryVector, rows_to_csr


def as_matrix(X, dim: int):
    """Coerce samples into a CSR matrix, or a dense 2-D array for real-valued input.

    Accepts a single ``SparseBinaryVector``, a sequence of them, a
    ``LabeledDataset``, a scipy sparse matrix or a 1-D/2-D array.
    """
    if isinstance(X, LabeledDataset):
        X = X.X
    elif isinstance(X, SparseBinaryVector):
        X = rows_to_csr([X], X.dim)
    elif isinstance(X, (list, tuple)) and X and isinstance(X[0], SparseBinaryVector):
        X = rows_to_csr(X, X[0].dim)
    elif sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
    else:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != dim:
        raise DimensionMismatch(f"input has {X.shape[1]} features, model expects {dim}")
    return X


def row_sq_norms(X) -> np.ndarray:
    if sp.issparse(X):
        return np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return np.einsum("ij,ij->i", X, X)


@dataclass
class TrainingInfo:
    converged: bool = True
    iterations: int = 0
    trace: list = field(default_factory=list)


class DecisionModel:
    """Common surface: ``decision_function`` on batches, ``score`` on one sample.

    ``f(x) >= 0`` means malware for every family.
    """

    model_type = "abstract"
    differentiable = False
    dim: int
    hyperparameters: dict
    vocabulary_hash: str

    def decision_function(self, X) -> np.ndarray:
        raise NotImplementedError

    def score(self, x) -> float:
        return float(self.decision_function(x)[0])

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def gradient(self, x) -> np.ndarray:
        from ..errors import NonDifferentiable

        raise NonDifferentiable(f"{self.model_type} has no analytic gradient; distill a surrogate")
