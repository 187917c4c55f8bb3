"""Differentiable RBF-SVM surrogates for models without a usable gradient."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateRelabeling, NoDifferentiableRoute
from .evaluation import C_GRID, GAMMA_GRID, CVResult, cross_validate, train_family
from .featurespace import BENIGN, MALWARE, LabeledDataset
from .models import DecisionModel, RbfSvmModel, model_id
from .models.serialize import dumps, model_from_dict, model_to_dict

DEFAULT_GRID = {"C": C_GRID, "gamma": GAMMA_GRID}
# smoother surrogates first: small gamma, then small C
SURROGATE_TIE_ORDER = ("gamma", "C")


@dataclass
class Fidelity:
    train: float
    holdout: float | None = None
    n_train: int = 0
    n_holdout: int = 0


@dataclass(eq=False)
class SurrogateModel:
    approximator: RbfSvmModel
    target_id: str
    fidelity: Fidelity
    cv: CVResult | None = None

    @property
    def dim(self) -> int:
        return self.approximator.dim


def relabel(target: DecisionModel, X) -> np.ndarray:
    return np.where(target.decision_function(X) >= 0, MALWARE, BENIGN)


def agreement(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.asarray(a) == np.asarray(b)))


def _as_samples(inputs) -> tuple:
    if isinstance(inputs, LabeledDataset):
        return inputs.samples
    return tuple(inputs)


def distill(target: DecisionModel, inputs, holdout=(), grid: dict | None = None, *,
            folds: int = 3, seed: int = 0, workers: int = 1) -> SurrogateModel:
    """Fit an RBF SVM to ``target``'s own predictions on ``inputs``.

    Ground-truth labels never enter: a ``LabeledDataset`` passed as inputs
    contributes only its samples.  ``(C, gamma)`` are chosen by stratified
    CV agreement; the winner is refit on all relabeled inputs.
    """
    samples = _as_samples(inputs)
    if not samples:
        raise DataError("distillation needs at least one input sample")
    dim = samples[0].dim
    relabeled = LabeledDataset(samples, relabel(target, list(samples)), dim=dim)
    if np.all(relabeled.labels == relabeled.labels[0]):
        raise DegenerateRelabeling("target predicts a single class on every input")
    cv = cross_validate(relabeled, "rbf", grid or DEFAULT_GRID, folds, seed,
                        tie_order=SURROGATE_TIE_ORDER, workers=workers)
    approx = train_family("rbf", relabeled, cv.best, vocabulary_hash=target.vocabulary_hash)
    fid = Fidelity(agreement(approx.predict(relabeled), relabeled.labels), None, len(samples), 0)
    held = _as_samples(holdout)
    if held:
        fid.holdout = agreement(approx.predict(list(held)), relabel(target, list(held)))
        fid.n_holdout = len(held)
    return SurrogateModel(approx, model_id(target), fid, cv)


def explanation_model(model: DecisionModel, surrogate: SurrogateModel | None = None):
    """The model whose gradient explains ``model``: itself, or its surrogate."""
    if model.differentiable:
        return model
    if surrogate is None:
        raise NoDifferentiableRoute(
            f"{model.model_type} is not differentiable; distill a surrogate first"
        )
    if surrogate.target_id != model_id(model):
        raise NoDifferentiableRoute("surrogate was distilled from a different model")
    return surrogate.approximator


def surrogate_to_json(s: SurrogateModel) -> str:
    return dumps({
        "format": "drebin-explain/surrogate",
        "target": s.target_id,
        "fidelity": {
            "train": s.fidelity.train,
            "holdout": s.fidelity.holdout,
            "n_train": s.fidelity.n_train,
            "n_holdout": s.fidelity.n_holdout,
        },
        "selected": s.cv.best if s.cv else None,
        "approximator": model_to_dict(s.approximator),
    })


def surrogate_from_json(text: str) -> SurrogateModel:
    doc = json.loads(text)
    if doc.get("format") != "drebin-explain/surrogate":
        raise DataError("not a surrogate document")
    f = doc["fidelity"]
    return SurrogateModel(model_from_dict(doc["approximator"]), doc["target"],
                          Fidelity(f["train"], f["holdout"], f["n_train"], f["n_holdout"]))
