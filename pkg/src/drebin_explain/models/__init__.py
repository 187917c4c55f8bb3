"""Linear SVM, RBF SVM and random forest detectors sharing the ``f(x) >= 0`` rule."""
from .base import DecisionModel, TrainingInfo
from .forest import DecisionTree, RandomForestModel, train_random_forest
from .linear import LinearSvmModel, hinge_objective, train_linear_svm
from .rbf import RbfSvmModel, kernel_rbf, smo_solve, squared_distances, train_rbf_svm
from .serialize import model_from_json, model_id, model_to_json


def decision_score(model: DecisionModel, x) -> float:
    return model.score(x)


def gradient(model: DecisionModel, x):
    return model.gradient(x)


__all__ = [
    "DecisionModel", "TrainingInfo", "DecisionTree", "RandomForestModel", "LinearSvmModel",
    "RbfSvmModel", "train_linear_svm", "train_rbf_svm", "train_random_forest", "kernel_rbf",
    "smo_solve", "squared_distances", "hinge_objective", "decision_score", "gradient",
    "model_to_json", "model_from_json", "model_id",
]
