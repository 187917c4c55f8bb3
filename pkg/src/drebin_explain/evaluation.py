"""Experimental protocol: stratified splits, grid-search CV, ROC curves and their averages."""
from __future__ import annotations

import itertools
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyClass
from .featurespace import BENIGN, MALWARE, LabeledDataset
from .models import (
    DecisionModel,
    squared_distances,
    train_linear_svm,
    train_random_forest,
    train_rbf_svm,
)

C_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)
GAMMA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)
N_TREES_GRID = (5, 10, 15, 20, 25, 30)

FAMILIES = ("linear", "rbf", "forest")
DEFAULT_GRIDS = {
    "linear": {"C": C_GRID},
    "rbf": {"C": C_GRID, "gamma": GAMMA_GRID},
    "forest": {"n_trees": N_TREES_GRID},
}
TIE_ORDER = ("C", "gamma", "n_trees")


def derive_seed(seed: int, *names) -> int:
    """Independent, reproducible sub-seed for a named stream (``"split"``, ``"cv"``, ...)."""
    key = tuple(zlib.crc32(str(n).encode()) for n in names)
    return int(np.random.SeedSequence(int(seed), spawn_key=key).generate_state(1)[0])


# -- ROC ---------------------------------------------------------------------

@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self) -> list:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def tpr_at(self, grid) -> np.ndarray:
        """Stepwise interpolation: best TPR reached at FPR <= each grid value."""
        grid = np.asarray(grid, dtype=np.float64)
        pos = np.searchsorted(self.fpr, grid, side="right") - 1
        best = np.maximum.accumulate(self.tpr)
        return np.where(pos >= 0, best[np.clip(pos, 0, None)], 0.0)

    def to_csv(self) -> str:
        lines = ["fpr,tpr"] + [f"{f!r},{t!r}" for f, t in self.points]
        return "\n".join(lines) + "\n"


def _trapezoid(x, y) -> float:
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) / 2.0))


def roc(scores, labels) -> RocCurve:
    """ROC by a descending threshold sweep; equal scores move together."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == MALWARE
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if not n_pos or not n_neg:
        raise EmptyClass("ROC needs both classes")
    order = np.argsort(-scores, kind="mergesort")
    s, p = scores[order], pos[order]
    tp, fp = np.cumsum(p), np.cumsum(~p)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.shape[0] - 1]
    fpr = np.r_[0.0, fp[last] / n_neg]
    tpr = np.r_[0.0, tp[last] / n_pos]
    return RocCurve(fpr, tpr, _trapezoid(fpr, tpr))


def default_fpr_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


def average_roc(curves, fpr_grid=None) -> RocCurve:
    """Vertical averaging of stepwise-interpolated curves on a fixed FPR grid."""
    if not curves:
        raise ValueError("need at least one curve")
    grid = default_fpr_grid() if fpr_grid is None else np.asarray(fpr_grid, dtype=np.float64)
    if np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > 1:
        raise ValueError("FPR grid must be sorted within [0, 1]")
    tpr = np.mean([c.tpr_at(grid) for c in curves], axis=0)
    fpr = grid
    if not (fpr[0] == 0.0 and tpr[0] == 0.0):
        fpr, tpr = np.r_[0.0, fpr], np.r_[0.0, tpr]
    if fpr[-1] != 1.0:
        fpr, tpr = np.r_[fpr, 1.0], np.r_[tpr, 1.0]
    return RocCurve(fpr, tpr, _trapezoid(fpr, tpr))


def detection_rate_at(curve: RocCurve, max_fpr: float = 0.01) -> float:
    return float(curve.tpr_at([max_fpr])[0])


# -- splits ------------------------------------------------------------------

def stratified_folds(labels, k: int, seed: int) -> list[np.ndarray]:
    """Assign each class's shuffled indices round-robin to ``k`` folds."""
    if k < 2:
        raise ConfigError("need at least 2 folds")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    offset = 0
    for cls in (BENIGN, MALWARE):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        for pos, i in enumerate(idx):
            folds[(pos + offset) % k].append(i)
        offset += len(idx)
    return [np.sort(np.array(f, dtype=np.int64)) for f in folds]


def stratified_split(labels, train_size, seed: int) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_train = int(round(train_size * n)) if train_size < 1 else int(train_size)
    if not 0 < n_train < n:
        raise ConfigError(f"train_size {train_size} leaves no train or test data")
    rng = np.random.default_rng(seed)
    train = []
    for cls in (BENIGN, MALWARE):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        train.append(idx[: int(round(len(idx) * n_train / n))])
    train = np.sort(np.concatenate(train))
    test = np.setdiff1d(np.arange(n), train)
    return train, test


# -- training by family ------------------------------------------------------

def train_family(family: str, ds: LabeledDataset, params: dict, seed: int = 0, *,
                 kernel=None, vocabulary_hash: str = "") -> DecisionModel:
    if family == "linear":
        return train_linear_svm(ds, params["C"], seed=seed, vocabulary_hash=vocabulary_hash,
                                class_weight=params.get("class_weight"))
    if family == "rbf":
        return train_rbf_svm(ds, params["C"], params["gamma"], kernel=kernel,
                             vocabulary_hash=vocabulary_hash,
                             class_weight=params.get("class_weight"))
    if family == "forest":
        return train_random_forest(ds, int(params["n_trees"]), seed,
                                   vocabulary_hash=vocabulary_hash)
    raise ConfigError(f"unknown model family {family!r}")


def grid_points(grid: dict, tie_order=TIE_ORDER) -> list[dict]:
    """Cartesian product of the grid, sorted so earlier points win ties."""
    for key, values in grid.items():
        if not len(values):
            raise ConfigError(f"empty grid for {key}")
        if any(not v > 0 for v in values):
            raise ConfigError(f"grid values for {key} must be positive")
    keys = list(grid)
    points = [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]
    rank = {k: i for i, k in enumerate(tie_order)}
    order = sorted(keys, key=lambda k: rank.get(k, len(rank)))
    return sorted(points, key=lambda p: tuple(p[k] for k in order))


@dataclass
class CVResult:
    best: dict
    points: list
    fold_scores: np.ndarray  # grid points x folds

    @property
    def mean_scores(self) -> np.ndarray:
        return self.fold_scores.mean(axis=1)


def _metric(name, model, ds) -> float:
    if name == "accuracy":
        return float(np.mean(model.predict(ds) == ds.labels))
    if name == "dr_at_fpr":
        return detection_rate_at(roc(model.decision_function(ds), ds.labels), 0.01)
    raise ConfigError(f"unknown CV metric {name!r}")


def cross_validate(ds: LabeledDataset, family: str, grid: dict | None = None, folds: int = 3,
                   seed: int = 0, *, metric: str = "accuracy", tie_order=TIE_ORDER,
                   workers: int = 1) -> CVResult:
    """Stratified k-fold grid search maximising the mean held-out ``metric``.

    Ties go to the earliest grid point under ``tie_order`` (smallest values).
    """
    grid = DEFAULT_GRIDS[family] if grid is None else grid
    points = grid_points(grid, tie_order)
    fold_idx = stratified_folds(ds.labels, folds, derive_seed(seed, "folds"))
    splits = []
    for f, test in enumerate(fold_idx):
        train = np.setdiff1d(np.arange(len(ds)), test)
        tr, te = ds.subset(train), ds.subset(test)
        if not (np.any(tr.labels == BENIGN) and np.any(tr.labels == MALWARE)):
            raise EmptyClass(f"fold {f} training part lacks a class; dataset too small")
        splits.append((train, tr, te))

    sqdist = squared_distances(ds.X, ds.X) if family == "rbf" else None

    def evaluate(p_index):
        p = points[p_index]
        kernel = np.exp(-p["gamma"] * sqdist) if sqdist is not None else None
        row = []
        for f, (train, tr, te) in enumerate(splits):
            k = kernel[np.ix_(train, train)] if kernel is not None else None
            model = train_family(family, tr, p, derive_seed(seed, "model", f), kernel=k)
            row.append(_metric(metric, model, te))
        return row

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rows = list(pool.map(evaluate, range(len(points))))
    else:
        rows = [evaluate(i) for i in range(len(points))]
    scores = np.array(rows, dtype=np.float64)
    means = scores.mean(axis=1)
    best = int(np.flatnonzero(means == means.max())[0])
    return CVResult(dict(points[best]), points, scores)


# -- full protocol -----------------------------------------------------------

@dataclass
class ProtocolConfig:
    n_repetitions: int = 5
    train_size: float = 0.5
    cv_folds: int = 3
    families: tuple = FAMILIES
    grids: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_GRIDS.items()})
    metric: str = "accuracy"
    fpr_grid_points: int = 101
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_repetitions < 1:
            raise ConfigError("n_repetitions must be >= 1")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if not self.train_size > 0:
            raise ConfigError("train_size must be positive")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown model family {fam!r}")
            for key, values in self.grids.get(fam, {}).items():
                if any(not v > 0 for v in values):
                    raise ConfigError(f"grid values for {fam}.{key} must be positive")


@dataclass
class Repetition:
    train_idx: np.ndarray
    test_idx: np.ndarray
    cv: dict
    models: dict
    rocs: dict


@dataclass
class ProtocolResult:
    config: ProtocolConfig
    repetitions: list
    average: dict

    def summary(self) -> dict:
        return {
            fam: {
                "auc": self.average[fam].auc,
                "auc_per_repetition": [r.rocs[fam].auc for r in self.repetitions],
                "hyperparameters": [r.cv[fam].best for r in self.repetitions],
                "n_repetitions": self.config.n_repetitions,
                "seed": self.config.seed,
            }
            for fam in self.config.families
        }


def run_protocol(ds: LabeledDataset, config: ProtocolConfig | None = None,
                 vocabulary_hash: str = "") -> ProtocolResult:
    """Repeated stratified train/test splits; CV-tune, train and score every family."""
    config = config or ProtocolConfig()
    ds.require_both_classes()
    reps = []
    for r in range(config.n_repetitions):
        train_idx, test_idx = stratified_split(ds.labels, config.train_size,
                                               derive_seed(config.seed, "split", r))
        train, test = ds.subset(train_idx), ds.subset(test_idx)
        cvs, models, rocs = {}, {}, {}
        for fam in config.families:
            cvs[fam] = cross_validate(train, fam, config.grids.get(fam, DEFAULT_GRIDS[fam]),
                                      config.cv_folds, derive_seed(config.seed, "cv", r),
                                      metric=config.metric, workers=config.workers)
            models[fam] = train_family(fam, train, cvs[fam].best,
                                       derive_seed(config.seed, "forest", r),
                                       vocabulary_hash=vocabulary_hash)
            rocs[fam] = roc(models[fam].decision_function(test), test.labels)
        reps.append(Repetition(train_idx, test_idx, cvs, models, rocs))
    grid = default_fpr_grid(config.fpr_grid_points)
    average = {fam: average_roc([rep.rocs[fam] for rep in reps], grid) for fam in config.families}
    return ProtocolResult(config, reps, average)
