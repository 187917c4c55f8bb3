"""Diagnostics for how easily explanations translate into evasion."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRelevance, GroupMismatch, PreconditionViolation
from .explain import GlobalRelevanceMatrix, RelevanceVector, rank_features
from .featurespace import SparseBinaryVector

ADD = "add"
REMOVE = "remove"
MODES = ("add_only", "add_and_remove")


def relevance_concentration(r, k: int) -> float:
    """Share of the l1 mass carried by the ``k`` largest-magnitude entries."""
    if isinstance(r, RelevanceVector):
        if r.degenerate:
            raise DegenerateRelevance("relevance vector is degenerate")
        r = r.values
    mags = np.sort(np.abs(np.asarray(r, dtype=np.float64)))[::-1]
    total = mags.sum()
    if total == 0:
        raise DegenerateRelevance("relevance vector is all zeros")
    if k < 1:
        raise ValueError("k must be >= 1")
    return float(min(mags[:k].sum() / total, 1.0))


@dataclass
class EvasionResult:
    changes: list = field(default_factory=list)
    succeeded: bool = False
    initial_score: float = 0.0
    final_score: float = 0.0
    mode: str = "add_only"
    budget: int = 0
    sample: SparseBinaryVector | None = None

    @property
    def n_changes(self) -> int:
        return len(self.changes)

    def report(self, sample_id: str, vocab=None) -> dict:
        names = [vocab.descriptors[j].name if vocab is not None else j for j, _ in self.changes]
        return {
            "sample_id": sample_id,
            "mode": self.mode,
            "budget": self.budget,
            "succeeded": self.succeeded,
            "n_changes": self.n_changes,
            "initial_score": self.initial_score,
            "final_score": self.final_score,
            "changed_features": [
                {"index": int(j), "feature": n, "direction": d}
                for (j, d), n in zip(self.changes, names)
            ],
        }


def greedy_evasion(model, x: SparseBinaryVector, mode: str = "add_only", budget: int = 10,
                   handle=None) -> EvasionResult:
    """Flip one feature at a time in the direction that most lowers the handle's score.

    Each step re-evaluates the gradient of ``handle`` at the current point:
    adding feature ``j`` is predicted to change the score by ``grad_j``,
    removing it by ``-grad_j``.  The probe stops once ``model`` scores the
    point below zero, no feasible change lowers the predicted score, or
    ``budget`` changes have been made.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if budget < 1:
        raise ValueError("budget must be >= 1")
    handle = model if handle is None else handle
    start = model.score(x)
    if start < 0:
        raise PreconditionViolation(f"sample already scored benign ({start:.4g})")
    current, score, changes = x, start, []
    while len(changes) < budget:
        grad = handle.gradient(current)
        present = np.zeros(x.dim, dtype=bool)
        present[list(current.active)] = True
        # predicted score change of flipping each feature
        delta = np.where(present, -grad, grad)
        if mode == "add_only":
            delta[present] = np.inf
        touched = [j for j, _ in changes]
        delta[touched] = np.inf
        j = int(np.argmin(delta))
        if not delta[j] < 0:
            break
        changes.append((j, REMOVE if present[j] else ADD))
        current = current.with_flip(j)
        score = model.score(current)
        if score < 0:
            break
    return EvasionResult(changes, score < 0, start, score, mode, budget, current)


def minimum_evasion_changes(model, x: SparseBinaryVector, mode: str = "add_and_remove",
                            max_changes: int | None = None) -> int | None:
    """Exhaustive search for the fewest flips that make ``model`` score below zero.

    Exponential in the number of flippable features; meant as an oracle for
    small ``dim``.  Returns ``None`` when no subset within ``max_changes`` works.
    """
    from itertools import combinations

    flippable = list(range(x.dim)) if mode == "add_and_remove" else \
        [j for j in range(x.dim) if j not in set(x.active)]
    limit = len(flippable) if max_changes is None else min(max_changes, len(flippable))
    base = x.to_dense()
    for size in range(0, limit + 1):
        for subset in combinations(flippable, size):
            z = base.copy()
            z[list(subset)] = 1.0 - z[list(subset)]
            if model.decision_function(z)[0] < 0:
                return size
    return None


@dataclass
class GroupSimilarity:
    name: str
    cosine: float
    jaccard: float


def explanation_similarity(g1: GlobalRelevanceMatrix, g2: GlobalRelevanceMatrix,
                           k: int = 10) -> list[GroupSimilarity]:
    """Per-group cosine of mean relevance and Jaccard overlap of top-``k`` features."""
    if g1.names != g2.names or g1.dim != g2.dim:
        raise GroupMismatch("relevance matrices cover different groups or dimensions")
    if g1.vocabulary_hash and g2.vocabulary_hash and g1.vocabulary_hash != g2.vocabulary_hash:
        raise GroupMismatch("relevance matrices come from different vocabularies")
    out = []
    for a, b in zip(g1.groups, g2.groups):
        na, nb = np.linalg.norm(a.mean), np.linalg.norm(b.mean)
        if na == 0 or nb == 0:
            cos = 1.0 if na == nb else 0.0
        else:
            cos = float(a.mean @ b.mean / (na * nb))
        ta, tb = set(rank_features(a.mean, k).tolist()), set(rank_features(b.mean, k).tolist())
        jac = len(ta & tb) / len(ta | tb) if ta | tb else 1.0
        out.append(GroupSimilarity(a.name, cos, jac))
    return out


def probe_report_json(reports: list[dict]) -> str:
    return json.dumps(reports, indent=1, sort_keys=True) + "\n"
