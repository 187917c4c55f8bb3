"""Local and global gradient-based feature relevance.

The local relevance of sample ``x`` under a differentiable score ``f`` is
the gradient projected onto the sample, ``nu = grad f(x) * x``, scaled to
unit l1 norm.  Only features present in ``x`` can therefore be relevant.
Positive relevance pushes towards malware, negative towards benign.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, EmptyGroup
from .featurespace import (
    BENIGN,
    CATCH_ALL_SET,
    MALWARE,
    SET_IDS,
    FeatureVocabulary,
    LabeledDataset,
    feature_frequencies,
)
from .models.base import as_matrix


@dataclass
class RelevanceVector:
    values: np.ndarray
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _project(h, X):
    X = as_matrix(X, h.dim)
    grads = h.gradients(X)
    dense = X.toarray() if sp.issparse(X) else X
    return grads * dense


def local_relevance(h, x) -> RelevanceVector:
    if getattr(x, "dim", h.dim) != h.dim:
        raise DimensionMismatch(f"sample has dim {x.dim}, model expects {h.dim}")
    nu = _project(h, x)[0]
    norm = np.abs(nu).sum()
    if norm == 0:
        return RelevanceVector(np.zeros_like(nu), True)
    return RelevanceVector(nu / norm, False)


def local_relevances(h, X, batch: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Relevance rows for many samples plus a mask of degenerate rows."""
    X = as_matrix(X, h.dim)
    out = np.zeros(X.shape)
    for start in range(0, X.shape[0], batch):
        out[start:start + batch] = _project(h, X[start:start + batch])
    norms = np.abs(out).sum(axis=1)
    degenerate = norms == 0
    out[~degenerate] /= norms[~degenerate, None]
    return out, degenerate


# -- ranking -----------------------------------------------------------------

def rank_features(values: np.ndarray, k: int | None = None) -> np.ndarray:
    """Indices of nonzero entries by decreasing magnitude, ties by ascending index."""
    nz = np.flatnonzero(values)
    order = nz[np.lexsort((nz, -np.abs(values[nz])))]
    return order if k is None else order[:k]


@dataclass
class RankedEntry:
    rank: int
    index: int
    set_id: str
    name: str
    relevance: float
    p_benign: float | None
    p_malware: float | None


@dataclass
class RankedExplanation:
    entries: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def indices(self) -> list[int]:
        return [e.index for e in self.entries]

    def rows(self) -> list[dict]:
        def pct(v):
            return None if v is None else 100.0 * v

        return [
            {"rank": e.rank, "set": e.set_id, "feature": e.name,
             "relevance": e.relevance, "relevance_pct": pct(e.relevance),
             "p_benign": e.p_benign, "p_benign_pct": pct(e.p_benign),
             "p_malware": e.p_malware, "p_malware_pct": pct(e.p_malware)}
            for e in self.entries
        ]

    def to_csv(self) -> str:
        cols = ["rank", "set", "feature", "relevance", "relevance_pct",
                "p_benign", "p_benign_pct", "p_malware", "p_malware_pct"]
        buf = io.StringIO()
        writer = csv.DictWriter(buf, cols, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: "" if v is None else repr(v) if isinstance(v, float) else v
                             for k, v in row.items()})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(self.rows(), indent=1) + "\n"


def top_k(r: RelevanceVector, vocab: FeatureVocabulary, ds: LabeledDataset | None = None,
          k: int = 10, frequencies=None) -> RankedExplanation:
    """The ``k`` most influential features of ``r`` with their class presence rates."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if r.degenerate:
        return RankedExplanation([])
    if frequencies is None and ds is not None:
        frequencies = feature_frequencies(ds)
    entries = []
    for rank, j in enumerate(rank_features(r.values, k), start=1):
        desc = vocab.descriptors[j]
        pb = float(frequencies[0][j]) if frequencies is not None else None
        pm = float(frequencies[1][j]) if frequencies is not None else None
        entries.append(RankedEntry(rank, int(j), desc.set_id, desc.name, float(r.values[j]), pb, pm))
    return RankedExplanation(entries)


# -- global ------------------------------------------------------------------

@dataclass
class RelevanceGroup:
    name: str
    n_samples: int
    n_degenerate: int
    mean: np.ndarray


@dataclass
class GlobalRelevanceMatrix:
    groups: list
    dim: int
    vocabulary_hash: str = ""

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.groups]

    def matrix(self) -> np.ndarray:
        return np.vstack([g.mean for g in self.groups])

    def group(self, name: str) -> RelevanceGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)


def group_members(ds: LabeledDataset, grouping: str = "label",
                  max_families: int | None = None) -> list[tuple[str, np.ndarray]]:
    """Benign, malware, then (for ``"family"``) families by descending size."""
    if grouping not in ("label", "family"):
        raise ValueError(f"unknown grouping {grouping!r}")
    groups = [("benign", np.flatnonzero(ds.labels == BENIGN)),
              ("malware", np.flatnonzero(ds.labels == MALWARE))]
    if grouping == "family":
        fams = np.array(ds.families, dtype=object)
        names = sorted({f for f, y in zip(ds.families, ds.labels) if f and y == MALWARE})
        sized = [(f, np.flatnonzero((fams == f) & (ds.labels == MALWARE))) for f in names]
        sized.sort(key=lambda t: (-len(t[1]), t[0]))
        groups += sized[:max_families] if max_families else sized
    return groups


def global_relevance(h, ds: LabeledDataset, grouping: str = "label",
                     max_families: int | None = None, vocabulary_hash: str = "") -> GlobalRelevanceMatrix:
    """Mean non-degenerate local relevance per group of samples."""
    values, degenerate = local_relevances(h, ds)
    groups = []
    for name, members in group_members(ds, grouping, max_families):
        keep = members[~degenerate[members]]
        if not len(keep):
            raise EmptyGroup(f"group {name!r} has no non-degenerate samples")
        mean = values[keep].sum(axis=0) / len(keep)
        groups.append(RelevanceGroup(name, len(members), len(members) - len(keep), mean))
    return GlobalRelevanceMatrix(groups, ds.dim, vocabulary_hash)


def set_columns(vocab: FeatureVocabulary) -> list[str]:
    cols = list(SET_IDS)
    if any(d.set_id == CATCH_ALL_SET for d in vocab.descriptors):
        cols.append(CATCH_ALL_SET)
    return cols


def compact_view(g: GlobalRelevanceMatrix, vocab: FeatureVocabulary,
                 aggregation: str = "mean") -> tuple[list[str], np.ndarray]:
    """Aggregate each group's mean relevance within each feature set."""
    if aggregation not in ("mean", "sum"):
        raise ValueError(f"unknown aggregation {aggregation!r}")
    if vocab.dim != g.dim:
        raise DimensionMismatch("vocabulary does not match relevance dimension")
    cols = set_columns(vocab)
    M = g.matrix()
    out = np.zeros((M.shape[0], len(cols)))
    for c, set_id in enumerate(cols):
        mask = vocab.set_ids == set_id
        if mask.any():
            out[:, c] = M[:, mask].sum(axis=1)
            if aggregation == "mean":
                out[:, c] /= mask.sum()
    return cols, out


def fine_grained_view(g: GlobalRelevanceMatrix, vocab: FeatureVocabulary | None = None,
                      per_group_top: int = 5) -> tuple[list[int], np.ndarray]:
    """Union of each group's top features, in order of first selection."""
    if per_group_top < 1:
        raise ValueError("per_group_top must be >= 1")
    selected, seen = [], set()
    for grp in g.groups:
        for j in rank_features(grp.mean, per_group_top):
            if int(j) not in seen:
                seen.add(int(j))
                selected.append(int(j))
    M = g.matrix()
    return selected, M[:, selected] if selected else np.zeros((M.shape[0], 0))


def matrix_to_csv(g: GlobalRelevanceMatrix, columns: list[str], values: np.ndarray) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["group", "n_samples", "n_degenerate"] + list(columns))
    for grp, row in zip(g.groups, values):
        writer.writerow([grp.name, grp.n_samples, grp.n_degenerate] + [repr(float(v)) for v in row])
    return buf.getvalue()
