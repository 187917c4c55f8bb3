"""Drebin-style feature strings, the feature vocabulary and binary embedding.

Samples arrive as plain-text files holding one feature string per line,
e.g. ``permission::SEND_SMS``.  The prefix before ``::`` selects one of the
eight Drebin feature sets.
"""
from __future__ import annotations

import csv
import hashlib
import io
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    DataError,
    DimensionMismatch,
    EmptyClass,
    EmptyVocabulary,
    UnknownFeature,
    UnknownPrefix,
)

SET_IDS = ("S1", "S2", "S3", "S4", "S5", "S6", "S7", "S8")
CATCH_ALL_SET = "S9"

SET_NAMES = {
    "S1": "Hardware components",
    "S2": "Requested permissions",
    "S3": "Application components",
    "S4": "Filtered intents",
    "S5": "Restricted API calls",
    "S6": "Used permissions",
    "S7": "Suspicious API calls",
    "S8": "Network addresses",
    CATCH_ALL_SET: "Unrecognized prefix",
}

PREFIX_TABLE = {
    "feature": "S1",
    "permission": "S2",
    "activity": "S3",
    "service": "S3",
    "receiver": "S3",
    "provider": "S3",
    "intent": "S4",
    "api_call": "S5",
    "real_permission": "S6",
    "call": "S7",
    "url": "S8",
}

BENIGN = -1
MALWARE = 1


def set_id_for(name: str, strict: bool = True) -> str:
    prefix, sep, _ = name.partition("::")
    set_id = PREFIX_TABLE.get(prefix) if sep else None
    if set_id is None:
        if strict:
            raise UnknownPrefix(f"no feature set for {name!r}")
        return CATCH_ALL_SET
    return set_id


@dataclass(frozen=True)
class FeatureDescriptor:
    set_id: str
    name: str


class FeatureVocabulary:
    """Bijection between feature strings and indices ``0..d-1``.

    Descriptors are kept in lexicographic order of their names, so two
    corpora with the same union of strings yield the same vocabulary.
    """

    def __init__(self, descriptors: Sequence[FeatureDescriptor]):
        self.descriptors = tuple(descriptors)
        self.index = {desc.name: i for i, desc in enumerate(self.descriptors)}
        if len(self.index) != len(self.descriptors):
            raise DataError("duplicate feature names in vocabulary")
        for desc in self.descriptors:
            if not desc.name:
                raise DataError("empty feature name in vocabulary")

    def __len__(self) -> int:
        return len(self.descriptors)

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureVocabulary) and self.descriptors == other.descriptors

    @property
    def dim(self) -> int:
        return len(self.descriptors)

    @cached_property
    def set_ids(self) -> np.ndarray:
        return np.array([d.set_id for d in self.descriptors], dtype=object)

    def set_counts(self) -> dict[str, int]:
        counts = {s: 0 for s in SET_IDS}
        for desc in self.descriptors:
            counts[desc.set_id] = counts.get(desc.set_id, 0) + 1
        return counts

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["index", "set_id", "name"])
        for i, desc in enumerate(self.descriptors):
            writer.writerow([i, desc.set_id, desc.name])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "FeatureVocabulary":
        rows = list(csv.DictReader(io.StringIO(text)))
        rows.sort(key=lambda r: int(r["index"]))
        if [int(r["index"]) for r in rows] != list(range(len(rows))):
            raise DataError("vocabulary CSV indices are not 0..d-1")
        return cls([FeatureDescriptor(r["set_id"], r["name"]) for r in rows])

    @cached_property
    def hash(self) -> str:
        return hashlib.sha256(self.to_csv().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SparseBinaryVector:
    """A point of ``{0,1}^dim`` stored as its strictly increasing active indices."""

    active: tuple[int, ...]
    dim: int

    def __post_init__(self):
        prev = -1
        for j in self.active:
            if j <= prev or j >= self.dim:
                raise DataError(f"invalid active index {j} for dim {self.dim}")
            prev = j

    @classmethod
    def from_indices(cls, indices: Iterable[int], dim: int) -> "SparseBinaryVector":
        return cls(tuple(sorted({int(j) for j in indices})), int(dim))

    @classmethod
    def from_dense(cls, x) -> "SparseBinaryVector":
        x = np.asarray(x)
        return cls(tuple(int(j) for j in np.flatnonzero(x)), x.shape[0])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[list(self.active)] = 1.0
        return out

    def __len__(self) -> int:
        return len(self.active)

    def __contains__(self, j) -> bool:
        return j in set(self.active)

    def with_flip(self, j: int) -> "SparseBinaryVector":
        active = set(self.active)
        active.symmetric_difference_update({j})
        return SparseBinaryVector(tuple(sorted(active)), self.dim)


def rows_to_csr(samples: Sequence[SparseBinaryVector], dim: int) -> sp.csr_matrix:
    indptr = np.zeros(len(samples) + 1, dtype=np.int64)
    for i, s in enumerate(samples):
        if s.dim != dim:
            raise DimensionMismatch(f"sample {i} has dim {s.dim}, expected {dim}")
        indptr[i + 1] = indptr[i] + len(s.active)
    indices = np.fromiter(
        (j for s in samples for j in s.active), dtype=np.int32, count=indptr[-1]
    )
    data = np.ones(indptr[-1])
    return sp.csr_matrix((data, indices, indptr), shape=(len(samples), dim))


@dataclass(frozen=True)
class LabeledDataset:
    samples: tuple[SparseBinaryVector, ...]
    labels: np.ndarray
    families: tuple[str, ...] = ()
    names: tuple[str, ...] = ()
    dim: int = field(default=-1)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "labels", labels)
        n = len(self.samples)
        if labels.shape[0] != n:
            raise DataError("samples and labels differ in length")
        if not np.all(np.isin(labels, (BENIGN, MALWARE))):
            raise DataError("labels must be -1 (benign) or +1 (malware)")
        families = tuple(self.families) if len(self.families) else ("",) * n
        names = tuple(self.names) if len(self.names) else tuple(str(i) for i in range(n))
        if len(families) != n or len(names) != n:
            raise DataError("families/names differ in length from samples")
        object.__setattr__(self, "families", families)
        object.__setattr__(self, "names", names)
        dim = self.dim
        if dim < 0:
            if not n:
                raise DataError("cannot infer dim of an empty dataset")
            dim = self.samples[0].dim
        if any(s.dim != dim for s in self.samples):
            raise DimensionMismatch("samples do not share one dim")
        object.__setattr__(self, "dim", dim)

    @classmethod
    def from_matrix(cls, X, labels, families=(), names=()) -> "LabeledDataset":
        X = sp.csr_matrix(X)
        samples = [
            SparseBinaryVector(tuple(int(j) for j in np.sort(X.indices[X.indptr[i]:X.indptr[i + 1]])), X.shape[1])
            for i in range(X.shape[0])
        ]
        return cls(tuple(samples), labels, families, names, X.shape[1])

    def __len__(self) -> int:
        return len(self.samples)

    @cached_property
    def X(self) -> sp.csr_matrix:
        return rows_to_csr(self.samples, self.dim)

    def subset(self, indices) -> "LabeledDataset":
        indices = [int(i) for i in indices]
        return LabeledDataset(
            tuple(self.samples[i] for i in indices),
            self.labels[indices],
            tuple(self.families[i] for i in indices),
            tuple(self.names[i] for i in indices),
            self.dim,
        )

    def relabeled(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.samples, labels, self.families, self.names, self.dim)

    def require_both_classes(self) -> None:
        if not np.any(self.labels == BENIGN) or not np.any(self.labels == MALWARE):
            raise EmptyClass("dataset needs both benign and malware samples")


def parse_sample_file(text: str) -> list[str]:
    seen = {}
    for line in text.splitlines():
        line = line.strip()
        if line and line not in seen:
            seen[line] = None
    return list(seen)


def build_vocabulary(
    corpus: Iterable[Iterable[str]], strict: bool = True, allow_empty: bool = False
) -> FeatureVocabulary:
    names = set()
    for strings in corpus:
        names.update(strings)
    if not names and not allow_empty:
        raise EmptyVocabulary("corpus contains no feature strings")
    return FeatureVocabulary(
        [FeatureDescriptor(set_id_for(n, strict), n) for n in sorted(names)]
    )


def vectorize(
    strings: Iterable[str], vocab: FeatureVocabulary, policy: str = "ignore"
) -> SparseBinaryVector:
    if policy not in ("ignore", "error"):
        raise ValueError(f"unknown policy {policy!r}")
    if not len(vocab):
        raise EmptyVocabulary("cannot vectorize against an empty vocabulary")
    active = set()
    for s in strings:
        j = vocab.index.get(s)
        if j is None:
            if policy == "error":
                raise UnknownFeature(s)
            continue
        active.add(j)
    return SparseBinaryVector(tuple(sorted(active)), vocab.dim)


def feature_frequencies(ds: LabeledDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature presence rates ``(p_B, p_M)`` in benign and malware samples."""
    ds.require_both_classes()
    X = ds.X
    benign = ds.labels == BENIGN
    malware = ~benign
    p_b = np.asarray(X[benign].sum(axis=0)).ravel() / benign.sum()
    p_m = np.asarray(X[malware].sum(axis=0)).ravel() / malware.sum()
    return p_b, p_m


def feature_frequency(ds: LabeledDataset, j: int) -> tuple[float, float]:
    ds.require_both_classes()
    if not 0 <= j < ds.dim:
        raise DimensionMismatch(f"feature {j} outside [0, {ds.dim})")
    in_b = sum(1 for s, y in zip(ds.samples, ds.labels) if y == BENIGN and j in s.active)
    in_m = sum(1 for s, y in zip(ds.samples, ds.labels) if y == MALWARE and j in s.active)
    n_b = int(np.sum(ds.labels == BENIGN))
    return in_b / n_b, in_m / (len(ds) - n_b)


# -- on-disk corpora ---------------------------------------------------------

def read_manifest(path) -> list[tuple[str, int, str]]:
    """Rows ``(sample name, label, family)`` from a label manifest CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        key = "sha" if "sha" in cols else "name" if "name" in cols else None
        if key is None or "label" not in cols:
            raise DataError(f"{path}: manifest needs columns sha|name and label")
        rows = []
        for r in reader:
            label = r["label"].strip().lower()
            if label not in ("benign", "malware"):
                raise DataError(f"{path}: bad label {r['label']!r}")
            family = (r.get("family") or "").strip() if label == "malware" else ""
            rows.append((r[key].strip(), MALWARE if label == "malware" else BENIGN, family))
    return rows


def _sample_path(data_dir, name):
    for candidate in (os.path.join(data_dir, name), os.path.join(data_dir, name + ".txt")):
        if os.path.isfile(candidate):
            return candidate
    raise DataError(f"no sample file for {name!r} in {data_dir}")


def read_sample(path) -> list[str]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_sample_file(fh.read())


def list_sample_files(data_dir) -> list[str]:
    return sorted(
        os.path.join(data_dir, f)
        for f in os.listdir(data_dir)
        if os.path.isfile(os.path.join(data_dir, f)) and not f.startswith(".")
        and not f.endswith(".csv")
    )


def load_corpus(data_dir, manifest, vocab: FeatureVocabulary | None = None, strict=True):
    """Read every manifest sample; build a vocabulary unless one is given."""
    rows = read_manifest(manifest)
    strings = [read_sample(_sample_path(data_dir, name)) for name, _, _ in rows]
    if vocab is None:
        vocab = build_vocabulary(strings, strict=strict)
    samples = tuple(vectorize(s, vocab) for s in strings)
    ds = LabeledDataset(
        samples,
        np.array([r[1] for r in rows]),
        tuple(r[2] for r in rows),
        tuple(r[0] for r in rows),
        vocab.dim,
    )
    return ds, vocab
