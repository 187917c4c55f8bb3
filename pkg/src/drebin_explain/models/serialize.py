"""Lossless JSON encoding of trained models.

Floats are stored as C99 hex strings (``float.hex``) so a round trip
reproduces every parameter bit for bit.
"""
from __future__ import annotations

import hashlib
import json

import numpy as np
import scipy.sparse as sp

from ..errors import DataError
from .base import DecisionModel
from .forest import DecisionTree, RandomForestModel
from .linear import LinearSvmModel
from .rbf import RbfSvmModel

FORMAT = "drebin-explain/model"
VERSION = 1


def _hex(v) -> str:
    return float(v).hex()


def _unhex(s) -> float:
    return float.fromhex(s)


def _pairs(v: np.ndarray) -> list:
    nz = np.flatnonzero(v)
    return [[int(j), _hex(v[j])] for j in nz]


def _from_pairs(pairs, dim) -> np.ndarray:
    out = np.zeros(dim)
    for j, v in pairs:
        out[int(j)] = _unhex(v)
    return out


def model_to_dict(model: DecisionModel) -> dict:
    if isinstance(model, LinearSvmModel):
        params = {"w": _pairs(model.w), "b": _hex(model.b)}
    elif isinstance(model, RbfSvmModel):
        sv = model.support_vectors
        params = {
            "support_vectors": [
                [[int(j), _hex(v)] for j, v in zip(sv.indices[sv.indptr[i]:sv.indptr[i + 1]],
                                                   sv.data[sv.indptr[i]:sv.indptr[i + 1]])]
                for i in range(sv.shape[0])
            ],
            "beta": [_hex(v) for v in model.beta],
            "b": _hex(model.b),
            "gamma": _hex(model.gamma),
        }
    elif isinstance(model, RandomForestModel):
        params = {"trees": [
            {"feature": t.feature.tolist(), "left": t.left.tolist(),
             "right": t.right.tolist(), "value": [_hex(v) for v in t.value]}
            for t in model.trees
        ]}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    return {
        "format": FORMAT,
        "version": VERSION,
        "model_type": model.model_type,
        "dim": int(model.dim),
        "hyperparameters": model.hyperparameters,
        "vocabulary_hash": model.vocabulary_hash,
        "parameters": params,
    }


def model_from_dict(doc: dict) -> DecisionModel:
    if doc.get("format") != FORMAT:
        raise DataError("not a model document")
    kind, dim, p = doc["model_type"], int(doc["dim"]), doc["parameters"]
    hyper, vhash = doc.get("hyperparameters", {}), doc.get("vocabulary_hash", "")
    if kind == "linear_svm":
        return LinearSvmModel(_from_pairs(p["w"], dim), _unhex(p["b"]), hyper, vhash)
    if kind == "rbf_svm":
        indptr, indices, data = [0], [], []
        for row in p["support_vectors"]:
            indices += [int(j) for j, _ in row]
            data += [_unhex(v) for _, v in row]
            indptr.append(len(indices))
        sv = sp.csr_matrix((np.array(data, dtype=np.float64), np.array(indices, dtype=np.int32),
                            np.array(indptr)), shape=(len(p["beta"]), dim))
        return RbfSvmModel(sv, [_unhex(v) for v in p["beta"]], _unhex(p["b"]),
                           _unhex(p["gamma"]), hyper, vhash)
    if kind == "random_forest":
        trees = [DecisionTree(t["feature"], t["left"], t["right"], [_unhex(v) for v in t["value"]])
                 for t in p["trees"]]
        return RandomForestModel(trees, dim, hyper, vhash)
    raise DataError(f"unknown model type {kind!r}")


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def model_to_json(model: DecisionModel) -> str:
    return dumps(model_to_dict(model))


def model_from_json(text: str) -> DecisionModel:
    return model_from_dict(json.loads(text))


def model_id(model: DecisionModel) -> str:
    return hashlib.sha256(model_to_json(model).encode("utf-8")).hexdigest()[:16]
