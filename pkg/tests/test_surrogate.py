import numpy as np
import pytest

from drebin_explain.errors import DegenerateRelabeling, NoDifferentiableRoute
from drebin_explain.evaluation import stratified_split
from drebin_explain.featurespace import LabeledDataset
from drebin_explain.models import (
    DecisionTree,
    RandomForestModel,
    train_linear_svm,
    train_random_forest,
    train_rbf_svm,
)
from drebin_explain.surrogate import (
    distill,
    explanation_model,
    relabel,
    surrogate_from_json,
    surrogate_to_json,
)

GRID = {"C": (1.0, 10.0, 100.0), "gamma": (1e-3, 1e-2, 1e-1)}


@pytest.fixture(scope="module")
def split(small_ds):
    tr, te = stratified_split(small_ds.labels, 0.7, 0)
    return small_ds.subset(tr), small_ds.subset(te)


def test_distill_linear_high_agreement(split):
    train, test = split
    target = train_linear_svm(train, 0.1)
    s = distill(target, train, test.samples, GRID)
    assert s.fidelity.train >= 0.95
    assert 0 <= s.fidelity.holdout <= 1


def test_reported_agreement_is_exact_count(split):
    train, test = split
    target = train_random_forest(train, 5, seed=1)
    s = distill(target, train, test.samples, GRID)
    y_t = relabel(target, train)
    y_s = s.approximator.predict(train)
    assert s.fidelity.train == sum(int(a == b) for a, b in zip(y_t, y_s)) / len(train)


def test_distill_constant_forest_fails(small_ds):
    leaf = DecisionTree([-1], [-1], [-1], [1.0])
    with pytest.raises(DegenerateRelabeling):
        distill(RandomForestModel([leaf], small_ds.dim), small_ds, (), GRID)


def test_distill_rbf_into_rbf_sanity_band(split):
    train, test = split
    target = train_rbf_svm(train, 10.0, 0.05)
    s = distill(target, train, test.samples, GRID)
    assert s.fidelity.holdout >= s.fidelity.train - 0.05


def test_distill_ignores_true_labels(split):
    train, test = split
    target = train_random_forest(train, 5, seed=3)
    rng = np.random.default_rng(0)
    shuffled = LabeledDataset(train.samples, rng.permutation(train.labels), dim=train.dim)
    a = distill(target, train, test.samples, GRID)
    b = distill(target, shuffled, test.samples, GRID)
    assert a.approximator.beta.tobytes() == b.approximator.beta.tobytes()
    assert a.fidelity == b.fidelity


def test_explanation_model_routes(split):
    train, test = split
    lin = train_linear_svm(train, 1.0)
    assert explanation_model(lin) is lin
    forest = train_random_forest(train, 5, seed=2)
    with pytest.raises(NoDifferentiableRoute):
        explanation_model(forest)
    s = distill(forest, train, (), GRID)
    assert explanation_model(forest, s) is s.approximator
    other = train_random_forest(train, 5, seed=3)
    with pytest.raises(NoDifferentiableRoute):
        explanation_model(other, s)


def test_surrogate_json_roundtrip(split):
    train, test = split
    forest = train_random_forest(train, 5, seed=2)
    s = distill(forest, train, test.samples, GRID)
    back = surrogate_from_json(surrogate_to_json(s))
    assert back.target_id == s.target_id and back.fidelity == s.fidelity
    assert explanation_model(forest, back).decision_function(test).tobytes() == \
        s.approximator.decision_function(test).tobytes()
