import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drebin_explain.errors import ConfigError, EmptyClass
from drebin_explain.evaluation import (
    ProtocolConfig,
    RocCurve,
    average_roc,
    cross_validate,
    default_fpr_grid,
    grid_points,
    roc,
    run_protocol,
    stratified_folds,
    stratified_split,
)

from conftest import dataset_from_rows


def pair_counting_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == -1]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def test_roc_separated():
    c = roc([0.9, 0.8, 0.1, 0.0], [1, 1, -1, -1])
    assert c.auc == 1.0
    assert c.points[0] == (0.0, 0.0) and c.points[-1] == (1.0, 1.0)


def test_roc_constant_scores():
    c = roc([0.3] * 6, [1, -1, 1, -1, -1, 1])
    assert c.points == [(0.0, 0.0), (1.0, 1.0)]
    assert c.auc == 0.5


def test_roc_example():
    assert roc([0.9, 0.8, 0.3, 0.1], [1, -1, 1, -1]).auc == pytest.approx(0.75)


def test_roc_needs_both_classes():
    with pytest.raises(EmptyClass):
        roc([0.1, 0.2], [1, 1])


@given(st.lists(st.tuples(st.integers(-5, 5), st.sampled_from([-1, 1])), min_size=2, max_size=40)
       .filter(lambda p: len({y for _, y in p}) == 2))
def test_auc_equals_pair_counting(pairs):
    scores = [s / 2 for s, _ in pairs]
    labels = [y for _, y in pairs]
    c = roc(scores, labels)
    assert abs(c.auc - pair_counting_auc(scores, labels)) < 1e-12
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


def test_average_single_curve_is_grid_sample():
    c = roc([0.9, 0.8, 0.3, 0.1, 0.05], [1, -1, 1, -1, 1])
    grid = default_fpr_grid()
    avg = average_roc([c], grid)
    np.testing.assert_array_equal(avg.tpr[-len(grid):], c.tpr_at(grid))
    twice = average_roc([c, c], grid)
    np.testing.assert_array_equal(twice.tpr, avg.tpr)


def test_average_arithmetic():
    a = RocCurve(np.array([0, 0.1, 1.0]), np.array([0, 0.2, 1.0]), 0.0)
    b = RocCurve(np.array([0, 0.1, 1.0]), np.array([0, 0.8, 1.0]), 0.0)
    avg = average_roc([a, b], [0.0, 0.1, 1.0])
    assert avg.tpr_at([0.1])[0] == pytest.approx(0.5)


def test_average_idempotent_on_grid_curves():
    rng = np.random.default_rng(0)
    grid = default_fpr_grid(21)
    curves = [roc(rng.random(30), rng.choice([-1, 1], 30)) for _ in range(3)]
    once = average_roc(curves, grid)
    again = average_roc([once], grid)
    np.testing.assert_array_equal(once.fpr, again.fpr)
    np.testing.assert_array_equal(once.tpr, again.tpr)
    assert once.points[0] == (0.0, 0.0) and once.points[-1] == (1.0, 1.0)


def test_stratified_folds_ratio():
    labels = np.array([1] * 7 + [-1] * 23)
    folds = stratified_folds(labels, 3, seed=4)
    assert sorted(np.concatenate(folds).tolist()) == list(range(30))
    for f in folds:
        expected = len(f) * 7 / 30
        assert abs(np.sum(labels[f] == 1) - expected) <= 1


def test_stratified_split_is_partition():
    labels = np.array([1] * 20 + [-1] * 80)
    tr, te = stratified_split(labels, 0.6, 1)
    assert len(np.intersect1d(tr, te)) == 0 and len(tr) + len(te) == 100
    assert np.sum(labels[tr] == 1) == 12


def test_grid_points_tie_order():
    pts = grid_points({"gamma": [1.0, 0.1], "C": [10.0, 1.0]})
    assert pts[0] == {"gamma": 0.1, "C": 1.0} and pts[1] == {"gamma": 1.0, "C": 1.0}
    with pytest.raises(ConfigError):
        grid_points({"C": [0.0, 1.0]})


def test_cv_single_point(small_ds):
    cv = cross_validate(small_ds, "linear", {"C": [0.5]}, 3, seed=0)
    assert cv.best == {"C": 0.5} and cv.fold_scores.shape == (1, 3)


def test_cv_dominant_point():
    # replicated XOR: a near-linear kernel cannot fit it, a local one can
    X = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 6, dtype=float)
    ds = dataset_from_rows(X, [1, -1, -1, 1] * 6)
    cv = cross_validate(ds, "rbf", {"C": [100.0], "gamma": [1e-4, 1.0]}, 3, seed=1)
    assert np.all(cv.fold_scores[1] > cv.fold_scores[0])
    assert cv.best == {"C": 100.0, "gamma": 1.0}


def test_cv_ties_prefer_small_values():
    X = np.array([[1, 0], [0, 1]] * 6, dtype=float)
    ds = dataset_from_rows(X, [1, -1] * 6)
    cv = cross_validate(ds, "rbf", {"C": [10.0, 1.0], "gamma": [1.0, 0.5]}, 3, seed=0)
    assert np.all(cv.mean_scores == 1.0)
    assert cv.best == {"C": 1.0, "gamma": 0.5}


def test_cv_fold_without_class():
    ds = dataset_from_rows([[1, 0], [0, 1], [0, 0], [1, 1]], [1, -1, -1, -1])
    with pytest.raises(EmptyClass):
        cross_validate(ds, "linear", {"C": [1.0]}, 2, seed=0)


SMALL = ProtocolConfig(
    n_repetitions=2, train_size=0.5,
    grids={"linear": {"C": [0.1, 1.0]}, "rbf": {"C": [1.0], "gamma": [0.01, 0.1]},
           "forest": {"n_trees": [5]}},
)


def test_protocol_single_repetition(small_ds):
    cfg = ProtocolConfig(n_repetitions=1, grids=SMALL.grids)
    res = run_protocol(small_ds, cfg)
    grid = default_fpr_grid(cfg.fpr_grid_points)
    for fam in cfg.families:
        single = res.repetitions[0].rocs[fam]
        np.testing.assert_array_equal(res.average[fam].tpr[-len(grid):], single.tpr_at(grid))


def test_protocol_determinism(small_ds):
    a = run_protocol(small_ds, SMALL)
    b = run_protocol(small_ds, SMALL)
    other = run_protocol(small_ds, ProtocolConfig(**{**SMALL.__dict__, "seed": 1}))
    for ra, rb in zip(a.repetitions, b.repetitions):
        np.testing.assert_array_equal(ra.train_idx, rb.train_idx)
        assert {f: c.best for f, c in ra.cv.items()} == {f: c.best for f, c in rb.cv.items()}
    assert a.summary() == b.summary()
    assert not np.array_equal(a.repetitions[0].train_idx, other.repetitions[0].train_idx)


def test_protocol_config_validation():
    with pytest.raises(ConfigError):
        ProtocolConfig(cv_folds=1)
    with pytest.raises(ConfigError):
        ProtocolConfig(grids={"linear": {"C": [0.0]}})
