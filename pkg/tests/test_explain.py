import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from drebin_explain.errors import EmptyGroup
from drebin_explain.explain import (
    GlobalRelevanceMatrix,
    RelevanceGroup,
    RelevanceVector,
    compact_view,
    fine_grained_view,
    global_relevance,
    local_relevance,
    local_relevances,
    top_k,
)
from drebin_explain.featurespace import (
    FeatureDescriptor,
    FeatureVocabulary,
    SparseBinaryVector,
)
from drebin_explain.models import LinearSvmModel, RbfSvmModel, train_linear_svm, train_rbf_svm

from conftest import dataset_from_rows


class FixedGradient:
    """Handle with a constant, prescribed gradient."""

    def __init__(self, g):
        self.g = np.asarray(g, dtype=float)
        self.dim = self.g.shape[0]

    def gradients(self, X):
        return np.tile(self.g, (X.shape[0], 1))


def test_local_relevance_example():
    r = local_relevance(FixedGradient([2, 5, -1]), SparseBinaryVector((0, 2), 3))
    np.testing.assert_allclose(r.values, [2 / 3, 0, -1 / 3])
    assert not r.degenerate


def test_local_relevance_empty_sample():
    r = local_relevance(FixedGradient([2, 5, -1]), SparseBinaryVector((), 3))
    assert r.degenerate and not r.values.any()


def _vocab(d):
    return FeatureVocabulary([FeatureDescriptor("S1", f"feature::f{j:02d}") for j in range(d)])


def test_top_k_order_and_ties():
    vocab = _vocab(3)
    ranked = top_k(RelevanceVector(np.array([0.5, -0.3, 0.2])), vocab, k=2)
    assert ranked.indices == [0, 1]
    ranked = top_k(RelevanceVector(np.array([0.5, -0.5])), _vocab(2), k=2)
    assert ranked.indices == [0, 1]
    assert len(top_k(RelevanceVector(np.zeros(3), True), vocab, k=2)) == 0


def test_top_k_annotates_frequencies():
    ds = dataset_from_rows([[1, 0], [0, 0], [1, 1], [1, 0]], [-1, -1, 1, 1])
    ranked = top_k(RelevanceVector(np.array([0.25, -0.75])), _vocab(2), ds, k=10)
    assert ranked.indices == [1, 0]
    e = ranked.entries[1]
    assert (e.p_benign, e.p_malware) == (0.5, 1.0)
    row = ranked.rows()[1]
    assert row["relevance_pct"] == 25.0 and row["p_benign_pct"] == 50.0
    assert ranked.to_csv().splitlines()[0].startswith("rank,set,feature,relevance")


def test_linear_ranking_equals_weight_ranking():
    rng = np.random.default_rng(0)
    for _ in range(50):
        d = int(rng.integers(2, 30))
        w = rng.normal(size=d)
        m = LinearSvmModel(w, rng.normal())
        x = SparseBinaryVector.from_dense(rng.random(d) < 0.5)
        r = local_relevance(m, x)
        if r.degenerate:
            continue
        oracle = sorted(x.active, key=lambda j: (-abs(w[j]), j))
        assert top_k(r, _vocab(d), k=d).indices == oracle


@given(st.floats(0.01, 100))
def test_ranking_scale_invariant(c):
    rng = np.random.default_rng(5)
    w, b = rng.normal(size=12), 0.3
    x = SparseBinaryVector.from_dense(rng.random(12) < 0.6)
    a = top_k(local_relevance(LinearSvmModel(w, b), x), _vocab(12), k=12).indices
    s = top_k(local_relevance(LinearSvmModel(c * w, c * b), x), _vocab(12), k=12).indices
    assert a == s


def test_projection_sparsity_and_normalization_rbf(small_ds):
    m = train_rbf_svm(small_ds, 1.0, 0.05)
    R, degenerate = local_relevances(m, small_ds)
    X = small_ds.X.toarray()
    assert np.all(R[X == 0] == 0)
    np.testing.assert_allclose(np.abs(R[~degenerate]).sum(axis=1), 1.0, atol=1e-9)
    for i in range(0, len(small_ds), 37):
        single = local_relevance(m, small_ds.samples[i])
        np.testing.assert_allclose(single.values, R[i], atol=1e-12)


def _group_matrix(means, names=None):
    names = names or [f"g{i}" for i in range(len(means))]
    return GlobalRelevanceMatrix(
        [RelevanceGroup(n, 1, 0, np.asarray(m, float)) for n, m in zip(names, means)],
        len(means[0]))


def test_global_single_sample_group_and_cancellation():
    h = FixedGradient([1.0, -2.0, 0.5])
    ds = dataset_from_rows([[1, 1, 0], [0, 0, 1]], [-1, 1])
    g = global_relevance(h, ds)
    np.testing.assert_allclose(g.group("benign").mean, local_relevance(h, ds.samples[0]).values)
    # r and -r cancel
    h2 = FixedGradient([1.0, -2.0, 0.0])
    h3 = FixedGradient([-1.0, 2.0, 0.0])
    x = SparseBinaryVector((0, 1), 3)
    mean = (local_relevance(h2, x).values + local_relevance(h3, x).values) / 2
    assert not mean.any()


def test_global_means_match_brute_force(corpus):
    ds = corpus.dataset
    m = train_linear_svm(ds, 0.1)
    g = global_relevance(m, ds, "family")
    for grp in g.groups:
        if grp.name == "benign":
            members = [i for i, y in enumerate(ds.labels) if y == -1]
        elif grp.name == "malware":
            members = [i for i, y in enumerate(ds.labels) if y == 1]
        else:
            members = [i for i, f in enumerate(ds.families) if f == grp.name]
        total = np.zeros(ds.dim)
        count = 0
        for i in members:
            r = local_relevance(m, ds.samples[i])
            if not r.degenerate:
                total = total + r.values
                count += 1
        assert grp.n_samples == len(members) and grp.n_degenerate == len(members) - count
        assert np.max(np.abs(grp.mean - total / count)) < 1e-12


def test_global_group_order(corpus):
    ds = corpus.dataset
    g = global_relevance(train_linear_svm(ds, 0.1), ds, "family")
    assert g.names[:2] == ["benign", "malware"]
    sizes = [grp.n_samples for grp in g.groups[2:]]
    assert sizes == sorted(sizes, reverse=True)
    assert len(global_relevance(train_linear_svm(ds, 0.1), ds, "family", max_families=2).groups) == 4


def test_global_empty_group():
    h = FixedGradient([1.0, 1.0])
    ds = dataset_from_rows([[1, 0], [0, 0]], [-1, 1])
    with pytest.raises(EmptyGroup):
        global_relevance(h, ds)


def _set_vocab():
    prefixes = ["feature", "permission", "activity", "intent", "api_call", "real_permission", "call", "url"]
    return FeatureVocabulary(sorted(
        (FeatureDescriptor(f"S{k + 1}", f"{p}::x") for k, p in enumerate(prefixes)),
        key=lambda d: d.name))


def test_compact_view_one_hot():
    vocab = _set_vocab()
    for j in range(8):
        mean = np.zeros(8)
        mean[j] = 0.7
        cols, M = compact_view(_group_matrix([mean]), vocab)
        assert cols == [f"S{k}" for k in range(1, 9)]
        assert np.count_nonzero(M) == 1
        assert M[0, cols.index(vocab.descriptors[j].set_id)] == 0.7


def test_compact_view_single_set(corpus):
    vocab = corpus.vocabulary
    mean = np.where(vocab.set_ids == "S2", 1.0, 0.0)
    cols, M = compact_view(_group_matrix([mean]), vocab, "sum")
    assert np.flatnonzero(M[0]).tolist() == [cols.index("S2")]


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=4))
def test_compact_sum_conserves_mass(scales):
    vocab = _set_vocab()
    rng = np.random.default_rng(len(scales))
    means = [s * rng.normal(size=8) for s in scales]
    _, M = compact_view(_group_matrix(means), vocab, "sum")
    np.testing.assert_allclose(M.sum(axis=1), [m.sum() for m in means], atol=1e-12)


def test_fine_grained_overlap_bounds():
    d = 17 * 5
    disjoint = []
    for g in range(17):
        m = np.zeros(d)
        m[g * 5:(g + 1) * 5] = np.arange(5, 0, -1)
        disjoint.append(m)
    cols, M = fine_grained_view(_group_matrix(disjoint), per_group_top=5)
    assert len(cols) == 85 and M.shape == (17, 85)
    assert cols[:5] == [0, 1, 2, 3, 4]
    shared = [disjoint[0]] * 17
    cols, M = fine_grained_view(_group_matrix(shared), per_group_top=5)
    assert len(cols) == 5
