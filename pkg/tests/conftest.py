import numpy as np
import pytest
from hypothesis import settings

from drebin_explain.featurespace import LabeledDataset, SparseBinaryVector
from drebin_explain.synthetic import make_corpus

settings.register_profile("default", deadline=None, max_examples=50)
settings.register_profile("fast", deadline=None, max_examples=10)
settings.load_profile("default")


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(n_samples=400, n_background=60, n_families=4, seed=3)


@pytest.fixture(scope="session")
def small_ds(corpus):
    return corpus.dataset


def dataset_from_rows(rows, labels, families=()):
    dim = len(rows[0])
    samples = [SparseBinaryVector.from_dense(r) for r in rows]
    return LabeledDataset(tuple(samples), np.array(labels), tuple(families), dim=dim)


def random_dataset(rng, n=40, d=8, density=0.4):
    while True:
        X = (rng.random((n, d)) < density).astype(float)
        y = rng.choice([-1, 1], size=n)
        if (y == 1).any() and (y == -1).any():
            return dataset_from_rows(X, y)


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k[2:])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {key}: {detail}")
