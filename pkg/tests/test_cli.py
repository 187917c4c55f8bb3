import csv
import json
import os

import pytest

from drebin_explain.cli import EXIT_COMPUTE, EXIT_CONFIG, EXIT_DATA, main
from drebin_explain.synthetic import make_corpus

FAST_GRIDS = ["--grid-C", "0.1,1", "--grid-gamma", "0.01,0.1", "--grid-n-trees", "5"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    corpus = make_corpus(n_samples=300, n_background=40, n_families=4, seed=8)
    manifest = corpus.write(root / "apps")
    return root, str(root / "apps"), manifest, corpus


def run(*argv):
    return main([str(a) for a in argv])


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def test_vocab_counts_and_determinism(tmp_path):
    apps = tmp_path / "apps"
    apps.mkdir()
    (apps / "a").write_text("url::x\npermission::SEND_SMS\n")
    (apps / "b").write_text("url::x\ncall::send\n")
    assert run("vocab", "--data-dir", apps, "--out-dir", tmp_path / "o1") == 0
    assert run("vocab", "--data-dir", apps, "--out-dir", tmp_path / "o2") == 0
    stats = json.loads((tmp_path / "o1" / "vocabulary_stats.json").read_text())
    assert stats["d"] == 3 and stats["per_set"]["S2"] == 1
    assert read(tmp_path / "o1" / "vocabulary.csv") == read(tmp_path / "o2" / "vocabulary.csv")


def test_vocab_empty_dir(tmp_path):
    (tmp_path / "empty").mkdir()
    assert run("vocab", "--data-dir", tmp_path / "empty", "--out-dir", tmp_path / "o") == EXIT_DATA


def test_train_and_determinism(data, tmp_path):
    _, apps, manifest, _ = data
    args = ["train", "--data-dir", apps, "--labels", manifest, "--family", "linear", "--C", "1"]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--out-dir", tmp_path / "b") == 0
    summary = json.loads((tmp_path / "a" / "train_summary.json").read_text())
    assert summary["train_accuracy"] == 1.0
    for name in ("model.json", "train_summary.json", "vocabulary.csv"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)


def test_train_rejects_bad_grid(data, tmp_path):
    _, apps, manifest, _ = data
    code = run("train", "--data-dir", apps, "--labels", manifest, "--cv", "--grid-C", "0,1",
               "--out-dir", tmp_path)
    assert code == EXIT_CONFIG


def test_config_file_and_unknown_keys(data, tmp_path):
    _, apps, manifest, _ = data
    good = tmp_path / "run.toml"
    good.write_text(f'seed = 3\n[paths]\ndata_dir = "{apps}"\nlabels = "{manifest}"\n'
                    f'out_dir = "{tmp_path / "out"}"\n[model]\nfamily = "forest"\nn_trees = 4\n')
    assert run("train", "--config", good) == 0
    summary = json.loads((tmp_path / "out" / "train_summary.json").read_text())
    assert summary["hyperparameters"]["n_trees"] == 4 and summary["seed"] == 3
    # flags win over the file
    assert run("train", "--config", good, "--n-trees", "2", "--out-dir", tmp_path / "o2") == 0
    assert json.loads((tmp_path / "o2" / "train_summary.json").read_text())["hyperparameters"]["n_trees"] == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("[model]\nfamilly = 'linear'\n")
    assert run("train", "--config", bad) == EXIT_CONFIG


@pytest.fixture(scope="module")
def trained(data):
    root, apps, manifest, _ = data
    out = {}
    for fam in ("linear", "forest"):
        d = root / f"model_{fam}"
        assert run("train", "--data-dir", apps, "--labels", manifest, "--family", fam,
                   "--C", "0.1", "--n-trees", "5", "--out-dir", d) == 0
        out[fam] = d
    return out


def test_explain_forest_without_surrogate(data, trained, tmp_path, capsys):
    _, apps, manifest, _ = data
    d = trained["forest"]
    code = run("explain", "--model", d / "model.json", "--vocab", d / "vocabulary.csv",
               "--sample", os.path.join(apps, "app000000"), "--out-dir", tmp_path)
    assert code == EXIT_COMPUTE
    assert "distill" in capsys.readouterr().err


def test_explain_local_row_count(data, trained, tmp_path):
    _, apps, manifest, corpus = data
    d = trained["linear"]
    sample = tmp_path / "probe_app"
    strings = [corpus.vocabulary.descriptors[j].name for j in corpus.planted_malicious[:3]]
    sample.write_text("\n".join(strings) + "\n")
    assert run("explain", "--model", d / "model.json", "--vocab", d / "vocabulary.csv",
               "--sample", sample, "--data-dir", apps, "--labels", manifest,
               "--top-k", "10", "--out-dir", tmp_path / "o") == 0
    with open(tmp_path / "o" / "explanation_probe_app.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert {r["feature"] for r in rows} == set(strings)


def test_explain_global_by_family(data, trained, tmp_path):
    _, apps, manifest, corpus = data
    d = trained["linear"]
    assert run("explain", "--model", d / "model.json", "--vocab", d / "vocabulary.csv",
               "--data-dir", apps, "--labels", manifest, "--grouping", "family",
               "--out-dir", tmp_path) == 0
    with open(tmp_path / "global_compact.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["group"] for r in rows[:2]] == ["benign", "malware"]
    fams = rows[2:]
    counts = [int(r["n_samples"]) for r in fams]
    assert counts == sorted(counts, reverse=True)
    expected = {f for f in corpus.dataset.families if f}
    assert {r["group"] for r in fams} == expected
    assert os.path.exists(tmp_path / "global_fine.csv")


def test_distill_explain_probe_pipeline(data, trained, tmp_path):
    _, apps, manifest, _ = data
    d = trained["forest"]
    common = ["--model", d / "model.json", "--vocab", d / "vocabulary.csv",
              "--data-dir", apps, "--labels", manifest]
    assert run("distill", *common, *FAST_GRIDS, "--out-dir", tmp_path / "s") == 0
    fid = json.loads((tmp_path / "s" / "fidelity.json").read_text())
    assert 0.8 <= fid["holdout_agreement"] <= 1.0
    surrogate = tmp_path / "s" / "surrogate.json"
    assert run("explain", *common, "--surrogate", surrogate, "--format", "json",
               "--out-dir", tmp_path / "e") == 0
    doc = json.loads((tmp_path / "e" / "global.json").read_text())
    assert doc["compact"]["columns"][:8] == [f"S{k}" for k in range(1, 9)]
    assert run("probe", *common, "--surrogate", surrogate, "--mode", "add_only", "--budget", "3",
               "--out-dir", tmp_path / "p") == 0
    reports = json.loads((tmp_path / "p" / "probe.json").read_text())
    assert reports and all(r["n_changes"] <= 3 for r in reports)
    assert all(c["direction"] == "add" for r in reports for c in r["changed_features"])


def test_explain_vocabulary_mismatch(data, trained, tmp_path):
    _, apps, manifest, _ = data
    other = tmp_path / "vocab.csv"
    other.write_text("index,set_id,name\n0,S8,url::x\n")
    code = run("explain", "--model", trained["linear"] / "model.json", "--vocab", other,
               "--sample", os.path.join(apps, "app000000"), "--out-dir", tmp_path)
    assert code == EXIT_DATA


def test_evaluate_outputs(data, tmp_path):
    _, apps, manifest, _ = data
    args = ["evaluate", "--data-dir", apps, "--labels", manifest, "--n-repetitions", "2",
            *FAST_GRIDS]
    assert run(*args, "--out-dir", tmp_path / "a") == 0
    assert run(*args, "--out-dir", tmp_path / "b") == 0
    for name in ("roc_linear.csv", "roc_rbf.csv", "roc_forest.csv", "evaluation_summary.json"):
        assert read(tmp_path / "a" / name) == read(tmp_path / "b" / name)
    summary = json.loads((tmp_path / "a" / "evaluation_summary.json").read_text())
    assert set(summary["families"]) == {"linear", "rbf", "forest"}
    assert read(tmp_path / "a" / "roc_rbf.csv").startswith(b"fpr,tpr\n0.0,0.0\n")
