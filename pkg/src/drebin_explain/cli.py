"""Command-line pipeline: vocab, train, distill, explain, evaluate, probe.

Settings come from an optional TOML file (``--config``) and are overridden
by flags.  Exit status is 0 on success, 2 for configuration errors, 3 for
data/IO errors and 4 for computation errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np
import tomli

from . import __version__
from .errors import ComputationError, ConfigError, DataError, VocabularyMismatch
from .evaluation import (
    C_GRID,
    FAMILIES,
    GAMMA_GRID,
    N_TREES_GRID,
    ProtocolConfig,
    cross_validate,
    derive_seed,
    run_protocol,
    stratified_split,
    train_family,
)
from .explain import (
    compact_view,
    fine_grained_view,
    global_relevance,
    local_relevance,
    matrix_to_csv,
    top_k,
)
from .featurespace import (
    FeatureVocabulary,
    build_vocabulary,
    feature_frequencies,
    list_sample_files,
    load_corpus,
    read_sample,
    vectorize,
)
from .models import model_from_json, model_to_json
from .robustness import greedy_evasion, probe_report_json
from .surrogate import distill, explanation_model, surrogate_from_json, surrogate_to_json

log = logging.getLogger("drebin_explain")

EXIT_CONFIG, EXIT_DATA, EXIT_COMPUTE = 2, 3, 4


@dataclass
class RunConfig:
    data_dir: str | None = None
    labels: str | None = None
    out_dir: str = "out"
    vocab: str | None = None
    model: str | None = None
    surrogate: str | None = None
    sample: str | None = None
    strict: bool = True
    family: str = "linear"
    C: float = 1.0
    gamma: float = 0.01
    n_trees: int = 10
    cv: bool = False
    grid_C: list = field(default_factory=lambda: list(C_GRID))
    grid_gamma: list = field(default_factory=lambda: list(GAMMA_GRID))
    grid_n_trees: list = field(default_factory=lambda: list(N_TREES_GRID))
    n_repetitions: int = 5
    train_size: float = 0.5
    cv_folds: int = 3
    metric: str = "accuracy"
    families: list = field(default_factory=lambda: list(FAMILIES))
    holdout_fraction: float = 0.3
    top_k: int = 10
    per_group_top: int = 5
    aggregation: str = "mean"
    grouping: str = "label"
    max_families: int = 15
    plot: bool = False
    mode: str = "add_only"
    budget: int = 10
    seed: int = 0
    workers: int = 0
    format: str = "csv"

    def validate(self) -> "RunConfig":
        if self.family not in FAMILIES:
            raise ConfigError(f"family must be one of {FAMILIES}")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown family {fam!r}")
        for name in ("C", "gamma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("grid_C", "grid_gamma", "grid_n_trees"):
            values = getattr(self, name)
            if not values or any(not v > 0 for v in values):
                raise ConfigError(f"{name} must be a non-empty list of positive values")
        for name in ("n_trees", "n_repetitions", "top_k", "per_group_top", "budget", "max_families"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.cv_folds < 2:
            raise ConfigError("cv_folds must be >= 2")
        if not 0 < self.holdout_fraction < 1:
            raise ConfigError("holdout_fraction must lie in (0, 1)")
        if self.workers < 0:
            raise ConfigError("workers must be >= 0")
        choices = {"aggregation": ("mean", "sum"), "grouping": ("label", "family"),
                   "mode": ("add_only", "add_and_remove"), "format": ("csv", "json"),
                   "metric": ("accuracy", "dr_at_fpr")}
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}")
        return self

    @property
    def n_workers(self) -> int:
        return self.workers or os.cpu_count() or 1

    def grid(self, family: str) -> dict:
        return {"linear": {"C": self.grid_C},
                "rbf": {"C": self.grid_C, "gamma": self.grid_gamma},
                "forest": {"n_trees": self.grid_n_trees}}[family]


# TOML table -> keys it may hold; top-level keys are listed under ""
CONFIG_TABLES = {
    "": ("seed", "workers", "format"),
    "paths": ("data_dir", "labels", "out_dir", "vocab", "model", "surrogate", "sample"),
    "features": ("strict",),
    "model": ("family", "C", "gamma", "n_trees", "cv"),
    "grids": ("C", "gamma", "n_trees"),
    "protocol": ("n_repetitions", "train_size", "cv_folds", "metric", "families",
                 "holdout_fraction"),
    "report": ("top_k", "per_group_top", "aggregation", "grouping", "max_families", "plot"),
    "probe": ("mode", "budget"),
}


def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = tomli.load(fh)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    values = {}
    for key, val in doc.items():
        if isinstance(val, dict):
            if key not in CONFIG_TABLES or not key:
                raise ConfigError(f"{path}: unknown table [{key}]")
            for sub, v in val.items():
                if sub not in CONFIG_TABLES[key]:
                    raise ConfigError(f"{path}: unknown key {key}.{sub}")
                values[f"grid_{sub}" if key == "grids" else sub] = v
        elif key in CONFIG_TABLES[""]:
            values[key] = val
        else:
            raise ConfigError(f"{path}: unknown key {key}")
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(args.config) if args.config else {}
    names = {f.name for f in fields(RunConfig)}
    for name in names:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return RunConfig(**values).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -- helpers -----------------------------------------------------------------

def _need(cfg: RunConfig, *names):
    for n in names:
        if getattr(cfg, n) is None:
            raise ConfigError(f"missing required setting {n!r}")


def _write(cfg: RunConfig, name: str, text: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, name)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    log.info("wrote %s", path)
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _read_text(path) -> str:
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _load_vocab(cfg: RunConfig) -> FeatureVocabulary | None:
    return FeatureVocabulary.from_csv(_read_text(cfg.vocab)) if cfg.vocab else None


def _load_model_and_handle(cfg: RunConfig):
    _need(cfg, "model", "vocab")
    model = model_from_json(_read_text(cfg.model))
    vocab = _load_vocab(cfg)
    if model.vocabulary_hash and model.vocabulary_hash != vocab.hash:
        raise VocabularyMismatch("model was trained on a different vocabulary")
    surrogate = surrogate_from_json(_read_text(cfg.surrogate)) if cfg.surrogate else None
    try:
        handle = explanation_model(model, surrogate)
    except ComputationError as exc:
        raise type(exc)(f"{exc} (hint: run `drebin-explain distill` and pass --surrogate)") from exc
    return model, vocab, handle


def _heatmap(path, title, rows, cols, values):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4, 0.3 * len(cols) + 2), max(3, 0.35 * len(rows) + 1)))
    lim = float(np.abs(values).max()) or 1.0
    im = ax.imshow(values, cmap="coolwarm", vmin=-lim, vmax=lim, aspect="auto")
    ax.set_yticks(range(len(rows)), rows)
    ax.set_xticks(range(len(cols)), cols, rotation=90, fontsize=6)
    ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


# -- commands ----------------------------------------------------------------

def cmd_vocab(cfg: RunConfig) -> int:
    _need(cfg, "data_dir")
    files = list_sample_files(cfg.data_dir)
    vocab = build_vocabulary((read_sample(f) for f in files), strict=cfg.strict)
    _write(cfg, "vocabulary.csv", vocab.to_csv())
    _write(cfg, "vocabulary_stats.json", _dump({
        "d": vocab.dim, "n_samples": len(files), "per_set": vocab.set_counts(), "hash": vocab.hash,
    }))
    return 0


def cmd_train(cfg: RunConfig) -> int:
    _need(cfg, "data_dir", "labels")
    ds, vocab = load_corpus(cfg.data_dir, cfg.labels, _load_vocab(cfg), cfg.strict)
    summary = {"family": cfg.family, "n_samples": len(ds), "dim": ds.dim, "seed": cfg.seed}
    if cfg.cv:
        cv = cross_validate(ds, cfg.family, cfg.grid(cfg.family), cfg.cv_folds,
                            derive_seed(cfg.seed, "cv"), metric=cfg.metric, workers=cfg.n_workers)
        params = cv.best
        summary["cv"] = {"points": cv.points, "mean_scores": cv.mean_scores.tolist(),
                         "selected": cv.best}
    else:
        params = {"C": cfg.C, "gamma": cfg.gamma, "n_trees": cfg.n_trees}
    model = train_family(cfg.family, ds, params, derive_seed(cfg.seed, "forest"),
                         vocabulary_hash=vocab.hash)
    summary["hyperparameters"] = model.hyperparameters
    summary["train_accuracy"] = float(np.mean(model.predict(ds) == ds.labels))
    info = getattr(model, "info", None)
    summary["converged"] = bool(info.converged) if info is not None else True
    _write(cfg, "vocabulary.csv", vocab.to_csv())
    _write(cfg, "model.json", model_to_json(model))
    _write(cfg, "train_summary.json", _dump(summary))
    return 0


def cmd_distill(cfg: RunConfig) -> int:
    _need(cfg, "model", "vocab", "data_dir", "labels")
    vocab = _load_vocab(cfg)
    target = model_from_json(_read_text(cfg.model))
    if target.vocabulary_hash and target.vocabulary_hash != vocab.hash:
        raise VocabularyMismatch("model was trained on a different vocabulary")
    ds, _ = load_corpus(cfg.data_dir, cfg.labels, vocab)
    fit_idx, hold_idx = stratified_split(ds.labels, 1 - cfg.holdout_fraction,
                                         derive_seed(cfg.seed, "split"))
    grid = {"C": cfg.grid_C, "gamma": cfg.grid_gamma}
    s = distill(target, ds.subset(fit_idx), ds.subset(hold_idx).samples, grid,
                folds=cfg.cv_folds, seed=derive_seed(cfg.seed, "cv"), workers=cfg.n_workers)
    _write(cfg, "surrogate.json", surrogate_to_json(s))
    _write(cfg, "fidelity.json", _dump({
        "target": s.target_id, "train_agreement": s.fidelity.train,
        "holdout_agreement": s.fidelity.holdout, "n_train": s.fidelity.n_train,
        "n_holdout": s.fidelity.n_holdout, "selected": s.cv.best,
    }))
    return 0


def cmd_explain(cfg: RunConfig) -> int:
    model, vocab, handle = _load_model_and_handle(cfg)
    ds = None
    if cfg.data_dir and cfg.labels:
        ds, _ = load_corpus(cfg.data_dir, cfg.labels, vocab)
    if cfg.sample:
        x = vectorize(read_sample(cfg.sample), vocab)
        r = local_relevance(handle, x)
        freqs = feature_frequencies(ds) if ds is not None else None
        ranked = top_k(r, vocab, k=cfg.top_k, frequencies=freqs)
        stem = os.path.basename(cfg.sample)
        if cfg.format == "csv":
            _write(cfg, f"explanation_{stem}.csv", ranked.to_csv())
        else:
            _write(cfg, f"explanation_{stem}.json", _dump({
                "sample": stem, "score": model.score(x), "explanation_score": handle.score(x),
                "degenerate": r.degenerate, "features": ranked.rows(),
            }))
        return 0
    if ds is None:
        raise ConfigError("explain needs --sample or --data-dir with --labels")
    g = global_relevance(handle, ds, cfg.grouping, cfg.max_families, vocab.hash)
    cols, compact = compact_view(g, vocab, cfg.aggregation)
    selected, fine = fine_grained_view(g, vocab, cfg.per_group_top)
    names = [vocab.descriptors[j].name for j in selected]
    if cfg.format == "csv":
        _write(cfg, "global_compact.csv", matrix_to_csv(g, cols, compact))
        _write(cfg, "global_fine.csv", matrix_to_csv(g, names, fine))
    else:
        _write(cfg, "global.json", _dump({
            "groups": [{"name": grp.name, "n_samples": grp.n_samples,
                        "n_degenerate": grp.n_degenerate} for grp in g.groups],
            "compact": {"columns": cols, "aggregation": cfg.aggregation, "values": compact.tolist()},
            "fine_grained": {"columns": names, "indices": selected, "values": fine.tolist()},
        }))
    if cfg.plot:
        os.makedirs(cfg.out_dir, exist_ok=True)
        _heatmap(os.path.join(cfg.out_dir, "global_compact.png"), "mean relevance per set",
                 g.names, cols, compact)
        _heatmap(os.path.join(cfg.out_dir, "global_fine.png"), "mean relevance, top features",
                 g.names, names, fine)
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    _need(cfg, "data_dir", "labels")
    ds, vocab = load_corpus(cfg.data_dir, cfg.labels, _load_vocab(cfg), cfg.strict)
    pc = ProtocolConfig(cfg.n_repetitions, cfg.train_size, cfg.cv_folds, tuple(cfg.families),
                        {f: cfg.grid(f) for f in FAMILIES}, cfg.metric, seed=cfg.seed,
                        workers=cfg.n_workers)
    result = run_protocol(ds, pc, vocab.hash)
    for fam, curve in result.average.items():
        _write(cfg, f"roc_{fam}.csv", curve.to_csv())
    _write(cfg, "evaluation_summary.json", _dump({
        "families": result.summary(),
        "train_indices": [r.train_idx.tolist() for r in result.repetitions],
    }))
    if cfg.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(4, 4))
        for fam, curve in result.average.items():
            ax.plot(curve.fpr, curve.tpr, label=f"{fam} (AUC {curve.auc:.4f})")
        ax.set_xscale("symlog", linthresh=1e-2)
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("detection rate")
        ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(os.path.join(cfg.out_dir, "roc.png"), metadata={"Software": None})
        plt.close(fig)
    return 0


def cmd_probe(cfg: RunConfig) -> int:
    _need(cfg, "data_dir", "labels")
    model, vocab, handle = _load_model_and_handle(cfg)
    ds, _ = load_corpus(cfg.data_dir, cfg.labels, vocab)
    reports, skipped = [], 0
    scores = model.decision_function(ds)
    for x, y, name, s in zip(ds.samples, ds.labels, ds.names, scores):
        if y != 1 or s < 0:
            skipped += 1
            continue
        res = greedy_evasion(model, x, cfg.mode, cfg.budget, handle)
        reports.append(res.report(name, vocab))
    _write(cfg, "probe.json", probe_report_json(reports))
    n = len(reports)
    _write(cfg, "probe_summary.json", _dump({
        "mode": cfg.mode, "budget": cfg.budget, "n_probed": n, "n_skipped": skipped,
        "evasion_rate": sum(r["succeeded"] for r in reports) / n if n else None,
        "mean_changes_when_evaded": float(np.mean([r["n_changes"] for r in reports if r["succeeded"]]))
        if any(r["succeeded"] for r in reports) else None,
    }))
    return 0


COMMANDS = {"vocab": cmd_vocab, "train": cmd_train, "distill": cmd_distill,
            "explain": cmd_explain, "evaluate": cmd_evaluate, "probe": cmd_probe}


def _floats(text):
    return [float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="0 = all cores")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("-v", "--verbose", action="store_true")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data-dir", dest="data_dir")
    data.add_argument("--labels", help="label manifest CSV (sha,label,family)")
    data.add_argument("--vocab", help="vocabulary CSV")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", help="model JSON")
    model.add_argument("--surrogate", help="surrogate JSON for non-differentiable models")

    grids = argparse.ArgumentParser(add_help=False)
    grids.add_argument("--grid-C", dest="grid_C", type=_floats)
    grids.add_argument("--grid-gamma", dest="grid_gamma", type=_floats)
    grids.add_argument("--grid-n-trees", dest="grid_n_trees",
                       type=lambda t: [int(v) for v in t.split(",")])
    grids.add_argument("--cv-folds", dest="cv_folds", type=int)

    parser = argparse.ArgumentParser(prog="drebin-explain", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vocab", parents=[common, data], help="build and export the vocabulary")
    p.add_argument("--permissive", dest="strict", action="store_false", default=None)

    p = sub.add_parser("train", parents=[common, data, grids], help="train one model")
    p.add_argument("--family", choices=FAMILIES)
    p.add_argument("--C", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n-trees", dest="n_trees", type=int)
    p.add_argument("--cv", action="store_true", default=None, help="select hyperparameters by CV")
    p.add_argument("--metric", choices=("accuracy", "dr_at_fpr"))

    p = sub.add_parser("distill", parents=[common, data, model, grids],
                       help="fit a differentiable surrogate")
    p.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)

    p = sub.add_parser("explain", parents=[common, data, model], help="local or global relevance")
    p.add_argument("--sample", help="feature file of one app (local explanation)")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--per-group-top", dest="per_group_top", type=int)
    p.add_argument("--aggregation", choices=("mean", "sum"))
    p.add_argument("--grouping", choices=("label", "family"))
    p.add_argument("--max-families", dest="max_families", type=int)
    p.add_argument("--plot", action="store_true", default=None)

    p = sub.add_parser("evaluate", parents=[common, data, grids], help="run the ROC protocol")
    p.add_argument("--n-repetitions", dest="n_repetitions", type=int)
    p.add_argument("--train-size", dest="train_size", type=float)
    p.add_argument("--families", type=lambda t: t.split(","))
    p.add_argument("--metric", choices=("accuracy", "dr_at_fpr"))
    p.add_argument("--plot", action="store_true", default=None)

    p = sub.add_parser("probe", parents=[common, data, model], help="greedy evasion probe")
    p.add_argument("--mode", choices=("add_only", "add_and_remove"))
    p.add_argument("--budget", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError, UnicodeDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ComputationError as exc:
        print(f"computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
