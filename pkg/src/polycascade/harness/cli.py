"""
Command-line entry point.

Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .. import gcn
from ..cascade import (
    CascadeConfig,
    extract_features,
    fused_names,
    parse_arms,
    parse_graphs,
    parse_grid,
    tabular_block,
)
from ..container import ModelFormatError
from ..descriptors import compute_descriptors, fit_additive_encoder
from ..learners import LearnerConfig, fit_learner, load_ensemble, r2, rmse, save_ensemble
from ..modelselect import history_rows, sfs_forward, tune
from ..molgraph import SmilesError, SmilesWarning, parse_smiles
from .config import ConfigError, as_bool, read_config
from .curve import learning_curve
from .data import DataError, load_dataset, write_dataset
from .report import emit_report, plot_table
from .synthetic import SyntheticConfig, generate_synthetic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

logger = logging.getLogger("polycascade")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


class _CvTarget(argparse.Action):
    """Remember whether --tune or --select-k came last so a following --cv goes to it."""

    def __call__(self, parser, ns, values, option_string=None):
        if option_string == "--tune":
            ns.tune = True
            ns._cv_target = "tune_cv"
        else:
            ns.select_k = values
            ns._cv_target = "select_cv"


class _Cv(argparse.Action):
    def __call__(self, parser, ns, values, option_string=None):
        setattr(ns, getattr(ns, "_cv_target", None) or "tune_cv", values)


def _positive(v: str) -> int:
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="polycascade", description="GCN feature transfer into tree ensembles.")
    p.add_argument("--config", help="flat key = value file; explicit flags override it")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("parse", help="parse one SMILES and print the graph and descriptors")
    s.add_argument("smiles", nargs="?")

    s = sub.add_parser("pretrain", help="fit the GCN extractor on a source dataset")
    s.add_argument("--data")
    s.add_argument("--val-frac", type=float, default=0.1)
    s.add_argument("--out")
    s.add_argument("--epochs", type=_positive, default=2000)
    s.add_argument("--patience", type=_positive, default=50)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--batch-size", type=_positive, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log", help="per-epoch loss CSV")
    s.add_argument("--lenient", action="store_true", help="skip bad rows instead of aborting")

    s = sub.add_parser("featurize", help="write fused tap + tabular features")
    s.add_argument("--data")
    s.add_argument("--model")
    s.add_argument("--tap", default="L-1", help="L, L-1, L-2 or none")
    s.add_argument("--out")
    s.add_argument("--lenient", action="store_true")

    s = sub.add_parser("train", help="fit a tree ensemble on a features file")
    s.add_argument("--feats")
    s.add_argument("--learner", choices=("gbt", "rf"), default="gbt")
    s.add_argument("--tune", nargs=0, action=_CvTarget, default=False)
    s.add_argument("--trials", type=_positive, default=50)
    s.add_argument("--select-k", type=_positive, action=_CvTarget, default=None)
    s.add_argument("--cv", type=_positive, action=_Cv, help="folds for the preceding --tune or --select-k")
    s.add_argument("--tune-cv", type=_positive, default=3)
    s.add_argument("--select-cv", type=_positive, default=5)
    s.add_argument("--out")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--history", help="tuning history CSV")

    s = sub.add_parser("evaluate", help="score a fitted ensemble on a features file")
    s.add_argument("--model")
    s.add_argument("--feats")
    s.add_argument("--out")

    s = sub.add_parser("curve", help="learning-curve experiment")
    s.add_argument("--source")
    s.add_argument("--target")
    s.add_argument("--model", help="pretrained extractor; skips pretraining")
    s.add_argument("--arms", default="baseline,opt1,opt2,opt3")
    s.add_argument("--grid", default="10:190:30")
    s.add_argument("--learner", choices=("gbt", "rf"), default="gbt")
    s.add_argument("--seeds", default="0")
    s.add_argument("--tune", nargs=0, action=_CvTarget, default=False)
    s.add_argument("--trials", type=_positive, default=50)
    s.add_argument("--select-k", type=_positive, action=_CvTarget, default=None)
    s.add_argument("--cv", type=_positive, action=_Cv)
    s.add_argument("--tune-cv", type=_positive, default=3)
    s.add_argument("--select-cv", type=_positive, default=5)
    s.add_argument("--epochs", type=_positive, default=2000)
    s.add_argument("--patience", type=_positive, default=50)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--val-frac", type=float, default=0.1)
    s.add_argument("--pretrain-seed", type=int, default=0)
    s.add_argument("--out-dir")
    s.add_argument("--lenient", action="store_true")

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise", type=float, default=5.0)
    s.add_argument("--coef-seed", type=int, default=SyntheticConfig.coef_seed)
    s.add_argument("--motif-coef", type=float, default=None)
    s.add_argument("--additive-rate", type=float, default=0.0)
    s.add_argument("--out")

    s = sub.add_parser("plot", help="SVG line plot of a metric table")
    s.add_argument("--report")
    s.add_argument("--metric", choices=("r2", "rmse"), default="r2")
    s.add_argument("--out")
    return p


REQUIRED = {
    "parse": ["smiles"],
    "pretrain": ["data", "out"],
    "featurize": ["data", "model", "out"],
    "train": ["feats", "out"],
    "evaluate": ["model", "feats", "out"],
    "curve": ["source", "out_dir"],
    "synth": ["out"],
    "plot": ["report", "out"],
}


def _config_argv(sub: argparse.ArgumentParser, values: dict[str, str]) -> list[str]:
    """Turn config entries into flags placed ahead of the real command line."""
    by_dest = {a.dest: a for a in sub._actions}
    argv: list[str] = []
    positional: list[str] = []
    for key, value in values.items():
        action = by_dest.get(key)
        if action is None:
            raise ConfigError(f"config key {key!r} is not an option of this command")
        if not action.option_strings:
            positional.append(value)
            continue
        flag = next(s for s in action.option_strings if s.startswith("--"))
        if action.nargs == 0:
            if as_bool(key, value):
                argv.append(flag)
        else:
            argv += [flag, value]
    return positional + argv


def _parse(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        raise UsageError("a subcommand is required (try --help)")
    if args.config:
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sub = subparsers.choices[args.command]
        cfg = read_config(args.config)
        idx = argv.index(args.command)
        merged = argv[: idx + 1] + _config_argv(sub, cfg) + argv[idx + 1 :]
        args = parser.parse_args(merged)
    required = REQUIRED[args.command]
    if args.command == "featurize" and str(args.tap).strip().lower() == "none":
        required = [k for k in required if k != "model"]
    if args.command == "curve" and args.model:
        required = [k for k in required if k != "source"]
    missing = [k for k in required if getattr(args, k, None) in (None, "")]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return args


# ---------------------------------------------------------------- feature files

META_COLUMNS = ("id", "smiles", "target")


def write_features(path, records, matrix: np.ndarray, names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(META_COLUMNS) + names)
        for i, (r, row) in enumerate(zip(records, matrix)):
            sid = r.sample_id if r.sample_id is not None else str(i)
            w.writerow([sid, r.smiles, repr(float(r.target))] + [repr(float(v)) for v in row])


def read_features(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Return (feature names, X, y) from a featurize output file."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0][:3]) != META_COLUMNS:
        raise DataError(f"{path}: not a features file (header must start with id,smiles,target)")
    names = rows[0][3:]
    if not names:
        raise DataError(f"{path}: no feature columns")
    try:
        body = np.array([[float(v) for v in row[2:]] for row in rows[1:]], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value ({exc})") from None
    if body.size == 0:
        raise DataError(f"{path}: no rows")
    if body.shape[1] != len(names) + 1 or not np.all(np.isfinite(body)):
        raise DataError(f"{path}: ragged or non-finite rows")
    return names, body[:, 1:], body[:, 0]


# ---------------------------------------------------------------- commands

def cmd_parse(args) -> int:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", SmilesWarning)
        g = parse_smiles(args.smiles)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(g.dump())
    for k, v in compute_descriptors(g).as_dict().items():
        print(f"{k}\t{v:g}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    from ..cascade import pretrain

    records = load_dataset(args.data, strict=not args.lenient)
    cfg = CascadeConfig(
        val_frac=args.val_frac, epochs=args.epochs, patience=args.patience, lr=args.lr,
        batch_size=args.batch_size, pretrain_seed=args.seed,
    )
    if not 0 < args.val_frac < 0.5:
        raise UsageError("--val-frac must be in (0, 0.5)")
    model, log, parts, test_r2 = pretrain(records, cfg)
    gcn.save_model(model, args.out)
    if args.log:
        log.to_csv(args.log)
    print(f"epochs={log.stopped_epoch} best_epoch={log.best_epoch} source_test_r2={test_r2:.4f} -> {args.out}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    records = load_dataset(args.data, strict=not args.lenient)
    graphs = parse_graphs(records)
    encoder = fit_additive_encoder([r.additive for r in records])
    tab, tab_names = tabular_block(records, graphs, encoder)
    if args.tap.lower() == "none":
        gnn_block = np.zeros((len(records), 0))
    else:
        model = gcn.load_model(args.model)
        gnn_block = extract_features(model, graphs, gcn.TapPoint.parse(args.tap))
    X = np.hstack([gnn_block, tab])
    write_features(args.out, records, X, fused_names(gnn_block.shape[1], tab_names))
    print(f"{X.shape[0]} rows x {X.shape[1]} features -> {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    names, X, y = read_features(args.feats)
    base = LearnerConfig(kind=args.learner)
    cols = list(range(X.shape[1]))
    extra: dict = {"feats": str(args.feats)}
    if args.select_k:
        if args.select_k > X.shape[1]:
            raise UsageError(f"--select-k {args.select_k} exceeds {X.shape[1]} features")
        sel = sfs_forward(X, y, base, k_folds=args.select_cv, max_features=args.select_k, seed=args.seed)
        cols = sel.selected
        extra["sfs_scores"] = sel.scores
    learner = base
    if args.tune:
        res = tune(X[:, cols], y, args.learner, n_trials=args.trials, k_folds=args.tune_cv, seed=args.seed)
        learner = base.with_params(**res.best.params)
        extra["tuned"] = res.best.params
        extra["best_cv_r2"] = res.best.cv_mean_r2
        if args.history:
            rows = history_rows(res)
            with open(args.history, "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
                w.writeheader()
                w.writerows(rows)
    model = fit_learner(X[:, cols], y, learner, seed=args.seed)
    model.feature_names = [names[j] for j in cols]
    save_ensemble(model, args.out, extra)
    print(f"{args.learner} on {len(cols)} features, train R2 {r2(y, model.predict(X[:, cols])):.4f} -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, _ = load_ensemble(args.model)
    names, X, y = read_features(args.feats)
    index = {n: j for j, n in enumerate(names)}
    missing = [n for n in model.feature_names if n not in index]
    if missing:
        raise DataError(f"{args.feats}: lacks feature column(s) {missing[:3]}")
    pred = model.predict(X[:, [index[n] for n in model.feature_names]])
    score_r2, score_rmse = r2(y, pred), rmse(y, pred)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "r2", "rmse"])
        w.writerow([len(y), repr(score_r2), repr(score_rmse)])
    print(f"n={len(y)} r2={score_r2:.4f} rmse={score_rmse:.4f}")
    return EXIT_OK


def cmd_curve(args) -> int:
    try:
        grid = parse_grid(args.grid)
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
        parse_arms(args.arms)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = CascadeConfig(
        arms=[a for a in args.arms.split(",") if a.strip()], grid=grid, seeds=seeds, learner=args.learner,
        tune=bool(args.tune), trials=args.trials, tune_cv=args.tune_cv, select_k=args.select_k,
        select_cv=args.select_cv, pretrain_seed=args.pretrain_seed, val_frac=args.val_frac,
        epochs=args.epochs, patience=args.patience, lr=args.lr,
    )
    report = learning_curve(cfg, args.source, args.target, args.model, args.out_dir, strict=not args.lenient)
    agg = report.aggregate("r2")
    print("N_train\t" + "\t".join(str(n) for n in report.grid))
    for arm in report.arms:
        print(arm + "\t" + "\t".join(f"{agg[arm][n]:.3f}" for n in report.grid))
    failed = sum(not c.ok for c in report.cells)
    if failed:
        print(f"{failed} cell(s) failed; see cells.csv", file=sys.stderr)
    return EXIT_OK


def cmd_synth(args) -> int:
    records, coefs = generate_synthetic(
        SyntheticConfig(
            n=args.n, seed=args.seed, noise=args.noise, coef_seed=args.coef_seed,
            motif_coef=args.motif_coef, additive_rate=args.additive_rate,
        )
    )
    write_dataset(args.out, records)
    print(json.dumps({"n": len(records), "coefficients": coefs.__dict__}, sort_keys=True))
    return EXIT_OK


def cmd_plot(args) -> int:
    Path(args.out).write_text(plot_table(args.report, args.metric))
    return EXIT_OK


COMMANDS = {
    "parse": cmd_parse,
    "pretrain": cmd_pretrain,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "curve": cmd_curve,
    "synth": cmd_synth,
    "plot": cmd_plot,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse(argv)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, SmilesError, ModelFormatError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
