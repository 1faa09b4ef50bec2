"""
Feature transfer: tap-point extraction, fusion with tabular features,
external embeddings, and the pretrain-then-predict grid.
"""

from __future__ import annotations

import csv
import logging
import math
import time
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import gcn
from .descriptors import (
    DESCRIPTOR_NAMES,
    AdditiveEncoder,
    descriptor_matrix,
    fit_additive_encoder,
    standardize,
)
from .gcn import GcnConfig, GcnModel, TapPoint, TrainOptions
from .harness.data import DataError, DatasetRecord, SplitSpec, split
from .harness.report import CellResult, ExperimentReport
from .learners import LearnerConfig, fit_learner, r2, rmse
from .modelselect import sfs_forward, tune
from .molgraph import MolecularGraph, SmilesWarning, parse_smiles

logger = logging.getLogger(__name__)

DEFAULT_GRID = (10, 40, 70, 100, 130, 160, 190)
ARM_TAPS = {"opt1": TapPoint.L, "opt2": TapPoint.L_MINUS_1, "opt3": TapPoint.L_MINUS_2}


# ---------------------------------------------------------------- feature blocks

@dataclass(frozen=True)
class CascadeFeatureRow:
    gnn_features: np.ndarray
    tabular: np.ndarray
    provenance: str

    @property
    def fused(self) -> np.ndarray:
        return np.concatenate([self.gnn_features, self.tabular])


@dataclass
class FeatureMatrix:
    """A transferred block and a tabular block over the same rows."""

    gnn: np.ndarray
    tabular: np.ndarray
    tabular_names: list[str]
    provenance: str

    def __post_init__(self):
        self.gnn = np.asarray(self.gnn, dtype=float).reshape(len(self.tabular), -1)
        if self.gnn.shape[0] != self.tabular.shape[0]:
            raise ValueError("blocks must have the same number of rows")
        if self.tabular.shape[1] != len(self.tabular_names):
            raise ValueError("one name per tabular column")

    @property
    def fused(self) -> np.ndarray:
        return fuse(self.gnn, self.tabular)

    @property
    def names(self) -> list[str]:
        return fused_names(self.gnn.shape[1], self.tabular_names)

    def row(self, i: int) -> CascadeFeatureRow:
        return CascadeFeatureRow(self.gnn[i], self.tabular[i], self.provenance)


def extract_features(model: GcnModel, graphs: Sequence[MolecularGraph], tap: TapPoint | str) -> np.ndarray:
    """Row i holds the activations of graph i at ``tap``."""
    if len(graphs) == 0:
        raise ValueError("no graphs to featurize")
    return gcn.tap_matrix(model, graphs, tap)


def fuse(gnn_matrix, tabular_matrix) -> np.ndarray:
    """Row-wise concatenation with the transferred block first."""
    g = np.asarray(gnn_matrix, dtype=float)
    t = np.asarray(tabular_matrix, dtype=float)
    if g.ndim != 2 or t.ndim != 2:
        raise ValueError("fuse expects two 2-D matrices")
    if g.shape[0] != t.shape[0]:
        raise ValueError(f"row-count mismatch: {g.shape[0]} vs {t.shape[0]}")
    return np.hstack([g, t])


def fused_names(gnn_width: int, tabular_names: Sequence[str]) -> list[str]:
    return [f"gnn_{i}" for i in range(gnn_width)] + list(tabular_names)


def load_external_embeddings(path, keys: Sequence[str]) -> np.ndarray:
    """Read a ``smiles,e0,e1,...`` CSV and return rows in ``keys`` order."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty embedding file") from None
        if not header or header[0].strip() != "smiles":
            raise DataError(f"{path}: first column must be 'smiles'")
        width = len(header) - 1
        if width == 0:
            raise DataError(f"{path}: embedding width is zero")
        table: dict[str, np.ndarray] = {}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) - 1 != width:
                raise DataError(f"{path}: line {line} has {len(row) - 1} values, expected {width}")
            try:
                vec = np.array([float(v) for v in row[1:]])
            except ValueError:
                raise DataError(f"{path}: line {line} holds a non-numeric value") from None
            if not np.all(np.isfinite(vec)):
                raise DataError(f"{path}: line {line} holds a non-finite value")
            table[row[0].strip()] = vec
    missing = [k for k in keys if k not in table]
    if missing:
        raise DataError(f"{path}: no embedding for SMILES {missing[0]!r}" + (f" (+{len(missing) - 1} more)" if len(missing) > 1 else ""))
    return np.vstack([table[k] for k in keys]) if keys else np.zeros((0, width))


def write_embeddings(path, keys: Sequence[str], matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles"] + [f"e{i}" for i in range(matrix.shape[1])])
        for k, row in zip(keys, matrix):
            w.writerow([k] + [repr(float(v)) for v in row])


# ---------------------------------------------------------------- tabular block

def parse_graphs(records: Sequence[DatasetRecord]) -> list[MolecularGraph]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SmilesWarning)
        return [parse_smiles(r.smiles) for r in records]


def precomputed_columns(records: Sequence[DatasetRecord]) -> list[str]:
    keys = sorted({k for r in records for k in r.descriptors})
    for r in records:
        if r.descriptors and set(r.descriptors) != set(keys):
            raise DataError(f"record {r.sample_id or r.smiles!r} lacks some desc_* columns")
    return keys


def tabular_block(
    records: Sequence[DatasetRecord],
    graphs: Sequence[MolecularGraph],
    encoder: AdditiveEncoder | None = None,
) -> tuple[np.ndarray, list[str]]:
    """Graph descriptors, then any desc_* columns, then additive flag/amount pairs."""
    names = list(DESCRIPTOR_NAMES)
    blocks = [descriptor_matrix(graphs)]
    extra = precomputed_columns(records)
    if extra:
        blocks.append(np.array([[r.descriptors.get(k, math.nan) for k in extra] for r in records], dtype=float))
        names += [f"desc_{k}" for k in extra]
    if encoder is not None and encoder.width:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            blocks.append(encoder.encode_many([r.additive for r in records]))
        names += encoder.column_names
    X = np.hstack(blocks)
    if not np.all(np.isfinite(X)):
        raise DataError("tabular features contain missing or non-finite values")
    return X, names


# ---------------------------------------------------------------- arms and config

@dataclass(frozen=True)
class Arm:
    name: str
    tap: TapPoint | None = None
    external: str | None = None

    @property
    def provenance(self) -> str:
        if self.external:
            return "external"
        return self.tap.value if self.tap else "none"

    @classmethod
    def parse(cls, text: str) -> "Arm":
        t = text.strip()
        low = t.lower()
        if low == "baseline":
            return cls("baseline")
        if low.startswith("external:"):
            path = t.split(":", 1)[1]
            if not path:
                raise ValueError("external arm needs a path")
            return cls(f"external:{Path(path).name}", external=path)
        if low in ARM_TAPS:
            return cls(low, ARM_TAPS[low])
        try:
            tap = TapPoint.parse(t)
        except ValueError:
            raise ValueError(f"unknown arm {text!r}") from None
        return cls({v: k for k, v in ARM_TAPS.items()}[tap], tap)


def parse_arms(text: str | Sequence[str]) -> list[Arm]:
    items = text.split(",") if isinstance(text, str) else list(text)
    arms = [Arm.parse(a) for a in items if a.strip()]
    names = [a.name for a in arms]
    if "baseline" not in names:
        arms.insert(0, Arm("baseline"))
    if len(set(a.name for a in arms)) != len(arms):
        raise ValueError("arms must be distinct")
    return arms


def parse_grid(text: str | Sequence[int]) -> list[int]:
    """``start:stop:step`` (stop inclusive) or a comma list."""
    if not isinstance(text, str):
        grid = [int(v) for v in text]
    elif ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"grid must be start:stop:step, got {text!r}")
        grid = list(range(parts[0], parts[1] + 1, parts[2]))
    else:
        grid = [int(v) for v in text.split(",") if v.strip()]
    if not grid or min(grid) < 1 or sorted(set(grid)) != grid:
        raise ValueError(f"grid must be strictly increasing positive sizes, got {text!r}")
    return grid


@dataclass
class CascadeConfig:
    arms: list[str] = field(default_factory=lambda: ["baseline", "opt1", "opt2", "opt3"])
    grid: list[int] = field(default_factory=lambda: list(DEFAULT_GRID))
    seeds: list[int] = field(default_factory=lambda: [0])
    learner: str = "gbt"
    tune: bool = False
    trials: int = 50
    tune_cv: int = 3
    select_k: int | None = None
    select_cv: int = 5
    pretrain_seed: int = 0
    val_frac: float = 0.1
    epochs: int = 2000
    patience: int = 50
    lr: float = 1e-3
    batch_size: int = 32

    def train_options(self) -> TrainOptions:
        return TrainOptions(lr=self.lr, batch_size=self.batch_size, max_epochs=self.epochs, patience=self.patience)


def cell_seed(seed: int, arm: str, n_train: int) -> int:
    """Stable per-cell RNG seed: independent of execution order."""
    return (int(seed) ^ zlib.crc32(f"{arm}|{n_train}".encode())) & 0x7FFFFFFF


# ---------------------------------------------------------------- pipeline

def pretrain(
    records: Sequence[DatasetRecord],
    config: CascadeConfig | None = None,
    gcn_config: GcnConfig | None = None,
    graphs: Sequence[MolecularGraph] | None = None,
):
    """Split the source (1-2v / v / v), fit the extractor and score it on the held-out part.

    Returns (model, training log, partitions, test R^2).
    """
    cfg = config or CascadeConfig()
    v = cfg.val_frac
    graphs = graphs if graphs is not None else parse_graphs(records)
    parts = split(records, SplitSpec((1 - 2 * v, v, v), cfg.pretrain_seed, ("train", "val", "test")))
    y = np.array([r.target for r in records])
    pick = lambda idx: [graphs[i] for i in idx]  # noqa: E731
    model, log = gcn.train(
        gcn_config,
        pick(parts["train"]),
        y[parts["train"]],
        pick(parts["val"]),
        y[parts["val"]],
        seed=cfg.pretrain_seed,
        options=cfg.train_options(),
    )
    test_r2 = r2(y[parts["test"]], gcn.predict(model, pick(parts["test"])))
    logger.info("pretrained %d epochs (best %d), source test R2 %.4f", log.stopped_epoch, log.best_epoch, test_r2)
    return model, log, parts, test_r2


def _gnn_blocks(arms: Sequence[Arm], model: GcnModel | None, records, graphs) -> dict[str, np.ndarray | Exception]:
    blocks: dict[str, np.ndarray | Exception] = {}
    for arm in arms:
        try:
            if arm.external:
                blocks[arm.name] = load_external_embeddings(arm.external, [r.smiles for r in records])
            elif arm.tap is not None:
                if model is None:
                    raise ValueError(f"arm {arm.name} needs a pretrained model")
                blocks[arm.name] = extract_features(model, graphs, arm.tap)
            else:
                blocks[arm.name] = np.zeros((len(records), 0))
        except Exception as exc:  # recorded per cell below
            blocks[arm.name] = exc
    return blocks


def run_cell(
    arm: Arm,
    gnn_all: np.ndarray,
    tab_all: np.ndarray,
    tab_names: list[str],
    y: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    config: CascadeConfig,
    seed: int,
) -> CellResult:
    n = len(train_idx)
    cs = cell_seed(seed, arm.name, n)
    cell = CellResult(arm.name, n, seed)
    t0 = time.perf_counter()
    if gnn_all.shape[1]:
        # scale the transferred block with statistics of this cell's train rows only
        _, stats = standardize(gnn_all[train_idx])
        gnn_all = standardize(gnn_all, stats)[0]
    fm = FeatureMatrix(gnn_all, tab_all, tab_names, arm.provenance)
    X, names = fm.fused, fm.names
    Xtr, ytr = X[train_idx], y[train_idx]
    cols = np.arange(X.shape[1])
    base = LearnerConfig(kind=config.learner)
    if config.select_k:
        k = min(config.select_k, X.shape[1])
        folds = min(config.select_cv, n)
        sel = sfs_forward(Xtr, ytr, base, k_folds=folds, max_features=k, seed=cs)
        cols = np.array(sel.selected)
        cell.selected = [names[j] for j in cols]
    learner = base
    if config.tune:
        res = tune(Xtr[:, cols], ytr, config.learner, n_trials=config.trials, k_folds=min(config.tune_cv, n), seed=cs)
        learner = base.with_params(**res.best.params)
        cell.hyperparams = dict(res.best.params)
    model = fit_learner(Xtr[:, cols], ytr, learner, seed=cs)
    pred = model.predict(X[test_idx][:, cols])
    cell.r2 = r2(y[test_idx], pred)
    cell.rmse = rmse(y[test_idx], pred)
    cell.wall_time = time.perf_counter() - t0
    return cell


def run_grid(
    model: GcnModel | None,
    target: Sequence[DatasetRecord],
    config: CascadeConfig,
    graphs: Sequence[MolecularGraph] | None = None,
) -> ExperimentReport:
    """Score every (arm, N_train, seed) cell on the target dataset.

    For each seed the target is split 60/40; training subsets are the first
    N_train rows of the shuffled train partition, so they are nested and
    never touch the test partition. A failing cell is recorded and the
    grid carries on.
    """
    arms = parse_arms(config.arms)
    graphs = graphs if graphs is not None else parse_graphs(target)
    y = np.array([r.target for r in target], dtype=float)
    report = ExperimentReport([a.name for a in arms], list(config.grid), list(config.seeds), config=asdict(config))
    report.config["gamma_rule"] = "ceil(0.25*n)"
    blocks = _gnn_blocks(arms, model, target, graphs)
    for seed in config.seeds:
        parts = split(target, SplitSpec.target(seed))
        train_part, test_idx = parts["train"], parts["test"]
        if max(config.grid) > len(train_part):
            raise DataError(f"N_train={max(config.grid)} exceeds the {len(train_part)}-row train partition")
        encoder = fit_additive_encoder([target[i].additive for i in train_part])
        tab_all, tab_names = tabular_block(target, graphs, encoder)
        for n in config.grid:
            train_idx = train_part[:n]
            for arm in arms:
                block = blocks[arm.name]
                try:
                    if isinstance(block, Exception):
                        raise block
                    cell = run_cell(arm, block, tab_all, tab_names, y, train_idx, test_idx, config, seed)
                except Exception as exc:
                    logger.warning("cell %s N=%d seed=%d failed: %s", arm.name, n, seed, exc)
                    cell = CellResult(arm.name, n, seed, status="failed", error=f"{type(exc).__name__}: {exc}")
                report.cells.append(cell)
    return report


def run_cascade(
    config: CascadeConfig,
    source: Sequence[DatasetRecord] | None = None,
    target: Sequence[DatasetRecord] | None = None,
    model: GcnModel | None = None,
    gcn_config: GcnConfig | None = None,
) -> ExperimentReport:
    """Pretrain on ``source`` (unless ``model`` is given) and run the grid on ``target``.

    Without a target, the held-out source test partition stands in for it.
    """
    needs_model = any(a.tap is not None for a in parse_arms(config.arms))
    src_test = None
    pre = {}
    if model is None and needs_model:
        if source is None:
            raise ValueError("a source dataset or a pretrained model is required")
        model, log, parts, test_r2 = pretrain(source, config, gcn_config)
        src_test = [source[i] for i in parts["test"]]
        pre = {"pretrain_epochs": log.stopped_epoch, "pretrain_best_epoch": log.best_epoch, "source_test_r2": test_r2}
    if target is None:
        if src_test is None:
            if source is None:
                raise ValueError("no target dataset")
            parts = split(source, SplitSpec((1 - 2 * config.val_frac, config.val_frac, config.val_frac), config.pretrain_seed))
            src_test = [source[i] for i in parts["part2"]]
        target = src_test
    report = run_grid(model, target, config)
    report.config.update(pre)
    return report
