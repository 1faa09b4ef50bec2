"""Experiment report container plus CSV tables and a dependency-free SVG line plot."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

METRICS = ("r2", "rmse")
HYPERPARAM_ORDER = ("n_estimators", "learning_rate", "max_depth", "min_samples_split", "min_samples_leaf")


@dataclass
class CellResult:
    arm: str
    n_train: int
    seed: int
    r2: float = math.nan
    rmse: float = math.nan
    status: str = "ok"
    error: str = ""
    selected: list[str] = field(default_factory=list)
    hyperparams: dict = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class ExperimentReport:
    arms: list[str]
    grid: list[int]
    seeds: list[int]
    cells: list[CellResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def cell(self, arm: str, n_train: int, seed: int) -> CellResult:
        for c in self.cells:
            if (c.arm, c.n_train, c.seed) == (arm, n_train, seed):
                return c
        raise KeyError((arm, n_train, seed))

    def missing_cells(self) -> list[tuple[str, int, int]]:
        have = {(c.arm, c.n_train, c.seed) for c in self.cells}
        return [(a, n, s) for a in self.arms for n in self.grid for s in self.seeds if (a, n, s) not in have]

    def aggregate(self, metric: str = "r2") -> dict[str, dict[int, float]]:
        """Mean over seeds of successful cells; NaN where every seed failed."""
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}")
        out: dict[str, dict[int, float]] = {}
        for arm in self.arms:
            out[arm] = {}
            for n in self.grid:
                vals = [getattr(c, metric) for c in self.cells if c.arm == arm and c.n_train == n and c.ok]
                out[arm][n] = float(np.mean(vals)) if vals else math.nan
        return out


def _fmt(v: float, decimals: int | None = None) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "failed"
    if math.isinf(v):
        return "undefined"
    if decimals is not None:
        return f"{v:.{decimals}f}"
    return repr(float(v))


def _parse_value(text: str) -> float:
    if text == "failed":
        return math.nan
    if text == "undefined":
        return -math.inf
    return float(text)


def metric_table_csv(report: ExperimentReport, metric: str, decimals: int | None = None) -> str:
    """Arms as rows, N_train as columns (the layout of the published tables)."""
    agg = report.aggregate(metric)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N_train"] + [str(n) for n in report.grid])
    for arm in report.arms:
        w.writerow([arm] + [_fmt(agg[arm][n], decimals) for n in report.grid])
    return buf.getvalue()


def read_metric_table(path) -> tuple[list[int], dict[str, list[float]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "N_train":
        raise ValueError(f"{path}: expected a header starting with N_train")
    grid = [int(x) for x in rows[0][1:]]
    table = {}
    for row in rows[1:]:
        if len(row) != len(grid) + 1:
            raise ValueError(f"{path}: row {row[0]!r} has {len(row) - 1} values for {len(grid)} columns")
        table[row[0]] = [_parse_value(x) for x in row[1:]]
    return grid, table


def cells_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["arm", "n_train", "seed", "status", "r2", "rmse", "selected", "hyperparams", "error"])
    for c in sorted(report.cells, key=lambda c: (report.arms.index(c.arm), c.n_train, c.seed)):
        w.writerow(
            [
                c.arm,
                c.n_train,
                c.seed,
                c.status,
                _fmt(c.r2) if c.ok else "",
                _fmt(c.rmse) if c.ok else "",
                ";".join(c.selected),
                json.dumps(c.hyperparams, sort_keys=True) if c.hyperparams else "",
                c.error,
            ]
        )
    return buf.getvalue()


def hyperparam_table_csv(report: ExperimentReport, arm: str, seed: int) -> str | None:
    """Hyperparameters as rows, N_train as columns; None when the arm was not tuned."""
    cells = {c.n_train: c for c in report.cells if c.arm == arm and c.seed == seed}
    if not any(c.hyperparams for c in cells.values()):
        return None
    keys = [k for k in HYPERPARAM_ORDER if any(k in c.hyperparams for c in cells.values())]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N_train"] + [str(n) for n in report.grid])
    for k in keys:
        row = [k]
        for n in report.grid:
            v = cells[n].hyperparams.get(k, "") if n in cells else ""
            row.append(f"{v:.3f}" if isinstance(v, float) else str(v))
        w.writerow(row)
    return buf.getvalue()


def _safe_name(arm: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in arm)


# ---------------------------------------------------------------- svg

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def svg_line_plot(
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    xlabel: str = "N_train",
    ylabel: str = "R2",
    title: str = "",
    width: int = 640,
    height: int = 420,
) -> str:
    """One polyline per series with markers, ticks, axis labels and a legend."""
    if not series:
        raise ValueError("nothing to plot")
    left, right, top, bottom = 70, 150, 40, 55
    pw, ph = width - left - right, height - top - bottom
    xs = [float(v) for v in x]
    finite = [v for vals in series.values() for v in vals if math.isfinite(v)]
    ylo, yhi = (min(finite), max(finite)) if finite else (0.0, 1.0)
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    if xhi == xlo:
        xlo, xhi = xlo - 1, xhi + 1

    def px(v):
        return left + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return top + (yhi - v) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<g class="axes" stroke="black" stroke-width="1">'
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}"/>'
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}"/></g>',
    ]
    ticks = ['<g class="ticks" font-family="sans-serif" font-size="11">']
    for v in xs:
        ticks.append(f'<line x1="{px(v):.2f}" y1="{top + ph}" x2="{px(v):.2f}" y2="{top + ph + 4}" stroke="black"/>')
        ticks.append(f'<text x="{px(v):.2f}" y="{top + ph + 17}" text-anchor="middle">{v:g}</text>')
    for v in np.linspace(ylo, yhi, 6):
        ticks.append(f'<line x1="{left - 4}" y1="{py(v):.2f}" x2="{left}" y2="{py(v):.2f}" stroke="black"/>')
        ticks.append(f'<text x="{left - 7}" y="{py(v) + 4:.2f}" text-anchor="end">{v:.3g}</text>')
    ticks.append("</g>")
    out += ticks
    out.append(
        f'<text class="xlabel" x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="13">{escape(xlabel)}</text>'
    )
    out.append(
        f'<text class="ylabel" x="18" y="{top + ph / 2:.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="13" transform="rotate(-90 18 {top + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    if title:
        out.append(
            f'<text class="title" x="{left + pw / 2:.1f}" y="22" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{escape(title)}</text>'
        )
    legend = ['<g class="legend" font-family="sans-serif" font-size="12">']
    for k, (name, vals) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        pts = [(px(a), py(b)) for a, b in zip(xs, vals) if math.isfinite(b)]
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in pts)
        out.append(
            f'<polyline class="series" data-series="{escape(name)}" fill="none" stroke="{color}" '
            f'stroke-width="2" points="{coords}"/>'
        )
        out += [f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>' for a, b in pts]
        ly = top + 10 + 18 * k
        legend.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 40}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        legend.append(f'<text x="{left + pw + 46}" y="{ly + 4}">{escape(name)}</text>')
    legend.append("</g>")
    out += legend
    out.append("</svg>")
    return "\n".join(out) + "\n"


def report_svg(report: ExperimentReport, metric: str = "r2") -> str:
    agg = report.aggregate(metric)
    series = {arm: [agg[arm][n] for n in report.grid] for arm in report.arms}
    return svg_line_plot(report.grid, series, "N_train", "R2" if metric == "r2" else "RMSE", f"{metric} vs N_train")


def plot_table(path, metric: str = "r2") -> str:
    grid, table = read_metric_table(path)
    return svg_line_plot(grid, table, "N_train", "R2" if metric == "r2" else "RMSE", f"{metric} vs N_train")


# ---------------------------------------------------------------- emission

def emit_report(report: ExperimentReport, out_dir, formats: Sequence[str] = ("csv", "svg")) -> list[Path]:
    """Write the report files into ``out_dir`` and return their paths.

    CSV: cells.csv, r2.csv, rmse.csv, hyperparams_<arm>_seed<k>.csv for tuned
    arms, config.json. SVG: r2.svg, rmse.svg. Wall times go to timings.csv so
    the other files stay byte-identical across repeated runs.
    """
    if not report.cells:
        raise ValueError("cannot emit an empty report")
    bad = set(formats) - {"csv", "svg"}
    if bad:
        raise ValueError(f"unknown report format(s): {sorted(bad)}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    files: dict[str, str] = {}
    if "csv" in formats:
        files["cells.csv"] = cells_csv(report)
        for m in METRICS:
            files[f"{m}.csv"] = metric_table_csv(report, m)
        for arm in report.arms:
            for seed in report.seeds:
                table = hyperparam_table_csv(report, arm, seed)
                if table is not None:
                    files[f"hyperparams_{_safe_name(arm)}_seed{seed}.csv"] = table
        files["config.json"] = json.dumps(report.config, sort_keys=True, indent=2, default=str) + "\n"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["arm", "n_train", "seed", "wall_time_s"])
        for c in report.cells:
            w.writerow([c.arm, c.n_train, c.seed, f"{c.wall_time:.3f}"])
        files["timings.csv"] = buf.getvalue()
    if "svg" in formats:
        for m in METRICS:
            files[f"{m}.svg"] = report_svg(report, m)
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text)
        paths.append(p)
    return paths
