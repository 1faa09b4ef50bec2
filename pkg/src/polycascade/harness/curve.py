"""Learning-curve driver: file paths in, ExperimentReport out."""

from __future__ import annotations

import logging
from pathlib import Path

from .. import gcn
from ..cascade import CascadeConfig, run_cascade
from .data import load_dataset
from .report import ExperimentReport, emit_report

logger = logging.getLogger(__name__)


def learning_curve(
    config: CascadeConfig,
    source: str | Path | None = None,
    target: str | Path | None = None,
    model_path: str | Path | None = None,
    out_dir: str | Path | None = None,
    strict: bool = True,
) -> ExperimentReport:
    """Load data (and a pretrained model if given), run the grid, optionally write files."""
    src = load_dataset(source, strict=strict) if source else None
    tgt = load_dataset(target, strict=strict) if target else None
    model = gcn.load_model(model_path) if model_path else None
    report = run_cascade(config, src, tgt, model=model)
    report.config.update(
        {"source": str(source) if source else None, "target": str(target) if target else None,
         "model": str(model_path) if model_path else None}
    )
    if out_dir is not None:
        emit_report(report, out_dir)
    return report
