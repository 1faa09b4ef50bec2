"""Dataset CSV ingestion and the seeded split protocol."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..molgraph import SmilesError, SmilesWarning, parse_smiles

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("smiles", "target")


class DataError(ValueError):
    """Bad input data: schema problems, invalid rows, too few rows."""


@dataclass(frozen=True)
class DatasetRecord:
    smiles: str
    target: float
    additive_name: str | None = None
    additive_amount: float | None = None
    descriptors: Mapping[str, float] = field(default_factory=dict)
    sample_id: str | None = None

    @property
    def additive(self) -> tuple[str, float] | None:
        if not self.additive_name:
            return None
        return (self.additive_name, float(self.additive_amount or 0.0))


@dataclass
class LoadSummary:
    n_rows: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)


def _parse_row(row: dict, line: int) -> DatasetRecord:
    smiles = (row.get("smiles") or "").strip()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmilesWarning)
            parse_smiles(smiles)
    except SmilesError as exc:
        raise DataError(f"line {line}: unparseable SMILES {smiles!r}: {exc}") from None
    try:
        target = float(row["target"])
    except (TypeError, ValueError):
        raise DataError(f"line {line}: target {row.get('target')!r} is not a number") from None
    if not math.isfinite(target):
        raise DataError(f"line {line}: target must be finite")

    name = (row.get("additive_name") or "").strip() or None
    raw_amt = (row.get("additive_amount") or "").strip()
    amount = None
    if raw_amt:
        try:
            amount = float(raw_amt)
        except ValueError:
            raise DataError(f"line {line}: additive_amount {raw_amt!r} is not a number") from None
        if not math.isfinite(amount) or amount < 0:
            raise DataError(f"line {line}: additive_amount must be finite and >= 0")
    if name and amount is None:
        raise DataError(f"line {line}: additive {name!r} has no amount")

    desc = {}
    for key, val in row.items():
        if key and key.startswith("desc_") and val not in (None, ""):
            try:
                desc[key[5:]] = float(val)
            except ValueError:
                raise DataError(f"line {line}: column {key} value {val!r} is not a number") from None
    sid = (row.get("id") or row.get("sample_id") or "").strip() or None
    return DatasetRecord(smiles, target, name, amount if name else None, desc, sid)


def load_dataset(path, strict: bool = True, summary: LoadSummary | None = None) -> list[DatasetRecord]:
    """Read a dataset CSV.

    Required columns are ``smiles`` and ``target``; ``additive_name``,
    ``additive_amount``, ``id`` and ``desc_*`` columns are optional. In
    strict mode the first bad row raises; otherwise bad rows are skipped,
    logged with their line number and listed in ``summary``.
    """
    summary = summary if summary is not None else LoadSummary()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing required column(s): {', '.join(missing)}")
        reader.fieldnames = header
        records = []
        for row in reader:
            line = reader.line_num
            summary.n_rows += 1
            try:
                records.append(_parse_row(row, line))
            except DataError as exc:
                if strict:
                    raise
                summary.skipped.append((line, str(exc)))
                logger.warning("skipping %s", exc)
    if summary.skipped:
        logger.warning("%s: skipped %d of %d rows", path, len(summary.skipped), summary.n_rows)
    if not records:
        raise DataError(f"{path}: no valid rows")
    return records


def write_dataset(path, records: Sequence[DatasetRecord]) -> None:
    desc_keys = sorted({k for r in records for k in r.descriptors})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "smiles", "target", "additive_name", "additive_amount"] + [f"desc_{k}" for k in desc_keys])
        for i, r in enumerate(records):
            w.writerow(
                [
                    r.sample_id if r.sample_id is not None else i,
                    r.smiles,
                    repr(float(r.target)),
                    r.additive_name or "",
                    "" if r.additive_amount is None else repr(float(r.additive_amount)),
                ]
                + [repr(float(r.descriptors[k])) if k in r.descriptors else "" for k in desc_keys]
            )


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, ...]
    seed: int = 0
    names: tuple[str, ...] = ()

    def __post_init__(self):
        if any(f <= 0 for f in self.fractions):
            raise ValueError("split fractions must be positive")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(self.fractions)}")
        if self.names and len(self.names) != len(self.fractions):
            raise ValueError("one name per fraction")

    @classmethod
    def source(cls, seed: int = 0) -> "SplitSpec":
        return cls((0.8, 0.1, 0.1), seed, ("train", "val", "test"))

    @classmethod
    def target(cls, seed: int = 0) -> "SplitSpec":
        return cls((0.6, 0.4), seed, ("train", "test"))

    def partition_names(self) -> tuple[str, ...]:
        return self.names or tuple(f"part{i}" for i in range(len(self.fractions)))

    def sizes(self, n: int) -> list[int]:
        sizes = [math.floor(f * n + 1e-9) for f in self.fractions]
        sizes[0] += n - sum(sizes)
        return sizes


def split(records, spec: SplitSpec) -> dict[str, np.ndarray]:
    """Seeded shuffle, then contiguous cuts; the rounding remainder goes to the first partition.

    ``records`` may be a sequence or a row count. Returns index arrays by
    partition name, each in shuffled order.
    """
    n = records if isinstance(records, int) else len(records)
    sizes = spec.sizes(n)
    if min(sizes) < 1:
        raise DataError(f"{n} rows are too few for a split of {spec.fractions}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    out, start = {}, 0
    for name, size in zip(spec.partition_names(), sizes):
        out[name] = perm[start : start + size]
        start += size
    return out
