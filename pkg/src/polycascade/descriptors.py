"""
Tabular features: a fixed graph-descriptor vector, additive encoding and
column standardization.
"""

from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .elements import HALOGENS, HYDROGEN_MASS
from .molgraph import BondOrder, MolecularGraph

DESCRIPTOR_NAMES: tuple[str, ...] = (
    "molecular_weight",
    "heavy_atom_count",
    "C_count",
    "N_count",
    "O_count",
    "S_count",
    "halogen_count",
    "ring_count",
    "aromatic_atom_count",
    "rotatable_bond_count",
    "hbd_count",
    "hba_count",
    "wiener_index",
    "mean_degree",
    "max_degree",
    "graph_diameter",
)


@dataclass(frozen=True)
class TabularFeatureSet:
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", values)
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if values.shape != (len(self.names),):
            raise ValueError(f"{len(self.names)} names but values of shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def distance_matrix(graph: MolecularGraph) -> np.ndarray:
    """All-pairs shortest-path lengths in bonds (inf between components)."""
    if graph.n_atoms == 0:
        return np.zeros((0, 0))
    return shortest_path(graph.adjacency.astype(float), method="D", directed=False, unweighted=True)


def compute_descriptors(graph: MolecularGraph) -> TabularFeatureSet:
    atoms = graph.atoms
    deg = graph.degrees
    elems = Counter(a.element for a in atoms)
    hcount = [a.implicit_h for a in atoms]

    mw = sum(a.mass for a in atoms) + HYDROGEN_MASS * sum(hcount)
    rotatable = sum(
        1
        for b in graph.bonds
        if b.order is BondOrder.SINGLE and not b.in_ring and deg[b.begin] > 1 and deg[b.end] > 1
    )
    dist = distance_matrix(graph)
    finite = dist[np.isfinite(dist)]
    wiener = float(np.triu(np.where(np.isfinite(dist), dist, 0.0), 1).sum())
    values = [
        mw,
        sum(1 for a in atoms if a.is_heavy),
        elems["C"],
        elems["N"],
        elems["O"],
        elems["S"],
        sum(elems[h] for h in HALOGENS),
        graph.ring_count,
        sum(1 for a in atoms if a.aromatic),
        rotatable,
        sum(1 for a, h in zip(atoms, hcount) if a.element in ("N", "O") and h > 0),
        elems["N"] + elems["O"],
        wiener,
        float(deg.mean()) if len(atoms) else 0.0,
        int(deg.max()) if len(atoms) else 0,
        float(finite.max()) if finite.size else 0.0,
    ]
    return TabularFeatureSet(DESCRIPTOR_NAMES, np.array(values, dtype=float))


def descriptor_matrix(graphs: Sequence[MolecularGraph]) -> np.ndarray:
    return np.vstack([compute_descriptors(g).values for g in graphs]) if graphs else np.zeros((0, len(DESCRIPTOR_NAMES)))


@dataclass(frozen=True)
class AdditiveEncoder:
    """Flag + amount (phr) column pair per additive seen during fitting.

    ``unknown_seen`` counts additive names encountered at encode time that
    were not in the training vocabulary.
    """

    vocabulary: dict[str, int]
    unknown_seen: Counter = field(default_factory=Counter, compare=False, repr=False)

    @property
    def width(self) -> int:
        return 2 * len(self.vocabulary)

    @property
    def column_names(self) -> list[str]:
        names = []
        for name in self.vocabulary:
            names += [f"{name}_flag", f"{name}_amt"]
        return names

    def encode(self, row: tuple[str, float] | None) -> np.ndarray:
        return encode_additives(self, row)

    def encode_many(self, rows: Iterable[tuple[str, float] | None]) -> np.ndarray:
        rows = list(rows)
        if not rows:
            return np.zeros((0, self.width))
        return np.vstack([encode_additives(self, r) for r in rows])


def fit_additive_encoder(rows: Iterable[tuple[str, float] | None]) -> AdditiveEncoder:
    vocab: dict[str, int] = {}
    for row in rows:
        if row is None:
            continue
        name, amount = row
        if not name:
            raise ValueError("additive names must be non-empty")
        if not math.isfinite(amount) or amount < 0:
            raise ValueError(f"additive amount must be finite and >= 0, got {amount}")
        if name not in vocab:
            vocab[name] = len(vocab)
    return AdditiveEncoder(vocab)


def encode_additives(encoder: AdditiveEncoder, row: tuple[str, float] | None) -> np.ndarray:
    out = np.zeros(encoder.width)
    if row is None:
        return out
    name, amount = row
    col = encoder.vocabulary.get(name)
    if col is None:
        encoder.unknown_seen[name] += 1
        warnings.warn(f"unknown additive {name!r} encoded as absent", stacklevel=2)
        return out
    out[2 * col] = 1.0
    out[2 * col + 1] = float(amount)
    return out


@dataclass(frozen=True)
class StandardizeStats:
    """Per-column mean and population standard deviation (ddof=0)."""

    mean: np.ndarray
    std: np.ndarray

    def invert(self, z: np.ndarray) -> np.ndarray:
        scale = np.where(self.std > 0, self.std, 1.0)
        shift = np.where(self.std > 0, self.mean, 0.0)
        return np.asarray(z, dtype=float) * scale + shift


def standardize(matrix, stats: StandardizeStats | None = None) -> tuple[np.ndarray, StandardizeStats]:
    """Center and scale columns; zero-variance columns are left untouched.

    Without ``stats`` the statistics are estimated from ``matrix`` itself
    (the training data). The population convention is used for the standard
    deviation.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2:
        raise ValueError("standardize expects a 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("standardize received non-finite values")
    if stats is None:
        if X.shape[0] == 0:
            raise ValueError("cannot estimate statistics from zero rows")
        stats = StandardizeStats(X.mean(axis=0), X.std(axis=0))
    elif stats.mean.shape != (X.shape[1],):
        raise ValueError(f"stats cover {stats.mean.shape[0]} columns, matrix has {X.shape[1]}")
    live = stats.std > 0
    Z = X.copy()
    Z[:, live] = (X[:, live] - stats.mean[live]) / stats.std[live]
    return Z, stats
