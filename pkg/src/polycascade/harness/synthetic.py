"""
Synthetic polymer-like datasets with a known generative target.

Repeat units are strung together from a fragment library between two
``*`` end markers. The target mixes counts the descriptor vector sees
directly (aromatic atoms, rings) with a structural motif it does not: the
number of N/O atoms bonded to an aromatic atom. Heteroatoms appear in both
aromatic-attached and aliphatic positions at similar rates, so element
counts alone cannot pin the motif down.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..molgraph import MolecularGraph, SmilesWarning, parse_smiles
from .data import DatasetRecord

logger = logging.getLogger(__name__)

# Backbone pieces; the next piece bonds to the last atom outside any branch.
FRAGMENTS: tuple[str, ...] = (
    "C",
    "CC",
    "C(C)",
    "C(C)(C)",
    "O",
    "N",
    "C(=O)",
    "C(O)",
    "C(N)",
    "C(OC)",
    "c1ccc(cc1)",
    "C(c1ccccc1)",
    "C1CCC(CC1)",
    # isomer pairs: the first carries the motif, the second does not
    "c1ccc(O)c(c1)C",
    "c1ccc(CO)c(c1)",
    "c1ccc(N)c(c1)C",
    "c1ccc(CN)c(c1)",
    "C(c1ccc(O)cc1)C",
    "C(c1ccc(CO)cc1)",
    "C(c1ccc(N)cc1)C",
    "C(c1ccc(CN)cc1)",
    "C(c1ccc(OC)cc1)C",
    "C(c1ccc(COC)cc1)",
)

ADDITIVES: tuple[str, ...] = ("plasticizer_a", "plasticizer_b", "filler_c")


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 500
    seed: int = 0
    noise: float = 5.0
    coef_seed: int = 12345
    motif_coef: float | None = None
    additive_rate: float = 0.0
    min_units: int = 2
    max_units: int = 7


@dataclass(frozen=True)
class GenerativeCoefficients:
    intercept: float
    aromatic: float
    ring: float
    motif: float
    additive: dict = field(default_factory=dict)


def draw_coefficients(coef_seed: int, motif_coef: float | None = None) -> GenerativeCoefficients:
    rng = np.random.default_rng(coef_seed)
    coefs = GenerativeCoefficients(
        intercept=float(rng.uniform(-40, 0)),
        aromatic=float(rng.uniform(2.0, 4.0)),
        ring=float(rng.uniform(5.0, 15.0)),
        motif=float(rng.uniform(20.0, 30.0)),
        additive={name: float(-rng.uniform(0.5, 2.0)) for name in ADDITIVES},
    )
    return coefs if motif_coef is None else replace(coefs, motif=float(motif_coef))


def motif_count(graph: MolecularGraph) -> int:
    """Non-aromatic N or O atoms with at least one aromatic neighbour."""
    nbrs = graph.neighbors
    return sum(
        1
        for i, a in enumerate(graph.atoms)
        if a.element in ("N", "O") and not a.aromatic and any(graph.atoms[j].aromatic for j in nbrs[i])
    )


def generative_features(graph: MolecularGraph) -> np.ndarray:
    """(aromatic atom count, ring count, motif count)."""
    return np.array(
        [sum(1 for a in graph.atoms if a.aromatic), graph.ring_count, motif_count(graph)], dtype=float
    )


def random_smiles(rng: np.random.Generator, min_units: int = 2, max_units: int = 7) -> str:
    k = int(rng.integers(min_units, max_units + 1))
    pieces = [FRAGMENTS[int(i)] for i in rng.integers(0, len(FRAGMENTS), size=k)]
    return "*" + "".join(pieces) + "*"


def generate_synthetic(config: SyntheticConfig | None = None, **overrides) -> tuple[list[DatasetRecord], GenerativeCoefficients]:
    """Draw ``n`` records; returns them with the coefficients used."""
    cfg = replace(config or SyntheticConfig(), **overrides)
    if cfg.n < 10:
        raise ValueError("synthetic datasets need n >= 10")
    coefs = draw_coefficients(cfg.coef_seed, cfg.motif_coef)
    logger.info("synthetic coefficients: %s", asdict(coefs))
    rng = np.random.default_rng(cfg.seed)
    records = []
    for i in range(cfg.n):
        smi = random_smiles(rng, cfg.min_units, cfg.max_units)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SmilesWarning)
            g = parse_smiles(smi)
        arom, rings, motif = generative_features(g)
        y = coefs.intercept + coefs.aromatic * arom + coefs.ring * rings + coefs.motif * motif
        name = amount = None
        if rng.uniform() < cfg.additive_rate:
            name = ADDITIVES[int(rng.integers(0, len(ADDITIVES)))]
            amount = round(float(rng.uniform(1.0, 30.0)), 2)
            y += coefs.additive[name] * amount
        y += cfg.noise * rng.standard_normal()
        records.append(DatasetRecord(smi, round(float(y), 6), name, amount, {}, f"syn{cfg.seed}-{i}"))
    return records, coefs
