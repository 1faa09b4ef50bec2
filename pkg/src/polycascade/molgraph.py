"""
SMILES parsing into molecular graphs.

The parser covers the organic subset, bracket atoms, branches, ring closures
(including the ``%nn`` form) and dot-separated components. Aromaticity is
taken from the notation (lowercase atoms) and never re-perceived; ring
membership comes from the bridge structure of the bond graph. Stereo markers
are accepted and dropped.
"""

from __future__ import annotations

import enum
import math
import re
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Sequence

import networkx as nx
import numpy as np

from .elements import DEFAULT_VALENCE, ELEMENTS

__all__ = [
    "Atom",
    "Bond",
    "BondOrder",
    "MolecularGraph",
    "SmilesError",
    "SmilesWarning",
    "implicit_hydrogens",
    "parse_smiles",
    "to_smiles",
]


class SmilesError(ValueError):
    """Malformed SMILES; carries the byte offset and a short reason."""

    def __init__(self, reason: str, offset: int, smiles: str = ""):
        self.reason = reason
        self.offset = offset
        self.smiles = smiles
        super().__init__(f"{reason} at offset {offset}" + (f" in {smiles!r}" if smiles else ""))


class SmilesWarning(UserWarning):
    pass


class BondOrder(str, enum.Enum):
    SINGLE = "single"
    DOUBLE = "double"
    TRIPLE = "triple"
    AROMATIC = "aromatic"

    @property
    def value_order(self) -> float:
        return _ORDER_VALUE[self]


_ORDER_VALUE = {
    BondOrder.SINGLE: 1.0,
    BondOrder.DOUBLE: 2.0,
    BondOrder.TRIPLE: 3.0,
    BondOrder.AROMATIC: 1.5,
}

_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "/": BondOrder.SINGLE,
    "\\": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}


@dataclass(frozen=True)
class Atom:
    element: str
    atomic_number: int
    mass: float
    aromatic: bool = False
    in_ring: bool = False
    charge: int = 0
    explicit_h: int = 0
    implicit_h: int = 0
    bracket: bool = False

    @property
    def is_wildcard(self) -> bool:
        return self.atomic_number == 0

    @property
    def is_heavy(self) -> bool:
        return self.atomic_number > 1


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder
    in_ring: bool = False

    @property
    def endpoints(self) -> frozenset[int]:
        return frozenset((self.begin, self.end))


@dataclass(frozen=True)
class MolecularGraph:
    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    smiles: str = field(default="", compare=False)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Symmetric boolean adjacency matrix with an empty diagonal."""
        adj = np.zeros((self.n_atoms, self.n_atoms), dtype=bool)
        for b in self.bonds:
            adj[b.begin, b.end] = adj[b.end, b.begin] = True
        return adj

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in self.atoms]
        for b in self.bonds:
            nbrs[b.begin].append(b.end)
            nbrs[b.end].append(b.begin)
        return tuple(tuple(n) for n in nbrs)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(n) for n in self.neighbors], dtype=int)

    def n_components(self) -> int:
        if not self.atoms:
            return 0
        g = nx.Graph()
        g.add_nodes_from(range(self.n_atoms))
        g.add_edges_from((b.begin, b.end) for b in self.bonds)
        return nx.number_connected_components(g)

    @property
    def ring_count(self) -> int:
        """Cyclomatic number |E| - |V| + components."""
        return len(self.bonds) - self.n_atoms + self.n_components()

    def dump(self) -> str:
        """Human-readable listing of atoms and bonds."""
        lines = [f"atoms {self.n_atoms}  bonds {len(self.bonds)}  rings {self.ring_count}"]
        for i, a in enumerate(self.atoms):
            flags = "".join(
                c for c, on in (("a", a.aromatic), ("r", a.in_ring)) if on
            ) or "-"
            lines.append(
                f"  {i:3d} {a.element:<2} Z={a.atomic_number:<3d} mass={a.mass:.3f} "
                f"H={a.implicit_h} charge={a.charge:+d} flags={flags} deg={len(self.neighbors[i])}"
            )
        for b in self.bonds:
            lines.append(f"  {b.begin:3d}-{b.end:<3d} {b.order.value}{' ring' if b.in_ring else ''}")
        return "\n".join(lines)


def implicit_hydrogens(atom: Atom, bond_orders: Iterable[BondOrder | float]) -> int:
    """Hydrogen count for an atom given the orders of its incident bonds.

    Bracket atoms report their written H count verbatim. Organic-subset atoms
    fill up to their default valence, where aromatic bonds count 1.5 and the
    bond-order sum is rounded up.
    """
    if atom.bracket:
        return atom.explicit_h
    valence = DEFAULT_VALENCE.get(atom.element)
    if valence is None:
        return 0
    total = sum(o.value_order if isinstance(o, BondOrder) else float(o) for o in bond_orders)
    return max(0, valence - math.ceil(total))


_ORGANIC_TWO = ("Cl", "Br")
_ORGANIC_ONE = set("BCNOPSFI")
_AROMATIC_ORGANIC = set("bcnops")
_AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

_BRACKET_RE = re.compile(
    r"(?P<isotope>\d+)?"
    r"(?P<symbol>\*|se|as|te|[bcnops]|[A-Z][a-z]?)"
    r"(?P<chiral>@@?|@TH[12]|@AL[12]|@SP[123]|@TB\d{1,2}|@OH\d{1,2})?"
    r"(?P<hcount>H\d?)?"
    r"(?P<charge>[+-](?:\d+|[+-]*))?"
    r"(?::(?P<klass>\d+))?$"
)


@dataclass
class _ProtoAtom:
    element: str
    aromatic: bool
    offset: int
    bracket: bool = False
    charge: int = 0
    explicit_h: int = 0


@dataclass
class _ProtoBond:
    a: int
    b: int
    symbol: str | None
    offset: int


def _parse_charge(text: str | None) -> int:
    if not text:
        return 0
    sign = 1 if text[0] == "+" else -1
    rest = text[1:]
    if rest.isdigit():
        return sign * int(rest)
    return sign * (1 + len(rest))


class _Parser:
    def __init__(self, smiles: str):
        self.s = smiles
        self.atoms: list[_ProtoAtom] = []
        self.bonds: list[_ProtoBond] = []
        self.stereo_seen = False

    def error(self, reason: str, offset: int) -> SmilesError:
        return SmilesError(reason, offset, self.s)

    def run(self) -> None:
        s = self.s
        prev: int | None = None
        branch_stack: list[tuple[int, int]] = []  # (atom index, offset of '(')
        pending: tuple[str, int] | None = None  # (bond symbol, offset)
        rings: dict[int, tuple[int, str | None, int]] = {}
        i = 0
        n = len(s)
        while i < n:
            ch = s[i]
            if ch.isspace():
                break
            atom: _ProtoAtom | None = None
            start = i
            if ch == "[":
                close = s.find("]", i + 1)
                if close < 0:
                    raise self.error("unclosed bracket atom", i)
                atom = self._bracket(s[i + 1 : close], i)
                i = close + 1
            elif s.startswith(_ORGANIC_TWO, i):
                atom = _ProtoAtom(s[i : i + 2], False, i)
                i += 2
            elif ch in _ORGANIC_ONE:
                atom = _ProtoAtom(ch, False, i)
                i += 1
            elif ch in _AROMATIC_ORGANIC:
                atom = _ProtoAtom(ch.upper(), True, i)
                i += 1
            elif ch == "*":
                atom = _ProtoAtom("*", False, i)
                i += 1
            if atom is not None:
                self.atoms.append(atom)
                idx = len(self.atoms) - 1
                if prev is not None:
                    sym, off = pending if pending else (None, start)
                    self.bonds.append(_ProtoBond(prev, idx, sym, off))
                elif pending is not None:
                    raise self.error("bond without a preceding atom", pending[1])
                pending = None
                prev = idx
                continue

            if ch == "(":
                if prev is None:
                    raise self.error("branch without a preceding atom", i)
                if pending is not None:
                    raise self.error("bond symbol before branch", pending[1])
                branch_stack.append((prev, i))
                i += 1
            elif ch == ")":
                if not branch_stack:
                    raise self.error("unbalanced parenthesis", i)
                if pending is not None:
                    raise self.error("dangling bond symbol", pending[1])
                if s[i - 1] == "(":
                    raise self.error("empty branch", i)
                prev = branch_stack.pop()[0]
                i += 1
            elif ch in _BOND_SYMBOLS:
                if pending is not None:
                    raise self.error("consecutive bond symbols", i)
                if ch in "/\\":
                    self.stereo_seen = True
                pending = (ch, i)
                i += 1
            elif ch == "$":
                raise self.error("quadruple bonds are not supported", i)
            elif ch.isdigit() or ch == "%":
                if ch == "%":
                    label_text = s[i + 1 : i + 3]
                    if len(label_text) != 2 or not label_text.isdigit():
                        raise self.error("malformed %nn ring-closure label", i)
                    label, width = int(label_text), 3
                else:
                    label, width = int(ch), 1
                if prev is None:
                    raise self.error("ring closure without a preceding atom", i)
                sym = pending[0] if pending else None
                if label in rings:
                    other, other_sym, other_off = rings.pop(label)
                    if other == prev:
                        raise self.error("ring closure to the same atom", i)
                    if sym is not None and other_sym is not None and (
                        _BOND_SYMBOLS[sym] != _BOND_SYMBOLS[other_sym]
                    ):
                        raise self.error("bond-order conflict on ring closure", i)
                    for b in self.bonds:
                        if {b.a, b.b} == {other, prev}:
                            raise self.error("ring closure duplicates an existing bond", i)
                    self.bonds.append(_ProtoBond(other, prev, sym or other_sym, i))
                else:
                    rings[label] = (prev, sym, i)
                pending = None
                i += width
            elif ch == ".":
                if pending is not None:
                    raise self.error("dangling bond symbol", pending[1])
                prev = None
                i += 1
            elif ch.isalpha():
                raise self.error(f"unknown element symbol {ch!r}", i)
            else:
                raise self.error(f"unexpected character {ch!r}", i)

        if pending is not None:
            raise self.error("dangling bond symbol", pending[1])
        if branch_stack:
            raise self.error("unbalanced parenthesis", branch_stack[-1][1])
        if rings:
            off = min(v[2] for v in rings.values())
            raise self.error("unclosed ring-closure digit", off)
        if not self.atoms:
            raise self.error("no atoms", 0)

    def _bracket(self, body: str, offset: int) -> _ProtoAtom:
        m = _BRACKET_RE.match(body)
        if m is None:
            raise self.error(f"malformed bracket atom [{body}]", offset)
        symbol = m.group("symbol")
        aromatic = symbol in _AROMATIC_BRACKET
        element = symbol.capitalize() if aromatic else symbol
        if element not in ELEMENTS:
            raise self.error(f"unknown element symbol {symbol!r}", offset + 1)
        if m.group("chiral"):
            self.stereo_seen = True
        hcount = m.group("hcount")
        explicit_h = 0 if not hcount else (int(hcount[1:]) if len(hcount) > 1 else 1)
        return _ProtoAtom(
            element,
            aromatic,
            offset,
            bracket=True,
            charge=_parse_charge(m.group("charge")),
            explicit_h=explicit_h,
        )


def _resolve_order(sym: str | None, a: _ProtoAtom, b: _ProtoAtom, smiles: str, offset: int) -> BondOrder:
    if sym is None:
        return BondOrder.AROMATIC if (a.aromatic and b.aromatic) else BondOrder.SINGLE
    order = _BOND_SYMBOLS[sym]
    if order is BondOrder.AROMATIC and not (a.aromatic and b.aromatic):
        raise SmilesError("aromatic bond between non-aromatic atoms", offset, smiles)
    return order


def parse_smiles(smiles: str) -> MolecularGraph:
    """Parse a SMILES string into a :class:`MolecularGraph`.

    When several dot-separated components are present, the one with the most
    heavy atoms is kept (first wins on ties) and a :class:`SmilesWarning` is
    issued.

    Raises:
        SmilesError: on malformed input; ``offset`` points into the string.
    """
    if not smiles or not smiles.strip():
        raise SmilesError("empty SMILES", 0, smiles or "")
    p = _Parser(smiles)
    p.run()
    if p.stereo_seen:
        warnings.warn(f"stereo markers ignored in {smiles!r}", SmilesWarning, stacklevel=2)

    orders = [_resolve_order(b.symbol, p.atoms[b.a], p.atoms[b.b], smiles, b.offset) for b in p.bonds]

    # component selection
    g = nx.Graph()
    g.add_nodes_from(range(len(p.atoms)))
    g.add_edges_from((b.a, b.b) for b in p.bonds)
    comps = [sorted(c) for c in nx.connected_components(g)]
    comps.sort(key=lambda c: c[0])
    if len(comps) > 1:
        def heavy(c):
            return sum(1 for i in c if ELEMENTS[p.atoms[i].element][0] > 1)

        best = max(comps, key=heavy)  # max() keeps the first maximal component
        warnings.warn(
            f"{smiles!r} has {len(comps)} components; keeping the largest ({len(best)} atoms)",
            SmilesWarning,
            stacklevel=2,
        )
        keep = best
    else:
        keep = comps[0]
    if not keep:
        raise SmilesError("empty result after component selection", 0, smiles)
    remap = {old: new for new, old in enumerate(keep)}

    kept_bonds = [(remap[b.a], remap[b.b], orders[k]) for k, b in enumerate(p.bonds) if b.a in remap]
    sub = nx.Graph()
    sub.add_nodes_from(range(len(keep)))
    sub.add_edges_from((a, b) for a, b, _ in kept_bonds)
    bridges = {frozenset(e) for e in nx.bridges(sub)}

    bonds = tuple(
        Bond(a, b, order, in_ring=frozenset((a, b)) not in bridges) for a, b, order in kept_bonds
    )
    ring_atoms = set()
    incident: list[list[BondOrder]] = [[] for _ in keep]
    for bd in bonds:
        incident[bd.begin].append(bd.order)
        incident[bd.end].append(bd.order)
        if bd.in_ring:
            ring_atoms.update((bd.begin, bd.end))

    atoms = []
    for new, old in enumerate(keep):
        pa = p.atoms[old]
        if pa.aromatic and new not in ring_atoms:
            raise SmilesError("aromatic atom outside a ring", pa.offset, smiles)
        z, mass = ELEMENTS[pa.element]
        atom = Atom(
            element=pa.element,
            atomic_number=z,
            mass=mass,
            aromatic=pa.aromatic,
            in_ring=new in ring_atoms,
            charge=pa.charge,
            explicit_h=pa.explicit_h,
            bracket=pa.bracket,
        )
        atoms.append(replace(atom, implicit_h=implicit_hydrogens(atom, incident[new])))
    return MolecularGraph(tuple(atoms), bonds, smiles=smiles)


def _atom_token(atom: Atom) -> str:
    sym = atom.element.lower() if atom.aromatic else atom.element
    h = atom.implicit_h
    htext = "" if h == 0 else ("H" if h == 1 else f"H{h}")
    if atom.charge == 0:
        ctext = ""
    else:
        ctext = ("+" if atom.charge > 0 else "-") + (str(abs(atom.charge)) if abs(atom.charge) > 1 else "")
    return f"[{sym}{htext}{ctext}]"


def _bond_token(graph: MolecularGraph, bond: Bond) -> str:
    if bond.order is BondOrder.SINGLE:
        both_aromatic = graph.atoms[bond.begin].aromatic and graph.atoms[bond.end].aromatic
        return "-" if both_aromatic else ""
    return {BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ""}[bond.order]


def to_smiles(graph: MolecularGraph) -> str:
    """Serialize a connected graph to SMILES.

    Every atom is written in bracket form with its hydrogen count, so that
    re-parsing reproduces element, charge, aromaticity and H counts. The
    output is not canonical.
    """
    n = graph.n_atoms
    if n == 0:
        raise ValueError("empty graph")
    bond_of = {}
    for bd in graph.bonds:
        bond_of[(bd.begin, bd.end)] = bond_of[(bd.end, bd.begin)] = bd

    order: list[int] = []
    parent = {0: None}
    children: dict[int, list[int]] = {i: [] for i in range(n)}
    stack = [0]
    seen = set()
    while stack:
        v = stack.pop()
        if v in seen:
            continue
        seen.add(v)
        order.append(v)
        if parent[v] is not None:
            children[parent[v]].append(v)
        for w in reversed(graph.neighbors[v]):
            if w not in seen:
                parent[w] = v
                stack.append(w)
    if len(seen) != n:
        raise ValueError("to_smiles requires a connected graph")

    tree = {frozenset((v, p)) for v, p in parent.items() if p is not None}
    rank = {v: k for k, v in enumerate(order)}
    closures: dict[int, list[tuple[int, str]]] = {i: [] for i in range(n)}
    label = 0
    for bd in graph.bonds:
        if bd.endpoints in tree:
            continue
        label += 1
        if label > 99:
            raise ValueError("too many ring closures to serialize")
        text = str(label) if label < 10 else f"%{label:02d}"
        first, second = sorted((bd.begin, bd.end), key=rank.__getitem__)
        closures[first].append((rank[second], _bond_token(graph, bd) + text))
        closures[second].append((-1, text))

    def emit(v: int) -> str:
        out = [_atom_token(graph.atoms[v])]
        out.extend(t for _, t in sorted(closures[v], key=lambda x: x[0]))
        kids = children[v]
        for k, c in enumerate(kids):
            piece = _bond_token(graph, bond_of[(v, c)]) + emit(c)
            out.append(piece if k == len(kids) - 1 else f"({piece})")
        return "".join(out)

    return emit(0)


def parse_many(smiles: Sequence[str]) -> list[MolecularGraph]:
    return [parse_smiles(s) for s in smiles]
