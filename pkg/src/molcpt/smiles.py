"""SMILES subset parser and the attributed molecular graph it produces.

Supported grammar: organic-subset atoms (B C N O P S F Cl Br I and aromatic
b c n o p s), bracket atoms with element, H count and charge, bonds
``- = # :``, branches, ring closures (digits and ``%nn``) and ``.``
separators. Stereo markers (``/ \\ @``), isotopes and atom classes are read
and dropped.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

from . import kernels

ELEMENTS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga",
    "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd",
    "Ag", "Cd", "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm",
    "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os",
    "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa",
    "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg",
    "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)
ATOMIC_NUMBER = {sym: i + 1 for i, sym in enumerate(ELEMENTS)}
MAX_ELEMENT = len(ELEMENTS)

ORGANIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
AROMATIC_ORGANIC = ("b", "c", "n", "o", "p", "s")
AROMATIC_BRACKET = ("se", "as", "te", "b", "c", "n", "o", "p", "s")

# default valences for implicit hydrogens; S and P also accept their hypervalent states
DEFAULT_VALENCE = {5: 3, 6: 4, 7: 3, 8: 2, 9: 1, 15: 3, 16: 2, 17: 1, 35: 1, 53: 1}
MAX_VALENCE = {5: 3, 6: 4, 7: 3, 8: 2, 9: 1, 15: 5, 16: 6, 17: 1, 35: 1, 53: 1}


class ParseError(ValueError):
    """Raised for malformed SMILES; ``position`` is the 0-based offending offset."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class BondOrder(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3

    @property
    def valence(self) -> float:
        return (1.0, 2.0, 3.0, 1.0)[self]


BOND_SYMBOL = {BondOrder.SINGLE: "-", BondOrder.DOUBLE: "=", BondOrder.TRIPLE: "#", BondOrder.AROMATIC: ":"}
_SYMBOL_BOND = {"-": BondOrder.SINGLE, "=": BondOrder.DOUBLE, "#": BondOrder.TRIPLE, ":": BondOrder.AROMATIC,
                "/": BondOrder.SINGLE, "\\": BondOrder.SINGLE}


@dataclass(frozen=True)
class Atom:
    element: int
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int = 0
    in_ring: bool = False
    implicit_h: int = 0

    def __post_init__(self):
        if not 1 <= self.element <= MAX_ELEMENT:
            raise ValueError(f"atomic number out of range: {self.element}")

    @property
    def symbol(self) -> str:
        return ELEMENTS[self.element - 1]


@dataclass(frozen=True)
class Bond:
    a: int
    b: int
    order: BondOrder = BondOrder.SINGLE
    in_ring: bool = False

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("self-loop bond")

    def other(self, atom: int) -> int:
        return self.b if atom == self.a else self.a


@dataclass(frozen=True, eq=False)
class MolGraph:
    """Heavy-atom molecular graph. Hydrogens stay implicit.

    ``masked`` lists atoms whose features are hidden (used by masking
    pretraining); it is empty for parsed molecules.
    """

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    source_smiles: str = ""
    masked: tuple[int, ...] = ()
    valence_warning: bool = False
    adjacency: tuple[tuple[int, ...], ...] = field(init=False)

    def __post_init__(self):
        n = len(self.atoms)
        adj: list[list[int]] = [[] for _ in range(n)]
        seen = set()
        for bond in self.bonds:
            if not (0 <= bond.a < n and 0 <= bond.b < n):
                raise ValueError(f"bond endpoint out of range: {bond.a}-{bond.b}")
            key = (min(bond.a, bond.b), max(bond.a, bond.b))
            if key in seen:
                raise ValueError(f"duplicate bond {key}")
            seen.add(key)
            adj[bond.a].append(bond.b)
            adj[bond.b].append(bond.a)
        object.__setattr__(self, "adjacency", tuple(tuple(x) for x in adj))

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    @property
    def num_bonds(self) -> int:
        return len(self.bonds)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    @cached_property
    def bond_index(self) -> dict[tuple[int, int], int]:
        out = {}
        for i, bond in enumerate(self.bonds):
            out[(bond.a, bond.b)] = i
            out[(bond.b, bond.a)] = i
        return out

    def bond_between(self, a: int, b: int) -> Bond | None:
        i = self.bond_index.get((a, b))
        return None if i is None else self.bonds[i]

    def same_structure(self, other: MolGraph) -> bool:
        return (self.atoms == other.atoms and self.bonds == other.bonds
                and self.masked == other.masked)

    def subgraph(self, atom_indices) -> MolGraph:
        """Induced subgraph on ``atom_indices`` (kept in ascending order), ring flags recomputed."""
        keep = sorted(set(int(i) for i in atom_indices))
        remap = {old: new for new, old in enumerate(keep)}
        atoms = tuple(self.atoms[i] for i in keep)
        bonds = tuple(replace(b, a=remap[b.a], b=remap[b.b]) for b in self.bonds
                      if b.a in remap and b.b in remap)
        masked = tuple(remap[i] for i in self.masked if i in remap)
        return ring_flags(MolGraph(atoms, bonds, self.source_smiles, masked, self.valence_warning))

    def components(self) -> list[list[int]]:
        """Connected components as sorted atom lists, ordered by smallest atom."""
        seen = [False] * len(self.atoms)
        comps = []
        for start in range(len(self.atoms)):
            if seen[start]:
                continue
            seen[start] = True
            stack, comp = [start], []
            while stack:
                v = stack.pop()
                comp.append(v)
                for w in self.adjacency[v]:
                    if not seen[w]:
                        seen[w] = True
                        stack.append(w)
            comps.append(sorted(comp))
        return comps


def ring_flags(g: MolGraph) -> MolGraph:
    """Mark ring membership: a bond is in a ring iff it is not a bridge."""
    if not g.bonds:
        atoms = tuple(replace(a, in_ring=False) if a.in_ring else a for a in g.atoms)
        return MolGraph(atoms, g.bonds, g.source_smiles, g.masked, g.valence_warning)
    bridges = kernels.bridge_mask(len(g.atoms), [b.a for b in g.bonds], [b.b for b in g.bonds])
    ring_atom = [False] * len(g.atoms)
    bonds = []
    for bond, is_bridge in zip(g.bonds, bridges):
        cyc = not bool(is_bridge)
        if cyc:
            ring_atom[bond.a] = ring_atom[bond.b] = True
        bonds.append(bond if bond.in_ring == cyc else replace(bond, in_ring=cyc))
    atoms = tuple(a if a.in_ring == r else replace(a, in_ring=r) for a, r in zip(g.atoms, ring_atom))
    return MolGraph(atoms, tuple(bonds), g.source_smiles, g.masked, g.valence_warning)


@dataclass
class _AtomSpec:
    element: int
    aromatic: bool
    charge: int = 0
    hcount: int = 0
    bracket: bool = False


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[_AtomSpec] = []
        # (a, b, order or None when unspecified)
        self.bonds: list[tuple[int, int, BondOrder | None]] = []
        self.pairs: set[tuple[int, int]] = set()
        self.rings: dict[int, tuple[int, BondOrder | None, int]] = {}

    def error(self, msg: str, pos: int | None = None):
        raise ParseError(msg, self.pos if pos is None else pos)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def add_bond(self, a: int, b: int, order: BondOrder | None, pos: int):
        key = (min(a, b), max(a, b))
        if a == b:
            self.error("ring closure onto the same atom", pos)
        if key in self.pairs:
            self.error("duplicate bond", pos)
        self.pairs.add(key)
        self.bonds.append((a, b, order))

    def parse(self):
        text = self.text
        prev: int | None = None
        branch_stack: list[tuple[int, int]] = []
        pending: BondOrder | None = None
        pending_pos = -1
        while self.pos < len(text):
            ch = text[self.pos]
            start = self.pos
            if ch == "(":
                if prev is None:
                    self.error("branch without a preceding atom")
                branch_stack.append((prev, start))
                self.pos += 1
            elif ch == ")":
                if not branch_stack:
                    self.error("unmatched ')'")
                if pending is not None:
                    self.error("bond symbol before ')'")
                prev = branch_stack.pop()[0]
                self.pos += 1
            elif ch in _SYMBOL_BOND:
                if pending is not None:
                    self.error("two consecutive bond symbols")
                if prev is None:
                    self.error("bond symbol without a preceding atom")
                pending, pending_pos = _SYMBOL_BOND[ch], start
                self.pos += 1
            elif ch == ".":
                if pending is not None:
                    self.error("bond symbol before '.'")
                prev = None
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    self.error("ring closure without a preceding atom")
                if ch == "%":
                    digits = text[self.pos + 1:self.pos + 3]
                    if len(digits) != 2 or not digits.isdigit():
                        self.error("'%' must be followed by two digits")
                    num = int(digits)
                    self.pos += 3
                else:
                    num = int(ch)
                    self.pos += 1
                if num in self.rings:
                    other, order, _ = self.rings.pop(num)
                    if pending is not None and order is not None and pending != order:
                        self.error("conflicting ring-closure bond orders", start)
                    self.add_bond(other, prev, pending if pending is not None else order, start)
                else:
                    self.rings[num] = (prev, pending, start)
                pending = None
            else:
                idx = self.parse_atom()
                if prev is not None:
                    self.add_bond(prev, idx, pending, pending_pos if pending is not None else start)
                elif pending is not None:
                    self.error("bond symbol without a preceding atom", pending_pos)
                pending = None
                prev = idx
        if pending is not None:
            self.error("dangling bond symbol", pending_pos)
        if branch_stack:
            self.error("unmatched '('", branch_stack[-1][1])
        if self.rings:
            num, (_, _, pos) = min(self.rings.items(), key=lambda kv: kv[1][2])
            self.error(f"unmatched ring-closure {num}", pos)
        if not self.atoms:
            self.error("no atoms", 0)

    def parse_atom(self) -> int:
        text = self.text
        start = self.pos
        if text[self.pos] == "[":
            return self.parse_bracket()
        two = text[self.pos:self.pos + 2]
        if two in ("Cl", "Br"):
            self.pos += 2
            spec = _AtomSpec(ATOMIC_NUMBER[two], False)
        elif text[self.pos] in ORGANIC:
            spec = _AtomSpec(ATOMIC_NUMBER[text[self.pos]], False)
            self.pos += 1
        elif text[self.pos] in AROMATIC_ORGANIC:
            spec = _AtomSpec(ATOMIC_NUMBER[text[self.pos].upper()], True)
            self.pos += 1
        elif text[self.pos].isalpha() or text[self.pos] == "*":
            self.error(f"unknown element symbol {text[self.pos]!r}", start)
        else:
            self.error(f"unexpected character {text[self.pos]!r}", start)
        self.atoms.append(spec)
        return len(self.atoms) - 1

    def parse_bracket(self) -> int:
        text = self.text
        open_pos = self.pos
        close = text.find("]", self.pos)
        if close < 0:
            self.error("unclosed '['")
        self.pos += 1
        while self.pos < close and text[self.pos].isdigit():  # isotope, dropped
            self.pos += 1
        sym_pos = self.pos
        body = text[self.pos:close]
        element = aromatic = None
        for cand in AROMATIC_BRACKET:
            if body.startswith(cand) and not (len(cand) == 1 and body[1:2].islower()
                                              and body[:2] in AROMATIC_BRACKET):
                element, aromatic = ATOMIC_NUMBER[cand.capitalize()], True
                self.pos += len(cand)
                break
        if element is None:
            two, one = body[:2], body[:1]
            if len(two) == 2 and two[1].islower() and two in ATOMIC_NUMBER:
                element = ATOMIC_NUMBER[two]
                self.pos += 2
            elif one in ATOMIC_NUMBER:
                element = ATOMIC_NUMBER[one]
                self.pos += 1
            else:
                self.error(f"unknown element symbol in {text[open_pos:close + 1]!r}", sym_pos)
            aromatic = False
        while self.pos < close and text[self.pos] == "@":  # chirality, dropped
            self.pos += 1
            while self.pos < close and text[self.pos].isalnum() and text[self.pos] != "H":
                self.pos += 1
        hcount = 0
        if self.pos < close and text[self.pos] == "H":
            self.pos += 1
            hcount = 1
            if self.pos < close and text[self.pos].isdigit():
                hcount = int(text[self.pos])
                self.pos += 1
        charge = 0
        if self.pos < close and text[self.pos] in "+-":
            sign = 1 if text[self.pos] == "+" else -1
            self.pos += 1
            if self.pos < close and text[self.pos].isdigit():
                charge = sign * int(text[self.pos])
                self.pos += 1
            else:
                charge = sign
                while self.pos < close and text[self.pos] == ("+" if sign > 0 else "-"):
                    charge += sign
                    self.pos += 1
        if self.pos < close and text[self.pos] == ":":  # atom class, dropped
            self.pos += 1
            while self.pos < close and text[self.pos].isdigit():
                self.pos += 1
        if self.pos != close:
            self.error(f"unexpected {text[self.pos]!r} inside bracket atom")
        self.pos = close + 1
        self.atoms.append(_AtomSpec(element, aromatic, charge, hcount, True))
        return len(self.atoms) - 1


def _implicit_h(spec: _AtomSpec, bond_sum: float) -> tuple[int, bool]:
    """Return (implicit H count, valence violated)."""
    if spec.bracket:
        return 0, False
    default = DEFAULT_VALENCE.get(spec.element)
    if default is None:
        return 0, False
    # aromatic atoms gain one unit for the delocalized bond unless they already
    # saturate their default valence (furan o, thiophene s, fused-ring n)
    total = bond_sum + (1 if spec.aromatic and bond_sum + 1 <= default else 0)
    maximum = MAX_VALENCE[spec.element]
    if total > maximum:
        return 0, True
    if total <= default:
        return int(default - total), False
    # hypervalent S/P: fill to the next allowed state
    for v in (4, 5, 6):
        if v <= maximum and total <= v and (v - default) % 2 == 0:
            return int(v - total), False
    return 0, False


def parse_smiles(text: str) -> MolGraph:
    """Parse ``text`` into a :class:`MolGraph` with ring flags computed."""
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty SMILES", 0)
    text = text.strip()
    p = _Parser(text)
    p.parse()
    # unspecified bonds between aromatic atoms are aromatic only inside rings
    prelim = [Bond(a, b, BondOrder.SINGLE) for a, b, _ in p.bonds]
    bridges = kernels.bridge_mask(len(p.atoms), [b.a for b in prelim], [b.b for b in prelim]) \
        if prelim else []
    bonds = []
    for (a, b, order), is_bridge in zip(p.bonds, bridges):
        if order is None:
            both_arom = p.atoms[a].aromatic and p.atoms[b].aromatic
            order = BondOrder.AROMATIC if both_arom and not is_bridge else BondOrder.SINGLE
        bonds.append(Bond(a, b, order, not bool(is_bridge)))
    bond_sum = [0.0] * len(p.atoms)
    for bond in bonds:
        bond_sum[bond.a] += bond.order.valence
        bond_sum[bond.b] += bond.order.valence
    ring_atom = [False] * len(p.atoms)
    for bond in bonds:
        if bond.in_ring:
            ring_atom[bond.a] = ring_atom[bond.b] = True
    atoms = []
    bad_valence = False
    for i, spec in enumerate(p.atoms):
        h, bad = _implicit_h(spec, bond_sum[i])
        bad_valence |= bad
        atoms.append(Atom(spec.element, spec.aromatic, spec.charge, spec.hcount, ring_atom[i], h))
    if bad_valence:
        warnings.warn(f"nonstandard valence in {text!r}", stacklevel=2)
    return MolGraph(tuple(atoms), tuple(bonds), text, (), bad_valence)


_WRITE_ORGANIC = {5, 6, 7, 8, 9, 15, 16, 17, 35, 53}
_WRITE_AROMATIC_ORGANIC = {5, 6, 7, 8, 15, 16}


def _atom_token(atom: Atom) -> str:
    sym = atom.symbol
    if atom.aromatic:
        sym = sym.lower()
    plain = atom.formal_charge == 0 and atom.explicit_h == 0 and (
        atom.element in (_WRITE_AROMATIC_ORGANIC if atom.aromatic else _WRITE_ORGANIC))
    if plain:
        return sym
    h = "" if atom.explicit_h == 0 else ("H" if atom.explicit_h == 1 else f"H{atom.explicit_h}")
    c = atom.formal_charge
    charge = "" if c == 0 else ("+" if c == 1 else "-" if c == -1 else f"{'+' if c > 0 else '-'}{abs(c)}")
    return f"[{sym}{h}{charge}]"


def _bond_token(g: MolGraph, bond: Bond) -> str:
    arom_pair = g.atoms[bond.a].aromatic and g.atoms[bond.b].aromatic
    if bond.order == BondOrder.SINGLE:
        return "-" if arom_pair else ""
    if bond.order == BondOrder.AROMATIC:
        return "" if arom_pair and bond.in_ring else ":"
    return BOND_SYMBOL[bond.order]


def write_smiles(g: MolGraph, order=None) -> str:
    """Serialize ``g`` by depth-first traversal.

    ``order`` ranks atoms (lower visited first); it defaults to the atom index.
    Every bond order that parsing would not infer is written explicitly, so
    ``parse_smiles(write_smiles(g))`` reproduces ``g`` up to atom numbering.
    """
    n = len(g.atoms)
    if n == 0:
        return ""
    rank = list(range(n)) if order is None else list(order)
    visited = [False] * n
    parts: list[str] = []
    tree_edges: set[tuple[int, int]] = set()
    seq: list[int] = []

    def first_pass(root: int):
        # discover the DFS tree to identify ring-closure bonds
        stack = [(root, -1)]
        while stack:
            v, parent = stack.pop()
            if visited[v]:
                continue
            visited[v] = True
            seq.append(v)
            if parent >= 0:
                tree_edges.add((parent, v))
            for w in sorted(g.adjacency[v], key=lambda u: rank[u], reverse=True):
                if not visited[w]:
                    stack.append((w, v))

    roots = []
    for v in sorted(range(n), key=lambda u: rank[u]):
        if not visited[v]:
            roots.append(v)
            first_pass(v)
    pos = {v: i for i, v in enumerate(seq)}
    children: dict[int, list[int]] = {v: [] for v in range(n)}
    parent_of = {}
    for p_, c_ in tree_edges:
        parent_of[c_] = p_
    # children in the order the iterative DFS visited them
    for v in seq:
        if v in parent_of:
            children[parent_of[v]].append(v)
    closures: dict[int, list[tuple[int, int]]] = {v: [] for v in range(n)}
    for i, bond in enumerate(g.bonds):
        if (bond.a, bond.b) in tree_edges or (bond.b, bond.a) in tree_edges:
            continue
        first, second = (bond.a, bond.b) if pos[bond.a] < pos[bond.b] else (bond.b, bond.a)
        closures[first].append((i, second))
        closures[second].append((i, first))
    free = list(range(99, 0, -1))
    open_digit: dict[int, int] = {}

    def digit_str(d: int) -> str:
        return str(d) if d < 10 else f"%{d:02d}"

    def emit(v: int):
        parts.append(_atom_token(g.atoms[v]))
        for bi, other in sorted(closures[v], key=lambda x: (pos[x[1]], x[0])):
            if bi in open_digit:
                d = open_digit.pop(bi)
                parts.append(_bond_token(g, g.bonds[bi]) + digit_str(d))
                free.append(d)
                free.sort(reverse=True)
            else:
                d = free.pop()
                open_digit[bi] = d
                parts.append(digit_str(d))
        kids = children[v]
        for j, c in enumerate(kids):
            token = _bond_token(g, g.bond_between(v, c))
            if j < len(kids) - 1:
                parts.append("(" + token)
                emit(c)
                parts.append(")")
            else:
                parts.append(token)
                emit(c)

    for r, root in enumerate(roots):
        if r:
            parts.append(".")
        emit(root)
    return "".join(parts)
