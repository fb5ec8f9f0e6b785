"""Canonical string keys for attributed molecular (sub)graphs.

Atoms are colored by (element, aromatic, charge, sorted incident bond
orders) and the coloring is refined from neighbor multisets until stable.
Remaining ties are broken by individualizing each member of the first
non-singleton color cell and keeping the lexicographically smallest
certificate. Twin atoms (same color, same bonded neighbors) are
interchangeable, so only one of them is individualized.
"""

from __future__ import annotations

from .smiles import Atom, MolGraph, write_smiles

EMPTY_KEY = "EMPTY"


def _relabel(signatures: list) -> list[int]:
    ranks = {s: i for i, s in enumerate(sorted(set(signatures)))}
    return [ranks[s] for s in signatures]


def initial_colors(g: MolGraph) -> list[int]:
    orders: list[list[int]] = [[] for _ in g.atoms]
    for bond in g.bonds:
        orders[bond.a].append(int(bond.order))
        orders[bond.b].append(int(bond.order))
    sig = [(a.element, int(a.aromatic), a.formal_charge, tuple(sorted(o)))
           for a, o in zip(g.atoms, orders)]
    return _relabel(sig)


def _neighbors(g: MolGraph) -> list[list[tuple[int, int]]]:
    nbrs: list[list[tuple[int, int]]] = [[] for _ in g.atoms]
    for bond in g.bonds:
        nbrs[bond.a].append((bond.b, int(bond.order)))
        nbrs[bond.b].append((bond.a, int(bond.order)))
    return nbrs


def refine(colors: list[int], nbrs: list[list[tuple[int, int]]]) -> list[int]:
    """Iterate neighborhood refinement until the number of color classes is stable."""
    n_classes = len(set(colors))
    while True:
        sig = [(colors[v], tuple(sorted((colors[w], o) for w, o in nbrs[v])))
               for v in range(len(colors))]
        new = _relabel(sig)
        k = len(set(new))
        if k == n_classes:
            return new
        colors, n_classes = new, k


def _certificate(g: MolGraph, rank: list[int]):
    n = len(rank)
    inv = [0] * n
    for v, r in enumerate(rank):
        inv[r] = v
    atoms = tuple((g.atoms[v].element, int(g.atoms[v].aromatic), g.atoms[v].formal_charge) for v in inv)
    edges = tuple(sorted((min(rank[b.a], rank[b.b]), max(rank[b.a], rank[b.b]), int(b.order)) for b in g.bonds))
    return atoms, edges


def canonical_ranks(g: MolGraph) -> list[int]:
    """A canonical atom ranking: isomorphic graphs get rankings under which they coincide."""
    if not g.atoms:
        return []
    nbrs = _neighbors(g)
    nbr_sets = [frozenset(x) for x in nbrs]
    best: list = [None, None]

    def search(colors: list[int]):
        colors = refine(colors, nbrs)
        n_classes = len(set(colors))
        if n_classes == len(colors):
            cert = _certificate(g, colors)
            if best[0] is None or cert < best[0]:
                best[0], best[1] = cert, colors
            return
        counts: dict[int, int] = {}
        for c in colors:
            counts[c] = counts.get(c, 0) + 1
        target = min(c for c, k in counts.items() if k > 1)
        cell = [v for v, c in enumerate(colors) if c == target]
        tried: set = set()
        for v in cell:
            twin_key = nbr_sets[v]
            if twin_key in tried:
                continue
            tried.add(twin_key)
            child = [2 * c for c in colors]
            child[v] = 2 * target - 1
            search(child)

    search(initial_colors(g))
    return best[1]


def strip_hydrogens(g: MolGraph) -> MolGraph:
    atoms = tuple(Atom(a.element, a.aromatic, a.formal_charge, 0, a.in_ring) for a in g.atoms)
    return MolGraph(atoms, g.bonds, g.source_smiles)


def canonical_key(g: MolGraph) -> str:
    """Canonical SMILES-style key over heavy atoms (H counts are not part of identity)."""
    if not g.atoms:
        return EMPTY_KEY
    bare = strip_hydrogens(g)
    return write_smiles(bare, order=canonical_ranks(bare))
