"""Graph generators and oracles shared by the tests."""

from __future__ import annotations

import warnings

import networkx as nx
import numpy as np
from hypothesis import strategies as st

from molcpt.smiles import Atom, Bond, BondOrder, MolGraph, parse_smiles, ring_flags, write_smiles

ELEMENT_POOL = (6, 6, 6, 6, 7, 8, 16)


def random_graph(rng: np.random.Generator, n_atoms: int, extra_edges: int | None = None) -> MolGraph:
    """Random connected heavy-atom graph: a random tree plus a few ring-closing edges."""
    atoms = tuple(Atom(int(rng.choice(ELEMENT_POOL))) for _ in range(n_atoms))
    degree = [0] * n_atoms
    edges: dict[tuple[int, int], BondOrder] = {}
    for v in range(1, n_atoms):
        open_parents = [u for u in range(v) if degree[u] < 4] or list(range(v))
        u = int(rng.choice(open_parents))
        order = BondOrder.DOUBLE if rng.random() < 0.1 else BondOrder.SINGLE
        edges[(u, v)] = order
        degree[u] += 1
        degree[v] += 1
    if extra_edges is None:
        extra_edges = int(rng.integers(0, 3))
    for _ in range(extra_edges):
        u, v = sorted(rng.choice(n_atoms, size=2, replace=False).tolist()) if n_atoms > 1 else (0, 0)
        if u == v or (u, v) in edges or degree[u] >= 4 or degree[v] >= 4:
            continue
        edges[(u, v)] = BondOrder.SINGLE
        degree[u] += 1
        degree[v] += 1
    bonds = tuple(Bond(u, v, o) for (u, v), o in edges.items())
    return ring_flags(MolGraph(atoms, bonds))


def random_smiles(rng: np.random.Generator, lo: int = 1, hi: int = 12) -> str:
    return write_smiles(random_graph(rng, int(rng.integers(lo, hi + 1))))


def quiet_parse(text: str) -> MolGraph:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return parse_smiles(text)


def permuted(g: MolGraph, perm) -> MolGraph:
    """Same molecule with atom ``i`` moved to position ``perm[i]``."""
    perm = [int(p) for p in perm]
    atoms = [None] * len(g.atoms)
    for i, p in enumerate(perm):
        atoms[p] = g.atoms[i]
    bonds = tuple(Bond(perm[b.a], perm[b.b], b.order, b.in_ring) for b in g.bonds)
    return MolGraph(tuple(atoms), bonds, g.source_smiles)


def to_networkx(g: MolGraph) -> nx.Graph:
    G = nx.Graph()
    for i, a in enumerate(g.atoms):
        G.add_node(i, element=a.element, aromatic=a.aromatic, charge=a.formal_charge)
    for b in g.bonds:
        G.add_edge(b.a, b.b, order=int(b.order))
    return G


def isomorphic(g1: MolGraph, g2: MolGraph) -> bool:
    return nx.is_isomorphic(
        to_networkx(g1), to_networkx(g2),
        node_match=lambda x, y: all(x[k] == y[k] for k in ("element", "aromatic", "charge")),
        edge_match=lambda x, y: x["order"] == y["order"])


@st.composite
def graphs(draw, min_atoms: int = 1, max_atoms: int = 12):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(min_atoms, max_atoms))
    return random_graph(np.random.default_rng(seed), n)


# --- independent oracle: networkx bridges, components and isomorphism classes -----

def oracle_fragments(g: MolGraph) -> list[nx.Graph]:
    G = to_networkx(g)
    bridges = {frozenset(e) for e in nx.bridges(G)}
    cut = [(b.a, b.b) for b in g.bonds
           if b.order == BondOrder.SINGLE and frozenset((b.a, b.b)) in bridges
           and G.degree[b.a] >= 2 and G.degree[b.b] >= 2]
    G.remove_edges_from(cut)
    return [G.subgraph(c).copy() for c in nx.connected_components(G)]


def _labelled(G: nx.Graph) -> nx.Graph:
    for _, d in G.nodes(data=True):
        d["label"] = f"{d['element']}/{d['aromatic']}/{d['charge']}"
    for _, _, d in G.edges(data=True):
        d["label"] = str(d["order"])
    return G


class IsoClasses:
    """Groups graphs by isomorphism; tracks which molecules contain each class."""

    def __init__(self):
        self.buckets: dict[str, list[tuple[nx.Graph, set[int]]]] = {}

    def find(self, G: nx.Graph):
        G = _labelled(G)
        h = nx.weisfeiler_lehman_graph_hash(G, node_attr="label", edge_attr="label")
        for rep, mols in self.buckets.get(h, []):
            if nx.is_isomorphic(rep, G, node_match=lambda a, b: a["label"] == b["label"],
                                edge_match=lambda a, b: a["label"] == b["label"]):
                return h, rep, mols
        return h, None, None

    def add(self, G: nx.Graph, mol: int):
        h, rep, mols = self.find(G)
        if rep is None:
            self.buckets.setdefault(h, []).append((G, {mol}))
        else:
            mols.add(mol)

    def frequencies(self) -> list[int]:
        return [len(m) for bucket in self.buckets.values() for _, m in bucket]
