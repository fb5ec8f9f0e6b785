"""Motif extraction: bond cleavage rules, fragments and the frequency-filtered vocabulary."""

from __future__ import annotations

import enum
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .canon import EMPTY_KEY, canonical_key
from .smiles import BondOrder, MolGraph, parse_smiles, write_smiles

log = logging.getLogger(__name__)


class Rules(str, enum.Enum):
    SIMPLE = "simple"
    BRICS16 = "brics16"


# --- BRICS-style environments --------------------------------------------------
# Each label is a predicate on one atom and its neighborhood. A bond is cut when
# it is an acyclic single bond and its two endpoints satisfy a pair listed in
# BRICS_PAIRS (either orientation). L7 (a double-bond rule) is omitted because
# only single bonds are ever cut.

def _nbrs(g: MolGraph, i: int):
    for j in g.adjacency[i]:
        yield j, g.bond_between(i, j)


def _is(g, i, element, aromatic=None):
    a = g.atoms[i]
    return a.element == element and (aromatic is None or a.aromatic == aromatic)


def _has_double_o(g, i, count=1):
    return sum(1 for j, b in _nbrs(g, i) if b.order == BondOrder.DOUBLE and _is(g, j, 8)) >= count


def _has_double(g, i):
    return any(b.order == BondOrder.DOUBLE for _, b in _nbrs(g, i))


def _acyclic_single_to(g, i, elements):
    return any(b.order == BondOrder.SINGLE and not b.in_ring and g.atoms[j].element in elements
               for j, b in _nbrs(g, i))


def _l1(g, i):
    return (_is(g, i, 6, False) and g.degree(i) == 3 and _has_double_o(g, i)
            and any(b.order in (BondOrder.SINGLE, BondOrder.AROMATIC) and g.atoms[j].element in (6, 7, 8)
                    for j, b in _nbrs(g, i)))


def _l3(g, i):
    return _is(g, i, 8, False) and g.degree(i) == 2 and _acyclic_single_to(g, i, (1, 6))


def _l4(g, i):
    return _is(g, i, 6, False) and g.degree(i) >= 2 and not _has_double(g, i) and _acyclic_single_to(g, i, (6,))


def _l5(g, i):
    if not _is(g, i, 7, False) or g.degree(i) < 2 or _has_double(g, i):
        return False
    for j, b in _nbrs(g, i):
        if b.order == BondOrder.SINGLE and g.atoms[j].element not in (1, 6, 16):
            return False
    if g.atoms[i].in_ring:
        for j, b in _nbrs(g, i):
            if b.in_ring and _is(g, j, 6, False) and g.atoms[j].in_ring and _has_double_o(g, j):
                return False
    return True


def _l6(g, i):
    return (_is(g, i, 6, False) and g.degree(i) == 3 and not g.atoms[i].in_ring and _has_double_o(g, i)
            and _acyclic_single_to(g, i, (6, 7, 8)))


def _l8(g, i):
    return (_is(g, i, 6, False) and not g.atoms[i].in_ring and g.degree(i) >= 2
            and all(b.order == BondOrder.SINGLE for _, b in _nbrs(g, i)))


def _arom_nbrs(g, i, elements):
    return [j for j, b in _nbrs(g, i) if b.order == BondOrder.AROMATIC and g.atoms[j].aromatic
            and g.atoms[j].element in elements]


def _l9(g, i):
    return (_is(g, i, 7, True) and g.atoms[i].formal_charge == 0
            and len(_arom_nbrs(g, i, (6, 7, 8, 16))) >= 2)


def _l10(g, i):
    if not (_is(g, i, 7, False) and g.atoms[i].in_ring):
        return False
    ring_nbrs = [j for j, b in _nbrs(g, i) if b.in_ring]
    carbonyl = [j for j in ring_nbrs if _is(g, j, 6, False) and _has_double_o(g, j)]
    return any(any(k != j and g.atoms[k].element in (6, 7, 8, 16) and not g.atoms[k].aromatic
                   for k in ring_nbrs) for j in carbonyl)


def _l11(g, i):
    return _is(g, i, 16, False) and g.degree(i) == 2 and _acyclic_single_to(g, i, (6,))


def _l12(g, i):
    return (_is(g, i, 16, False) and g.degree(i) == 4 and _has_double_o(g, i, 2)
            and any(g.atoms[j].element == 6 for j in g.adjacency[i]))


def _ring_single(g, i, elements):
    return [j for j, b in _nbrs(g, i) if b.in_ring and b.order == BondOrder.SINGLE
            and not g.atoms[j].aromatic and g.atoms[j].element in elements]


def _two_distinct(first, second):
    return any(any(k != j for k in second) for j in first)


def _l13(g, i):
    return _is(g, i, 6, False) and _two_distinct(_ring_single(g, i, (6, 7, 8, 16)), _ring_single(g, i, (7, 8, 16)))


def _l14(g, i):
    return _is(g, i, 6, True) and _two_distinct(_arom_nbrs(g, i, (6, 7, 8, 16)), _arom_nbrs(g, i, (7, 8, 16)))


def _l15(g, i):
    return _is(g, i, 6, False) and len(_ring_single(g, i, (6,))) >= 2


def _l16(g, i):
    return _is(g, i, 6, True) and len(_arom_nbrs(g, i, (6,))) >= 2


BRICS_ENVIRONMENTS: dict[str, Callable[[MolGraph, int], bool]] = {
    "L1": _l1, "L3": _l3, "L4": _l4, "L5": _l5, "L6": _l6, "L8": _l8, "L9": _l9, "L10": _l10,
    "L11": _l11, "L12": _l12, "L13": _l13, "L14": _l14, "L15": _l15, "L16": _l16,
}

BRICS_PAIRS: frozenset[tuple[str, str]] = frozenset(
    tuple(sorted(p)) for p in [
        ("L1", "L3"), ("L1", "L5"), ("L1", "L10"),
        ("L3", "L4"), ("L3", "L13"), ("L3", "L14"), ("L3", "L15"), ("L3", "L16"),
        ("L4", "L5"), ("L4", "L11"),
        ("L5", "L12"), ("L5", "L13"), ("L5", "L14"), ("L5", "L15"), ("L5", "L16"),
        ("L6", "L13"), ("L6", "L14"), ("L6", "L15"), ("L6", "L16"),
        ("L8", "L9"), ("L8", "L10"), ("L8", "L13"), ("L8", "L14"), ("L8", "L15"), ("L8", "L16"),
        ("L9", "L13"), ("L9", "L14"), ("L9", "L15"), ("L9", "L16"),
        ("L10", "L13"), ("L10", "L14"), ("L10", "L15"), ("L10", "L16"),
        ("L11", "L13"), ("L11", "L14"), ("L11", "L15"), ("L11", "L16"),
        ("L13", "L14"), ("L13", "L15"), ("L13", "L16"),
        ("L14", "L14"), ("L14", "L15"), ("L14", "L16"),
        ("L15", "L16"),
        ("L16", "L16"),
    ]
)


def brics_labels(g: MolGraph, i: int) -> set[str]:
    return {name for name, pred in BRICS_ENVIRONMENTS.items() if pred(g, i)}


def find_cleavage_bonds(g: MolGraph, rules: Rules | str = Rules.SIMPLE) -> list[int]:
    """Indices of bonds to cut. Only acyclic single bonds are ever returned."""
    rules = Rules(rules)
    candidates = [i for i, b in enumerate(g.bonds) if b.order == BondOrder.SINGLE and not b.in_ring]
    if rules is Rules.SIMPLE:
        return [i for i in candidates if g.degree(g.bonds[i].a) >= 2 and g.degree(g.bonds[i].b) >= 2]
    labels: dict[int, set[str]] = {}
    out = []
    for i in candidates:
        a, b = g.bonds[i].a, g.bonds[i].b
        for atom in (a, b):
            if atom not in labels:
                labels[atom] = brics_labels(g, atom)
        if any(tuple(sorted((la, lb))) in BRICS_PAIRS for la in labels[a] for lb in labels[b]):
            out.append(i)
    return out


@dataclass(frozen=True, eq=False)
class Motif:
    subgraph: MolGraph
    key: str
    parent_atoms: tuple[int, ...]


def fragment_molecule(g: MolGraph, rules: Rules | str = Rules.SIMPLE) -> list[Motif]:
    """Delete the cleavage bonds; each connected component is one motif."""
    cut = set(find_cleavage_bonds(g, rules))
    kept = tuple(b for i, b in enumerate(g.bonds) if i not in cut)
    cut_graph = MolGraph(g.atoms, kept, g.source_smiles)
    comps = cut_graph.components()
    motifs = []
    for comp in comps:
        sub = g if len(comps) == 1 else cut_graph.subgraph(comp)
        motifs.append(Motif(sub, canonical_key(sub), tuple(comp)))
    return motifs


@dataclass(frozen=True)
class VocabEntry:
    key: str
    frequency: int
    graph: MolGraph | None

    @property
    def smiles(self) -> str:
        return write_smiles(self.graph) if self.graph is not None and len(self.graph) else ""


class MotifVocabulary:
    """Frequent motifs keyed canonically; index 0 is the empty motif."""

    def __init__(self, entries: Sequence[VocabEntry], threshold: int, rules: Rules | str):
        if not entries or entries[0].key != EMPTY_KEY:
            raise ValueError("vocabulary must start with the EMPTY motif")
        self.entries = tuple(entries)
        self.threshold = int(threshold)
        self.rules = Rules(rules)
        self.index = {e.key: i for i, e in enumerate(self.entries)}
        if len(self.index) != len(self.entries):
            raise ValueError("duplicate vocabulary keys")

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key: str) -> bool:
        return key in self.index

    @property
    def keys(self) -> list[str]:
        return [e.key for e in self.entries]

    def to_text(self) -> str:
        lines = [f"{i}\t{e.key}\t{e.frequency}\t{e.smiles}" for i, e in enumerate(self.entries)]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, rules: Rules | str = Rules.SIMPLE, threshold: int = 0) -> MotifVocabulary:
        return cls.from_text(Path(path).read_text(encoding="utf-8"), rules, threshold)

    @classmethod
    def from_text(cls, text: str, rules: Rules | str = Rules.SIMPLE, threshold: int = 0) -> MotifVocabulary:
        entries = []
        for lineno, line in enumerate(text.splitlines()):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 4:
                raise ValueError(f"vocabulary line {lineno}: expected 4 tab-separated fields")
            idx, key, freq, smi = fields
            if int(idx) != len(entries):
                raise ValueError(f"vocabulary line {lineno}: index {idx} out of sequence")
            if key == EMPTY_KEY:
                entries.append(VocabEntry(key, int(freq), None))
                continue
            graph = parse_smiles(smi)
            if canonical_key(graph) != key:
                raise ValueError(f"vocabulary line {lineno}: representative does not match key {key!r}")
            entries.append(VocabEntry(key, int(freq), graph))
        return cls(entries, threshold, rules)


def empty_vocabulary(rules: Rules | str = Rules.SIMPLE, threshold: int = 0) -> MotifVocabulary:
    return MotifVocabulary([VocabEntry(EMPTY_KEY, 0, None)], threshold, rules)


def build_vocabulary(corpus: Iterable[MolGraph], rules: Rules | str = Rules.SIMPLE, t: int = 0) -> MotifVocabulary:
    """Count, per key, the molecules containing it; keep keys seen in at least ``t`` molecules."""
    if t < 0:
        raise ValueError("threshold must be >= 0")
    counts: dict[str, int] = {}
    representative: dict[str, MolGraph] = {}
    n_mols = 0
    for g in corpus:
        n_mols += 1
        seen = set()
        for m in fragment_molecule(g, rules):
            if m.key in seen:
                continue
            seen.add(m.key)
            counts[m.key] = counts.get(m.key, 0) + 1
            representative.setdefault(m.key, m.subgraph)
    kept = sorted((k for k, c in counts.items() if c >= t), key=lambda k: (-counts[k], k))
    log.info("vocabulary: %d molecules, %d distinct motifs, %d kept at t=%d", n_mols, len(counts), len(kept), t)
    entries = [VocabEntry(EMPTY_KEY, 0, None)] + [VocabEntry(k, counts[k], representative[k]) for k in kept]
    return MotifVocabulary(entries, t, rules)


def motifs_of(g: MolGraph, vocab: MotifVocabulary, rules: Rules | str | None = None) -> list[int]:
    """Sorted vocabulary indices of ``g``'s motifs; ``[0]`` when none are frequent."""
    rules = vocab.rules if rules is None else Rules(rules)
    found = sorted({vocab.index[m.key] for m in fragment_molecule(g, rules) if m.key in vocab.index})
    found = [i for i in found if i != 0]
    return found or [0]
