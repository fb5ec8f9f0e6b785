"""Datasets, scaffold splitting and ROC-AUC."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .canon import EMPTY_KEY, canonical_key
from .smiles import MolGraph, ParseError, parse_smiles

log = logging.getLogger(__name__)

MISSING = -1


@dataclass
class TaskDataset:
    graphs: list[MolGraph]
    labels: np.ndarray  # (n, tasks) with MISSING where absent
    task_names: list[str]
    name: str = ""
    split: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.graphs)

    @property
    def task_count(self) -> int:
        return self.labels.shape[1]

    @property
    def present(self) -> np.ndarray:
        return self.labels != MISSING

    def indices(self, split: str) -> np.ndarray:
        return self.split[split]


def load_dataset(path: str | Path, name: str | None = None, tasks: Sequence[str] | None = None) -> TaskDataset:
    """Read a CSV with a ``smiles`` column; every other column is a 0/1 task (blank = missing).

    ``tasks`` restricts the task columns, so identifier columns can be ignored.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if "smiles" not in header:
            raise ValueError(f"{path}: no 'smiles' column")
        s_col = header.index("smiles")
        if tasks is None:
            task_cols = [i for i in range(len(header)) if i != s_col]
        else:
            unknown = [t for t in tasks if t not in header]
            if unknown:
                raise ValueError(f"{path}: no task column(s) {unknown}")
            task_cols = [header.index(t) for t in tasks]
        graphs, labels, skipped = [], [], 0
        for row in reader:
            if not row:
                continue
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    g = parse_smiles(row[s_col])
            except ParseError:
                skipped += 1
                continue
            vals = []
            for c in task_cols:
                cell = row[c].strip() if c < len(row) else ""
                if cell == "":
                    vals.append(MISSING)
                else:
                    v = float(cell)
                    if v not in (0.0, 1.0):
                        raise ValueError(f"{path}: label {cell!r} is not 0 or 1")
                    vals.append(int(v))
            graphs.append(g)
            labels.append(vals)
    if skipped:
        log.warning("%s: skipped %d unparseable SMILES", path, skipped)
    if not graphs:
        raise ValueError(f"{path}: no valid rows")
    return TaskDataset(graphs, np.asarray(labels, dtype=np.int64).reshape(len(graphs), len(task_cols)),
                       [header[c] for c in task_cols], name or path.stem)


def write_dataset(path: str | Path, smiles: Sequence[str], labels: np.ndarray, task_names: Sequence[str]) -> None:
    labels = np.asarray(labels).reshape(len(smiles), -1)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["smiles", *task_names])
        for s, row in zip(smiles, labels):
            w.writerow([s, *("" if v == MISSING else str(int(v)) for v in row)])


def murcko_scaffold(g: MolGraph) -> MolGraph | None:
    """Repeatedly strip non-ring atoms of degree <= 1; ``None`` when nothing remains."""
    alive = [True] * len(g.atoms)
    deg = [g.degree(i) for i in range(len(g.atoms))]
    queue = [i for i in range(len(g.atoms)) if deg[i] <= 1 and not g.atoms[i].in_ring]
    while queue:
        v = queue.pop()
        if not alive[v]:
            continue
        alive[v] = False
        for w in g.adjacency[v]:
            if alive[w]:
                deg[w] -= 1
                if deg[w] <= 1 and not g.atoms[w].in_ring:
                    queue.append(w)
    keep = [i for i, a in enumerate(alive) if a]
    return g.subgraph(keep) if keep else None


def scaffold_key(g: MolGraph) -> str:
    s = murcko_scaffold(g)
    return EMPTY_KEY if s is None else canonical_key(s)


def scaffold_split(ds: TaskDataset, fractions=(0.8, 0.1, 0.1)) -> dict[str, np.ndarray]:
    """Group by scaffold, largest groups first; fill train, then valid, then test.

    A group joins the first split that is still below its target size. The
    acyclic (empty-scaffold) group is placed last.
    """
    if abs(sum(fractions) - 1.0) > 1e-9 or len(fractions) != 3:
        raise ValueError("fractions must be three numbers summing to 1")
    groups: dict[str, list[int]] = {}
    for i, g in enumerate(ds.graphs):
        groups.setdefault(scaffold_key(g), []).append(i)
    ring_groups = sorted((k for k in groups if k != EMPTY_KEY), key=lambda k: (-len(groups[k]), k))
    ordered = [groups[k] for k in ring_groups] + ([groups[EMPTY_KEY]] if EMPTY_KEY in groups else [])
    n = len(ds)
    targets = [fractions[0] * n, fractions[1] * n]
    parts: list[list[int]] = [[], [], []]
    for members in ordered:
        if len(parts[0]) < targets[0] - 1e-9:
            parts[0] += members
        elif len(parts[1]) < targets[1] - 1e-9:
            parts[1] += members
        else:
            parts[2] += members
    split = {name: np.asarray(sorted(p), dtype=np.int64) for name, p in zip(("train", "valid", "test"), parts)}
    ds.split = split
    return split


def roc_auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counting one half; NaN if degenerate."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    order = np.argsort(scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # group equal scores; numerator counted in half-units as an exact integer
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], boundaries])
    pos_in = np.add.reduceat(y.astype(np.int64), starts)
    size = np.diff(np.concatenate([starts, [s.size]]))
    neg_in = size - pos_in
    neg_below = np.concatenate([[0], np.cumsum(neg_in)[:-1]])
    half_wins = int(np.sum(pos_in * (2 * neg_below + neg_in)))
    return half_wins / (2 * n_pos * n_neg)


def mean_auc(score_matrix: np.ndarray, labels: np.ndarray) -> float:
    """Mean ROC-AUC over tasks with both classes present (missing labels ignored)."""
    aucs = []
    for t in range(labels.shape[1]):
        mask = labels[:, t] != MISSING
        auc = roc_auc(score_matrix[mask, t], labels[mask, t])
        if np.isnan(auc):
            log.debug("task %d skipped: single class", t)
            continue
        aucs.append(auc)
    return float(np.mean(aucs)) if aucs else float("nan")
