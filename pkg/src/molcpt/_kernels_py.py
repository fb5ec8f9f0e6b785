"""Pure-Python/numpy versions of the compiled kernels in ``_kernels.pyx``."""

from __future__ import annotations

import numpy as np


def scatter_add_rows(src: np.ndarray, index: np.ndarray, n_out: int) -> np.ndarray:
    if index.size and (index.min() < 0 or index.max() >= n_out):
        raise IndexError("segment index out of range")
    out = np.zeros((n_out, src.shape[1]), dtype=np.float64)
    np.add.at(out, index, src)
    return out


def segment_max(src: np.ndarray, index: np.ndarray, n_out: int) -> np.ndarray:
    if index.size and (index.min() < 0 or index.max() >= n_out):
        raise IndexError("segment index out of range")
    out = np.full((n_out, src.shape[1]), -np.inf, dtype=np.float64)
    np.maximum.at(out, index, src)
    return out


def bridge_mask(n_atoms: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Flag every edge whose removal disconnects its endpoints (iterative Tarjan)."""
    m = len(a)
    adj: list[list[tuple[int, int]]] = [[] for _ in range(n_atoms)]
    for e in range(m):
        adj[int(a[e])].append((int(b[e]), e))
        adj[int(b[e])].append((int(a[e]), e))
    disc = [-1] * n_atoms
    low = [0] * n_atoms
    out = np.zeros(m, dtype=bool)
    timer = 0
    for root in range(n_atoms):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # frames: (vertex, parent edge, neighbor cursor)
        stack = [[root, -1, 0]]
        while stack:
            frame = stack[-1]
            v, pe, k = frame
            if k < len(adj[v]):
                frame[2] = k + 1
                w, e = adj[v][k]
                if e == pe:
                    continue
                if disc[w] == -1:
                    disc[w] = low[w] = timer
                    timer += 1
                    stack.append([w, e, 0])
                elif disc[w] < low[v]:
                    low[v] = disc[w]
            else:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        out[pe] = True
    return out
