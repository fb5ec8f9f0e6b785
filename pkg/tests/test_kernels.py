from __future__ import annotations

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from molcpt import kernels

from .helpers import random_graph


def run_all(fn, *args):
    out = {}
    for name in kernels.AVAILABLE:
        with kernels.use_backend(name):
            out[name] = fn(*args)
    return out


def test_python_backend_always_available():
    assert "python" in kernels.AVAILABLE
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")


def test_use_backend_restores_previous():
    before = kernels.BACKEND
    with kernels.use_backend("python"):
        assert kernels.BACKEND == "python"
    assert kernels.BACKEND == before


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 40), st.integers(1, 5), st.integers(1, 8), st.integers(0, 2**31))
def test_segment_kernels_agree_with_reference(n, width, n_out, seed):
    rng = np.random.default_rng(seed)
    src = rng.normal(size=(n, width))
    index = rng.integers(n_out, size=n)
    want_sum = np.zeros((n_out, width))
    want_max = np.full((n_out, width), -np.inf)
    for i, j in enumerate(index):
        want_sum[j] += src[i]
        want_max[j] = np.maximum(want_max[j], src[i])
    for out in run_all(kernels.scatter_add_rows, src, index, n_out).values():
        assert np.allclose(out, want_sum, atol=1e-12)
    for out in run_all(kernels.segment_max, src, index, n_out).values():
        assert np.array_equal(out, want_max)


def test_trailing_dimensions_preserved():
    src = np.arange(24.0).reshape(4, 3, 2)
    for out in run_all(kernels.scatter_add_rows, src, np.array([0, 1, 0, 1]), 2).values():
        assert out.shape == (2, 3, 2)
        assert np.array_equal(out[0], src[0] + src[2])


def test_out_of_range_index():
    for name in kernels.AVAILABLE:
        with kernels.use_backend(name), pytest.raises(IndexError):
            kernels.scatter_add_rows(np.ones((2, 1)), np.array([0, 5]), 2)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31))
def test_bridge_mask_matches_networkx(n, seed):
    g = random_graph(np.random.default_rng(seed), n)
    a = np.array([b.a for b in g.bonds], dtype=np.int64)
    b = np.array([b.b for b in g.bonds], dtype=np.int64)
    G = nx.Graph()
    G.add_nodes_from(range(n))
    G.add_edges_from(zip(a.tolist(), b.tolist()))
    bridges = {frozenset(e) for e in nx.bridges(G)}
    want = np.array([frozenset((int(x), int(y))) in bridges for x, y in zip(a, b)], dtype=bool)
    for out in run_all(kernels.bridge_mask, n, a, b).values():
        assert np.array_equal(out, want)
