# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: row scatter-add, segment max and bridge detection."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(const double[:, ::1] src, const long long[::1] index, Py_ssize_t n_out):
    cdef Py_ssize_t n = src.shape[0]
    cdef Py_ssize_t d = src.shape[1]
    cdef Py_ssize_t i, j, r
    out_arr = np.zeros((n_out, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        r = index[i]
        if r < 0 or r >= n_out:
            raise IndexError("segment index out of range")
        for j in range(d):
            out[r, j] += src[i, j]
    return out_arr


def segment_max(const double[:, ::1] src, const long long[::1] index, Py_ssize_t n_out):
    cdef Py_ssize_t n = src.shape[0]
    cdef Py_ssize_t d = src.shape[1]
    cdef Py_ssize_t i, j, r
    out_arr = np.full((n_out, d), -np.inf, dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        r = index[i]
        if r < 0 or r >= n_out:
            raise IndexError("segment index out of range")
        for j in range(d):
            if src[i, j] > out[r, j]:
                out[r, j] = src[i, j]
    return out_arr


def bridge_mask(Py_ssize_t n_atoms, const long long[::1] a, const long long[::1] b):
    """Flag every edge whose removal disconnects its endpoints (iterative Tarjan)."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t i, v, w, e, top, timer, k
    # CSR adjacency over undirected edges
    deg_arr = np.zeros(n_atoms + 1, dtype=np.int64)
    cdef long long[::1] start = deg_arr
    for e in range(m):
        start[a[e] + 1] += 1
        start[b[e] + 1] += 1
    for v in range(n_atoms):
        start[v + 1] += start[v]
    fill_arr = deg_arr[:n_atoms].copy()
    cdef long long[::1] fill = fill_arr
    nbr_arr = np.empty(2 * m, dtype=np.int64)
    eid_arr = np.empty(2 * m, dtype=np.int64)
    cdef long long[::1] nbr = nbr_arr
    cdef long long[::1] eid = eid_arr
    for e in range(m):
        nbr[fill[a[e]]] = b[e]
        eid[fill[a[e]]] = e
        fill[a[e]] += 1
        nbr[fill[b[e]]] = a[e]
        eid[fill[b[e]]] = e
        fill[b[e]] += 1

    disc_arr = np.full(n_atoms, -1, dtype=np.int64)
    low_arr = np.zeros(n_atoms, dtype=np.int64)
    cdef long long[::1] disc = disc_arr
    cdef long long[::1] low = low_arr
    stack_v_arr = np.empty(n_atoms, dtype=np.int64)
    stack_pe_arr = np.empty(n_atoms, dtype=np.int64)
    stack_it_arr = np.empty(n_atoms, dtype=np.int64)
    cdef long long[::1] stack_v = stack_v_arr
    cdef long long[::1] stack_pe = stack_pe_arr
    cdef long long[::1] stack_it = stack_it_arr
    out_arr = np.zeros(m, dtype=np.bool_)
    cdef cnp.npy_bool[::1] out = out_arr

    timer = 0
    for i in range(n_atoms):
        if disc[i] != -1:
            continue
        top = 0
        stack_v[0] = i
        stack_pe[0] = -1
        stack_it[0] = start[i]
        disc[i] = timer
        low[i] = timer
        timer += 1
        while top >= 0:
            v = stack_v[top]
            k = stack_it[top]
            if k < start[v + 1]:
                stack_it[top] = k + 1
                e = eid[k]
                if e == stack_pe[top]:
                    continue
                w = nbr[k]
                if disc[w] == -1:
                    disc[w] = timer
                    low[w] = timer
                    timer += 1
                    top += 1
                    stack_v[top] = w
                    stack_pe[top] = e
                    stack_it[top] = start[w]
                elif disc[w] < low[v]:
                    low[v] = disc[w]
            else:
                top -= 1
                if top >= 0:
                    w = stack_v[top]
                    if low[v] < low[w]:
                        low[w] = low[v]
                    if low[v] > disc[w]:
                        out[stack_pe[top + 1]] = True
    return out_arr
