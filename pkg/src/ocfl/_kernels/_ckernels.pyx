# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``.

Same contracts and edge-case behaviour; results agree with the numpy versions
to floating-point summation order.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def cosine_divergence(x):
    # the O(n^2 d) dot products go to BLAS; the O(n^2) normalisation,
    # clipping and mirroring run in the typed loop below
    xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0]
    cdef double[:, ::1] g = np.ascontiguousarray(xa @ xa.T)
    cdef Py_ssize_t i, j
    cdef double c, dist
    norms_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] norms = norms_arr
    out_arr = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        norms[i] = sqrt(g[i, i])
    for i in range(n - 1):
        for j in range(i + 1, n):
            c = g[i, j] / (norms[i] * norms[j])
            dist = 1.0 - c
            if dist < 0.0:
                dist = 0.0
            elif dist > 2.0:
                dist = 2.0
            out[i, j] = dist
            out[j, i] = dist
    return out_arr


def mutual_reachability_mst(dist, core):
    cdef double[:, ::1] dv = np.ascontiguousarray(dist, dtype=np.float64)
    cdef double[::1] cv = np.ascontiguousarray(core, dtype=np.float64)
    cdef Py_ssize_t n = dv.shape[0]
    cdef Py_ssize_t step, j, current, nxt
    cdef double reach, low
    edges_arr = np.zeros((max(n - 1, 0), 3), dtype=np.float64)
    if n < 2:
        return edges_arr
    cdef double[:, ::1] edges = edges_arr
    in_tree_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] in_tree = in_tree_arr
    best_arr = np.full(n, np.inf)
    cdef double[::1] best = best_arr
    parent_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] parent = parent_arr
    current = 0
    in_tree[0] = 1
    for step in range(n - 1):
        for j in range(n):
            if in_tree[j]:
                continue
            reach = dv[current, j]
            if cv[j] > reach:
                reach = cv[j]
            if cv[current] > reach:
                reach = cv[current]
            if reach < best[j]:
                best[j] = reach
                parent[j] = current
        nxt = -1
        low = INFINITY
        for j in range(n):
            if not in_tree[j] and (nxt < 0 or best[j] < low):
                low = best[j]
                nxt = j
        edges[step, 0] = parent[nxt]
        edges[step, 1] = nxt
        edges[step, 2] = best[nxt]
        in_tree[nxt] = 1
        current = nxt
    return edges_arr


def flat_mean_shift(points, seeds, double bandwidth, double tol=1e-6, int max_iter=300):
    cdef double[:, ::1] pv = np.ascontiguousarray(points, dtype=np.float64)
    seeds_arr = np.array(seeds, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] sv = seeds_arr
    cdef Py_ssize_t n = pv.shape[0], d = pv.shape[1], m = sv.shape[0]
    cdef Py_ssize_t s, i, k, it
    cdef long long count
    cdef double bw2 = bandwidth * bandwidth, acc, diff, shift
    modes_arr = np.empty((m, d), dtype=np.float64)
    cdef double[:, ::1] modes = modes_arr
    intensity_arr = np.zeros(m, dtype=np.int64)
    cdef long long[::1] intensity = intensity_arr
    mean_arr = np.empty(d, dtype=np.float64)
    new_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] new = new_arr
    for s in range(m):
        for k in range(d):
            mean[k] = sv[s, k]
        count = 0
        for it in range(max_iter):
            count = 0
            for k in range(d):
                new[k] = 0.0
            for i in range(n):
                acc = 0.0
                for k in range(d):
                    diff = pv[i, k] - mean[k]
                    acc += diff * diff
                if acc <= bw2:
                    count += 1
                    for k in range(d):
                        new[k] += pv[i, k]
            if count == 0:
                break
            shift = 0.0
            for k in range(d):
                new[k] /= count
                diff = new[k] - mean[k]
                shift += diff * diff
                mean[k] = new[k]
            if sqrt(shift) < tol:
                break
        for k in range(d):
            modes[s, k] = mean[k]
        intensity[s] = count
    return modes_arr, intensity_arr
