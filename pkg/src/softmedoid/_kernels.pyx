# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled CSR kernels for the weighted soft-medoid aggregation.

Row-by-row evaluation without padding: per row the (at most k) largest
weights are selected, the pairwise distances of the selected embeddings
are formed and combined through a stable softmax. Scratch buffers sized
by the widest row are reused across rows.
"""

from libc.math cimport exp, sqrt

import numpy as np


def csr_wsm_forward(double[:, ::1] Z, long[:] indptr, long[:] indices,
                    double[:] weights, double T, long k):
    """Aggregate each CSR row's selected embeddings; returns an (n, h) array."""
    cdef Py_ssize_t n_rows = indptr.shape[0] - 1
    cdef Py_ssize_t h = Z.shape[1]
    cdef Py_ssize_t v, i, j, c, start, deg, m, best, chosen_count
    cdef double w_best, acc, mx, esum, wsum, smass, coeff, d

    out_arr = np.zeros((n_rows, h), dtype=np.float64)
    cdef double[:, ::1] out = out_arr

    cdef Py_ssize_t max_deg = 0
    for v in range(n_rows):
        deg = indptr[v + 1] - indptr[v]
        if deg > max_deg:
            max_deg = deg
    if max_deg == 0:
        return out_arr
    cdef Py_ssize_t width = max_deg
    if k > 0 and k < width:
        width = k

    sel_arr = np.empty(width, dtype=np.int64)
    a_arr = np.empty(width, dtype=np.float64)
    taken_arr = np.zeros(max_deg, dtype=np.uint8)
    r_arr = np.empty(width, dtype=np.float64)
    s_arr = np.empty(width, dtype=np.float64)
    dist_arr = np.empty(width * width, dtype=np.float64)
    cdef long[:] sel = sel_arr
    cdef double[:] a = a_arr
    cdef unsigned char[:] taken = taken_arr
    cdef double[:] r = r_arr
    cdef double[:] s = s_arr
    cdef double[:] dist = dist_arr

    for v in range(n_rows):
        start = indptr[v]
        deg = indptr[v + 1] - start
        if deg == 0:
            continue
        m = deg
        if k > 0 and k < m:
            m = k
        if m == deg:
            for i in range(m):
                sel[i] = indices[start + i]
                a[i] = weights[start + i]
        else:
            # top-m by weight, ties to the smaller position; CSR columns are
            # ascending so slot order ends up ascending in the column index
            for i in range(deg):
                taken[i] = 0
            for c in range(m):
                best = -1
                w_best = -1.0
                for i in range(deg):
                    if not taken[i] and weights[start + i] > w_best:
                        best = i
                        w_best = weights[start + i]
                taken[best] = 1
            c = 0
            for i in range(deg):
                if taken[i]:
                    sel[c] = indices[start + i]
                    a[c] = weights[start + i]
                    c += 1

        # pairwise distances and weighted distance sums
        for i in range(m):
            r[i] = 0.0
        for i in range(m):
            dist[i * m + i] = 0.0
            for j in range(i + 1, m):
                acc = 0.0
                for c in range(h):
                    d = Z[sel[i], c] - Z[sel[j], c]
                    acc += d * d
                d = sqrt(acc)
                dist[i * m + j] = d
                dist[j * m + i] = d
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc += a[j] * dist[i * m + j]
            r[i] = acc

        wsum = 0.0
        for i in range(m):
            wsum += a[i]

        if T <= 0.0:
            # hard limit: lowest weighted distance sum among carried points
            best = -1
            for i in range(m):
                if a[i] > 0.0 and (best < 0 or r[i] < r[best]):
                    best = i
            for c in range(h):
                out[v, c] = wsum * Z[sel[best], c]
            continue

        mx = -r[0] / T
        for i in range(1, m):
            if -r[i] / T > mx:
                mx = -r[i] / T
        esum = 0.0
        for i in range(m):
            s[i] = exp(-r[i] / T - mx)
            esum += s[i]
        smass = 0.0
        for i in range(m):
            s[i] /= esum
            smass += s[i] * a[i]
        coeff = wsum / smass
        for i in range(m):
            d = coeff * s[i] * a[i]
            if d == 0.0:
                continue
            for c in range(h):
                out[v, c] += d * Z[sel[i], c]
    return out_arr
