# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled core of the tiled streaming attention forward pass.

One query row at a time: scores for the current key tile land in a scratch
buffer of tile_size doubles, the running max and denominator are rescaled on
every tile, and the output row is normalized once at the end. Accumulation is
double precision regardless of the input dtype.
"""

from libc.math cimport exp, INFINITY

import numpy as np

ctypedef fused floating:
    float
    double


def streaming_attention(floating[:, :, ::1] q,
                        floating[:, :, ::1] k,
                        floating[:, :, ::1] v,
                        double scale,
                        Py_ssize_t tile_size):
    cdef Py_ssize_t n_heads = q.shape[0]
    cdef Py_ssize_t seq = q.shape[1]
    cdef Py_ssize_t d = q.shape[2]
    cdef Py_ssize_t tile = tile_size if tile_size < seq else seq

    if floating is float:
        out_np = np.empty((n_heads, seq, d), dtype=np.float32)
    else:
        out_np = np.empty((n_heads, seq, d), dtype=np.float64)
    cdef floating[:, :, ::1] out = out_np
    scores_np = np.empty(tile, dtype=np.float64)
    cdef double[::1] scores = scores_np
    acc_np = np.empty(d, dtype=np.float64)
    cdef double[::1] acc = acc_np

    cdef Py_ssize_t h, t, j0, j1, j, x
    cdef double m, m_new, l, tmax, dot, w, factor

    for h in range(n_heads):
        for t in range(seq):
            m = -INFINITY
            l = 0.0
            for x in range(d):
                acc[x] = 0.0
            j0 = 0
            while j0 <= t:
                j1 = j0 + tile
                if j1 > t + 1:
                    j1 = t + 1
                tmax = -INFINITY
                for j in range(j0, j1):
                    dot = 0.0
                    for x in range(d):
                        dot += (<double> q[h, t, x]) * (<double> k[h, j, x])
                    dot *= scale
                    scores[j - j0] = dot
                    if dot > tmax:
                        tmax = dot
                m_new = m if m > tmax else tmax
                factor = exp(m - m_new)
                l *= factor
                for x in range(d):
                    acc[x] *= factor
                for j in range(j0, j1):
                    w = exp(scores[j - j0] - m_new)
                    l += w
                    for x in range(d):
                        acc[x] += w * (<double> v[h, j, x])
                m = m_new
                j0 = j1
            for x in range(d):
                out[h, t, x] = <floating> (acc[x] / l)
    return out_np
