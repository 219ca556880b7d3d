# distutils: language = c++
"""Compiled point-in-capsule join used by :mod:`chattymaps.geo`.

Mirrors ``chattymaps._fallback.capsule_hits`` operation for operation so the
two backends return identical arrays.
"""

import numpy as np

from libcpp.vector cimport vector
from libc.math cimport floor


def capsule_hits(const double[::1] px, const double[::1] py,
                 double x0, double y0, double cell, long long nx, long long ny,
                 const long long[::1] cell_ptr, const long long[::1] cell_edges,
                 const double[::1] ax, const double[::1] ay,
                 const double[::1] bx, const double[::1] by,
                 const long long[::1] edge_seg, double width):
    cdef Py_ssize_t n = px.shape[0]
    cdef Py_ssize_t i, k, j, start, nhit
    cdef long long e, s, ix, iy, c
    cdef double w2 = width * width
    cdef double dx, dy, len2, t, cx, cy, ex, ey
    cdef vector[long long] out_p
    cdef vector[long long] out_s
    cdef bint dup

    with nogil:
        for i in range(n):
            ix = <long long>floor((px[i] - x0) / cell)
            iy = <long long>floor((py[i] - y0) / cell)
            if ix < 0 or iy < 0 or ix >= nx or iy >= ny:
                continue
            c = iy * nx + ix
            start = out_s.size()
            for k in range(cell_ptr[c], cell_ptr[c + 1]):
                e = cell_edges[k]
                s = edge_seg[e]
                dup = False
                for j in range(start, <Py_ssize_t>out_s.size()):
                    if out_s[j] == s:
                        dup = True
                        break
                if dup:
                    continue
                dx = bx[e] - ax[e]
                dy = by[e] - ay[e]
                len2 = dx * dx + dy * dy
                t = ((px[i] - ax[e]) * dx + (py[i] - ay[e]) * dy) / len2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
                cx = ax[e] + t * dx
                cy = ay[e] + t * dy
                ex = px[i] - cx
                ey = py[i] - cy
                if ex * ex + ey * ey <= w2:
                    out_p.push_back(i)
                    out_s.push_back(s)
            # keep segment ids ascending within each point
            nhit = out_s.size() - start
            if nhit > 1:
                for j in range(start + 1, <Py_ssize_t>out_s.size()):
                    s = out_s[j]
                    k = j - 1
                    while k >= start and out_s[k] > s:
                        out_s[k + 1] = out_s[k]
                        k -= 1
                    out_s[k + 1] = s

    pidx = np.empty(out_p.size(), dtype=np.int64)
    sidx = np.empty(out_s.size(), dtype=np.int64)
    cdef long long[::1] pv = pidx
    cdef long long[::1] sv = sidx
    for k in range(<Py_ssize_t>out_p.size()):
        pv[k] = out_p[k]
        sv[k] = out_s[k]
    return pidx, sidx
