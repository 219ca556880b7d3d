"""Pure numpy implementation of the hot kernels.

Used when the compiled ``_speedups`` extension is unavailable or when
``CHATTYMAPS_PURE_PYTHON=1`` is set.
"""

import numpy as np

_CHUNK = 1 << 16


def capsule_hits(px, py, x0, y0, cell, nx, ny, cell_ptr, cell_edges, ax, ay, bx, by, edge_seg, width):
    """Return ``(point_idx, seg_idx)`` for every point lying within ``width``
    of a segment's polyline, sorted by point then segment, without duplicates."""
    w2 = width * width
    out_p, out_s = [], []
    for lo in range(0, len(px), _CHUNK):
        qx = px[lo:lo + _CHUNK]
        qy = py[lo:lo + _CHUNK]
        ix = np.floor((qx - x0) / cell).astype(np.int64)
        iy = np.floor((qy - y0) / cell).astype(np.int64)
        ok = (ix >= 0) & (iy >= 0) & (ix < nx) & (iy < ny)
        pts = np.nonzero(ok)[0]
        c = iy[pts] * nx + ix[pts]
        starts = cell_ptr[c]
        counts = cell_ptr[c + 1] - starts
        if counts.sum() == 0:
            continue
        rep = np.repeat(pts, counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        e = cell_edges[np.repeat(starts, counts) + offs]
        x = qx[rep]
        y = qy[rep]
        dx = bx[e] - ax[e]
        dy = by[e] - ay[e]
        len2 = dx * dx + dy * dy
        t = ((x - ax[e]) * dx + (y - ay[e]) * dy) / len2
        t = np.clip(t, 0.0, 1.0)
        ex = x - (ax[e] + t * dx)
        ey = y - (ay[e] + t * dy)
        hit = ex * ex + ey * ey <= w2
        if not hit.any():
            continue
        key = np.unique((rep[hit] + lo) * np.int64(len(edge_seg) + 1) + edge_seg[e[hit]])
        # segment ids are < number of edges, so the key encoding is collision free
        out_p.append(key // (len(edge_seg) + 1))
        out_s.append(key % (len(edge_seg) + 1))
    if not out_p:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(out_p), np.concatenate(out_s)
