"""Local projection, segment buffering and photo-to-segment assignment.

Containment is decided exactly: a point belongs to a buffered segment when
its Euclidean distance to the projected polyline is at most the buffer width
(round caps and joins). The polygon kept on :class:`BufferedSegment` is only
for export and area reporting.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
import shapely

from chattymaps import _kernels
from chattymaps.constants import DEFAULT_BUFFER_M
from chattymaps.lexicon import normalize

EARTH_RADIUS_M = 6371008.8
POLYGON_TOLERANCE_M = 0.1


class GeometryError(ValueError):
    pass


class ProjectedPoint(NamedTuple):
    x: float
    y: float


def project(lon: float, lat: float, ref: tuple[float, float]) -> ProjectedPoint:
    """Equirectangular projection to meters east/north of ``ref`` (lon, lat)."""
    lon0, lat0 = ref
    x = EARTH_RADIUS_M * math.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * math.radians(lat - lat0)
    return ProjectedPoint(x, y)


def project_array(lon, lat, ref: tuple[float, float]) -> tuple[np.ndarray, np.ndarray]:
    lon0, lat0 = ref
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    x = EARTH_RADIUS_M * np.radians(lon - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * np.radians(lat - lat0)
    return x, y


def reference_point(segments) -> tuple[float, float]:
    """Mean vertex of a segment collection; the projection origin for a run."""
    verts = np.array([v for s in segments for v in s.polyline], dtype=np.float64)
    if len(verts) == 0:
        raise GeometryError("no segments to derive a reference point from")
    return float(verts[:, 0].mean()), float(verts[:, 1].mean())


def project_polyline(polyline: Sequence[tuple[float, float]], ref) -> np.ndarray:
    arr = np.asarray(polyline, dtype=np.float64)
    x, y = project_array(arr[:, 0], arr[:, 1], ref)
    return np.column_stack([x, y])


def polyline_length(xy: np.ndarray) -> float:
    return float(np.hypot(*np.diff(xy, axis=0).T).sum())


def distance_to_polyline(x: float, y: float, xy: np.ndarray) -> float:
    a = xy[:-1]
    d = xy[1:] - a
    len2 = (d * d).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / len2
    t = np.where(len2 > 0, np.clip(t, 0.0, 1.0), 0.0)
    cx = a[:, 0] + t * d[:, 0]
    cy = a[:, 1] + t * d[:, 1]
    return float(np.sqrt(((x - cx) ** 2 + (y - cy) ** 2).min()))


def arc_segments(width: float, tolerance: float = POLYGON_TOLERANCE_M) -> int:
    """Segments per quarter circle keeping the chord error below ``tolerance``.

    Never fewer than 8 (32 vertices per full circle).
    """
    if tolerance >= width:
        return 8
    step = 2.0 * math.acos(1.0 - tolerance / width)
    return max(8, math.ceil((math.pi / 2) / step))


@dataclass
class BufferedSegment:
    segment_id: str
    polyline: np.ndarray
    width: float
    polygon: shapely.Polygon

    @property
    def area(self) -> float:
        return self.polygon.area

    def contains(self, x: float, y: float) -> bool:
        return distance_to_polyline(x, y, self.polyline) <= self.width


def buffer_polyline(polyline, width: float = DEFAULT_BUFFER_M, segment_id: str = "",
                    tolerance: float = POLYGON_TOLERANCE_M) -> BufferedSegment:
    """Dilate a projected polyline by ``width`` meters on each side."""
    if not width > 0:
        raise GeometryError(f"buffer width must be positive, got {width}")
    xy = np.asarray(polyline, dtype=np.float64)
    if xy.ndim != 2 or len(xy) < 2 or polyline_length(xy) <= 0:
        raise GeometryError(f"segment {segment_id!r} has zero length")
    poly = shapely.LineString(xy).buffer(
        width, quad_segs=arc_segments(width, tolerance), cap_style="round", join_style="round"
    )
    return BufferedSegment(segment_id, xy, float(width), poly)


def buffer_segments(segments, ref, width: float = DEFAULT_BUFFER_M) -> list[BufferedSegment]:
    return [buffer_polyline(project_polyline(s.polyline, ref), width, s.segment_id) for s in segments]


class SpatialIndex:
    """Uniform-grid index over polyline edges of buffered segments.

    Every edge is registered in all cells its width-expanded bounding box
    touches, so a point's own cell holds every edge that could contain it.
    """

    MAX_CELLS = 1 << 22

    def __init__(self, buffered: Sequence[BufferedSegment], cell_size: float | None = None):
        if not buffered:
            raise GeometryError("cannot index an empty segment collection")
        widths = {b.width for b in buffered}
        if len(widths) != 1:
            raise GeometryError("all buffered segments must share one width")
        self.width = widths.pop()
        self.segment_ids = [b.segment_id for b in buffered]
        a = np.concatenate([b.polyline[:-1] for b in buffered])
        bb = np.concatenate([b.polyline[1:] for b in buffered])
        seg = np.concatenate([np.full(len(b.polyline) - 1, i, dtype=np.int64) for i, b in enumerate(buffered)])
        keep = (a != bb).any(axis=1)
        self.ax, self.ay = np.ascontiguousarray(a[keep, 0]), np.ascontiguousarray(a[keep, 1])
        self.bx, self.by = np.ascontiguousarray(bb[keep, 0]), np.ascontiguousarray(bb[keep, 1])
        self.edge_seg = np.ascontiguousarray(seg[keep])

        w = self.width
        lo_x = np.minimum(self.ax, self.bx) - w
        hi_x = np.maximum(self.ax, self.bx) + w
        lo_y = np.minimum(self.ay, self.by) - w
        hi_y = np.maximum(self.ay, self.by) + w
        self.x0, self.y0 = float(lo_x.min()), float(lo_y.min())
        span_x = float(hi_x.max()) - self.x0
        span_y = float(hi_y.max()) - self.y0
        if cell_size is None:
            edge_len = np.hypot(self.bx - self.ax, self.by - self.ay)
            cell_size = max(2.0 * w, float(np.median(edge_len)))
        while (span_x / cell_size + 1) * (span_y / cell_size + 1) > self.MAX_CELLS:
            cell_size *= 2.0
        self.cell = float(cell_size)
        self.nx = int(span_x // self.cell) + 1
        self.ny = int(span_y // self.cell) + 1

        ix0 = np.floor((lo_x - self.x0) / self.cell).astype(np.int64)
        ix1 = np.minimum(np.floor((hi_x - self.x0) / self.cell).astype(np.int64), self.nx - 1)
        iy0 = np.floor((lo_y - self.y0) / self.cell).astype(np.int64)
        iy1 = np.minimum(np.floor((hi_y - self.y0) / self.cell).astype(np.int64), self.ny - 1)
        nxe = ix1 - ix0 + 1
        nye = iy1 - iy0 + 1
        per_edge = nxe * nye
        edges = np.repeat(np.arange(len(self.edge_seg), dtype=np.int64), per_edge)
        local = np.arange(int(per_edge.sum()), dtype=np.int64) - np.repeat(np.cumsum(per_edge) - per_edge, per_edge)
        cells = (iy0[edges] + local // nxe[edges]) * self.nx + ix0[edges] + local % nxe[edges]
        order = np.lexsort((edges, cells))
        self.cell_edges = np.ascontiguousarray(edges[order])
        self.cell_ptr = np.zeros(self.nx * self.ny + 1, dtype=np.int64)
        np.cumsum(np.bincount(cells, minlength=self.nx * self.ny), out=self.cell_ptr[1:])

    def __len__(self) -> int:
        return len(self.segment_ids)

    def query_many(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """All (point index, segment index) containment pairs, point-major."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.float64)
        return _kernels.capsule_hits(
            x, y, self.x0, self.y0, self.cell, self.nx, self.ny,
            self.cell_ptr, self.cell_edges, self.ax, self.ay, self.bx, self.by,
            self.edge_seg, self.width,
        )

    def query(self, x: float, y: float) -> list[str]:
        _, s = self.query_many([x], [y])
        return sorted(self.segment_ids[i] for i in s)


def build_index(buffered: Sequence[BufferedSegment], cell_size: float | None = None) -> SpatialIndex:
    return SpatialIndex(buffered, cell_size)


class SegmentTagTable:
    """Normalized tag multisets and photo counts per segment.

    ``counts`` is a sparse (segments x vocab) matrix; ``vocab`` is sorted so
    the table does not depend on photo order.
    """

    def __init__(self, segment_ids: Sequence[str], vocab: Sequence[str], counts: sp.csr_matrix,
                 photo_counts: np.ndarray, unassigned: int = 0):
        self.segment_ids = list(segment_ids)
        self.vocab = list(vocab)
        self.counts = sp.csr_matrix(counts, dtype=np.int64)
        self.counts.sum_duplicates()
        self.counts.eliminate_zeros()
        self.counts.sort_indices()
        self.photo_counts = np.asarray(photo_counts, dtype=np.int64)
        self.unassigned = int(unassigned)
        self._row = {s: i for i, s in enumerate(self.segment_ids)}

    def tags(self, segment_id: str) -> Counter:
        i = self._row[segment_id]
        lo, hi = self.counts.indptr[i], self.counts.indptr[i + 1]
        return Counter({self.vocab[j]: int(c) for j, c in zip(self.counts.indices[lo:hi], self.counts.data[lo:hi])})

    def photo_count(self, segment_id: str) -> int:
        return int(self.photo_counts[self._row[segment_id]])

    @property
    def tag_totals(self) -> np.ndarray:
        return np.asarray(self.counts.sum(axis=1)).ravel().astype(np.int64)

    def as_dict(self) -> dict[str, Counter]:
        return {s: self.tags(s) for s, n in zip(self.segment_ids, self.photo_counts) if n}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentTagTable):
            return NotImplemented
        return (
            self.as_dict() == other.as_dict()
            and dict(zip(self.segment_ids, self.photo_counts.tolist()))
            == dict(zip(other.segment_ids, other.photo_counts.tolist()))
            and self.unassigned == other.unassigned
        )

    def rows(self) -> Iterable[tuple[str, str, int]]:
        """(segment_id, tag, count) rows sorted by segment id then tag."""
        for s in sorted(self.segment_ids):
            i = self._row[s]
            lo, hi = self.counts.indptr[i], self.counts.indptr[i + 1]
            for j, c in zip(self.counts.indices[lo:hi], self.counts.data[lo:hi]):
                yield s, self.vocab[j], int(c)

    @classmethod
    def from_rows(cls, segment_ids: Sequence[str], rows: Iterable[tuple[str, str, int]],
                  photo_counts: dict[str, int], unassigned: int = 0) -> "SegmentTagTable":
        rows = list(rows)
        vocab = sorted({t for _, t, _ in rows})
        col = {t: j for j, t in enumerate(vocab)}
        row = {s: i for i, s in enumerate(segment_ids)}
        r = np.fromiter((row[s] for s, _, _ in rows), dtype=np.int64, count=len(rows))
        c = np.fromiter((col[t] for _, t, _ in rows), dtype=np.int64, count=len(rows))
        v = np.fromiter((n for _, _, n in rows), dtype=np.int64, count=len(rows))
        counts = sp.csr_matrix((v, (r, c)), shape=(len(segment_ids), len(vocab)))
        pc = np.array([photo_counts.get(s, 0) for s in segment_ids], dtype=np.int64)
        return cls(segment_ids, vocab, counts, pc, unassigned)


def _photo_tag_csr(photos) -> tuple[list[str], np.ndarray, np.ndarray]:
    """Normalized tag ids per photo as CSR (vocab sorted)."""
    cache: dict[str, str | None] = {}
    tag_lists = []
    for p in photos:
        toks = []
        for raw in p.tags:
            tok = cache.get(raw, 0)
            if tok == 0:
                tok = cache[raw] = normalize(raw)
            if tok is not None:
                toks.append(tok)
        tag_lists.append(toks)
    vocab = sorted({t for t in cache.values() if t is not None})
    col = {t: j for j, t in enumerate(vocab)}
    lengths = np.fromiter((len(t) for t in tag_lists), dtype=np.int64, count=len(tag_lists))
    ptr = np.zeros(len(tag_lists) + 1, dtype=np.int64)
    np.cumsum(lengths, out=ptr[1:])
    ids = np.fromiter((col[t] for toks in tag_lists for t in toks), dtype=np.int64, count=int(ptr[-1]))
    return vocab, ptr, ids


def assign_photos(photos, index: SpatialIndex, ref: tuple[float, float]) -> SegmentTagTable:
    """Add each photo's normalized tags to every segment whose buffer holds it.

    Photos in overlapping buffers count toward all of them; photos matching
    nothing are tallied in ``unassigned``.
    """
    photos = list(photos)
    n_seg = len(index.segment_ids)
    lon = np.fromiter((p.lon for p in photos), dtype=np.float64, count=len(photos))
    lat = np.fromiter((p.lat for p in photos), dtype=np.float64, count=len(photos))
    x, y = project_array(lon, lat, ref)
    pidx, sidx = index.query_many(x, y)
    vocab, ptr, ids = _photo_tag_csr(photos)

    photo_counts = np.bincount(sidx, minlength=n_seg).astype(np.int64)
    hit_photos = np.zeros(len(photos), dtype=bool)
    hit_photos[pidx] = True
    unassigned = int(len(photos) - hit_photos.sum())

    lengths = ptr[pidx + 1] - ptr[pidx]
    rows = np.repeat(sidx, lengths)
    total = int(lengths.sum())
    offs = np.arange(total, dtype=np.int64) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    cols = ids[np.repeat(ptr[pidx], lengths) + offs]
    counts = sp.csr_matrix(
        (np.ones(total, dtype=np.int64), (rows, cols)), shape=(n_seg, len(vocab))
    )
    return SegmentTagTable(index.segment_ids, vocab, counts, photo_counts, unassigned)


def segment_centroids(segments, ref) -> np.ndarray:
    """Projected midpoint (mean vertex) of each segment, shape (n, 2)."""
    return np.array([project_polyline(s.polyline, ref).mean(axis=0) for s in segments])
