import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chattymaps import _fallback, _kernels, geo, synthetic
from chattymaps.ingest import PhotoRecord, StreetSegment

W = 22.5


def linear_scan(points, buffered):
    """Brute-force containment: distance from every point to every edge of
    every polyline, no index."""
    pts = np.asarray(points, dtype=np.float64)
    out = set()
    for j, b in enumerate(buffered):
        best = np.full(len(pts), np.inf)
        for a, c in zip(b.polyline[:-1], b.polyline[1:]):
            d = c - a
            t = np.clip(((pts - a) @ d) / (d @ d), 0.0, 1.0)
            best = np.minimum(best, np.hypot(*(pts - (a + t[:, None] * d)).T))
        out.update((int(i), j) for i in np.nonzero(best <= b.width)[0])
    return out


def _random_network(rng, n_seg=40, extent=1500.0):
    buffered = []
    for k in range(n_seg):
        n_vert = int(rng.integers(2, 5))
        start = rng.uniform(-extent / 2, extent / 2, 2)
        steps = rng.normal(0, 120, (n_vert - 1, 2))
        xy = np.vstack([start, start + np.cumsum(steps, axis=0)])
        buffered.append(geo.buffer_polyline(xy, W, f"s{k}"))
    return buffered


def test_millidegree_latitude_is_111_metres():
    p = geo.project(0.0, 0.001, (0.0, 0.0))
    assert p.x == 0.0
    assert p.y == pytest.approx(111.195, abs=1e-3)


def test_longitude_scales_with_reference_latitude():
    p = geo.project(0.001, 60.0, (0.0, 60.0))
    assert p.x == pytest.approx(111.195 * 0.5, abs=1e-3)


def test_capsule_boundaries():
    b = geo.buffer_polyline(np.array([[0.0, 0.0], [100.0, 0.0]]), W, "a")
    assert b.contains(50, 22.4)
    assert not b.contains(50, 22.6)
    assert b.contains(110, 0)  # round cap
    assert not b.contains(123, 0)
    idx = geo.build_index([b])
    assert idx.query(50, 22.4) == ["a"]
    assert idx.query(50, 22.6) == []
    assert idx.query(110, 0) == ["a"]


def test_buffer_polygon_area_close_to_capsule():
    b = geo.buffer_polyline(np.array([[0.0, 0.0], [100.0, 0.0]]), W)
    exact = 100 * 2 * W + math.pi * W * W
    assert b.area == pytest.approx(exact, rel=2e-3)
    assert b.area < exact


def test_zero_length_and_bad_width_rejected():
    with pytest.raises(geo.GeometryError):
        geo.buffer_polyline(np.array([[1.0, 1.0], [1.0, 1.0]]), W)
    with pytest.raises(geo.GeometryError):
        geo.buffer_polyline(np.array([[0.0, 0.0], [1.0, 0.0]]), 0.0)


def test_linear_scan_agrees_with_pointwise_distance():
    rng = np.random.default_rng(9)
    buffered = _random_network(rng, 5)
    pts = rng.uniform(-900, 900, (300, 2))
    pointwise = {(i, j) for i, (x, y) in enumerate(pts) for j, b in enumerate(buffered)
                 if geo.distance_to_polyline(x, y, b.polyline) <= b.width}
    assert linear_scan(pts, buffered) == pointwise


def test_arc_segments_tolerance():
    n = geo.arc_segments(W)
    assert n >= 8
    chord_err = W * (1 - math.cos((math.pi / 2) / n / 2))
    assert chord_err <= geo.POLYGON_TOLERANCE_M


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_index_matches_linear_scan(seed):
    rng = np.random.default_rng(seed)
    buffered = _random_network(rng)
    pts = rng.uniform(-900, 900, (3000, 2))
    idx = geo.build_index(buffered)
    p, s = idx.query_many(pts[:, 0], pts[:, 1])
    assert set(zip(p.tolist(), s.tolist())) == linear_scan(pts, buffered)


@pytest.mark.parametrize("cell", [5.0, 50.0, 800.0])
def test_index_independent_of_cell_size(cell):
    rng = np.random.default_rng(7)
    buffered = _random_network(rng, 25)
    pts = rng.uniform(-900, 900, (1500, 2))
    p, s = geo.build_index(buffered, cell_size=cell).query_many(pts[:, 0], pts[:, 1])
    assert set(zip(p.tolist(), s.tolist())) == linear_scan(pts, buffered)


@pytest.mark.skipif(_kernels.BACKEND != "cython", reason="compiled extension not built")
def test_compiled_and_fallback_kernels_agree():
    from chattymaps import _speedups

    rng = np.random.default_rng(3)
    idx = geo.build_index(_random_network(rng, 60))
    pts = rng.uniform(-1000, 1000, (20000, 2))
    args = (idx.x0, idx.y0, idx.cell, idx.nx, idx.ny, idx.cell_ptr, idx.cell_edges,
            idx.ax, idx.ay, idx.bx, idx.by, idx.edge_seg, idx.width)
    x, y = np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1])
    cp, cs = _speedups.capsule_hits(x, y, *args)
    fp, fs = _fallback.capsule_hits(x, y, *args)
    np.testing.assert_array_equal(cp, fp)
    np.testing.assert_array_equal(cs, fs)


def _grid_city():
    segs, photos = [], []
    for sid, xy in synthetic.grid_segments(60):
        poly = synthetic._unproject(xy, synthetic.ORIGIN)
        segs.append(StreetSegment(sid, tuple(poly), "residential"))
        mid = synthetic._unproject(xy.mean(axis=0, keepdims=True), synthetic.ORIGIN)[0]
        photos.append(PhotoRecord(f"p{sid}", mid[0], mid[1], ("bird",)))
    return segs, photos


def test_grid_midpoint_photos_hit_only_their_segment():
    segs, photos = _grid_city()
    ref = geo.reference_point(segs)
    table = geo.assign_photos(photos, geo.build_index(geo.buffer_segments(segs, ref)), ref)
    assert table.photo_counts.tolist() == [1] * len(segs)
    assert table.unassigned == 0
    for s in segs:
        assert table.tags(s.segment_id) == {"bird": 1}


def test_overlapping_buffers_count_photo_twice():
    segs = [StreetSegment("a", ((0.0, 0.0), (0.001, 0.0)), "primary"),
            StreetSegment("b", ((0.0, 0.0001), (0.001, 0.0001)), "primary")]
    photos = [PhotoRecord("p", 0.0005, 0.00005, ("Car", "car", "!!"))]
    ref = (0.0, 0.0)
    table = geo.assign_photos(photos, geo.build_index(geo.buffer_segments(segs, ref)), ref)
    assert table.tags("a") == {"car": 2} and table.tags("b") == {"car": 2}
    assert table.photo_counts.tolist() == [1, 1]


def test_far_photo_unassigned():
    segs = [StreetSegment("a", ((0.0, 0.0), (0.001, 0.0)), "primary")]
    ref = (0.0, 0.0)
    table = geo.assign_photos([PhotoRecord("p", 0.5, 0.5, ("x",))],
                              geo.build_index(geo.buffer_segments(segs, ref)), ref)
    assert table.unassigned == 1 and table.photo_counts.tolist() == [0]


def test_table_rows_round_trip():
    segs, photos = _grid_city()
    ref = geo.reference_point(segs)
    table = geo.assign_photos(photos, geo.build_index(geo.buffer_segments(segs, ref)), ref)
    back = geo.SegmentTagTable.from_rows(
        table.segment_ids, table.rows(), dict(zip(table.segment_ids, table.photo_counts.tolist())))
    assert back == table


@settings(max_examples=25, deadline=None)
@given(st.randoms(use_true_random=False))
def test_assignment_invariant_to_photo_order(rnd):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    city = synthetic.synthetic_city(40, seed=int(rng.integers(1000)))
    photos = list(city.photos)
    ref = geo.reference_point(city.segments)
    idx = geo.build_index(geo.buffer_segments(city.segments, ref))
    base = geo.assign_photos(photos, idx, ref)
    rnd.shuffle(photos)
    assert geo.assign_photos(photos, idx, ref) == base
