"""Compare the compiled and pure-Python capsule-hit kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--segments 20000] [--points 500000]

Both backends run on the same index and points; the script checks that
their outputs agree before reporting timings.
"""

import argparse
import time

import numpy as np

from chattymaps import _fallback, geo, synthetic


def _timed(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--segments", type=int, default=20_000)
    ap.add_argument("--points", type=int, default=500_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)

    rng = np.random.default_rng(a.seed)
    buffered = [geo.buffer_polyline(xy, 22.5, sid) for sid, xy in synthetic.grid_segments(a.segments)]
    idx = geo.build_index(buffered)
    lo = np.array([idx.x0, idx.y0])
    hi = lo + idx.cell * np.array([idx.nx, idx.ny])
    pts = rng.uniform(lo, hi, (a.points, 2))
    x, y = np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1])
    args = (x, y, idx.x0, idx.y0, idx.cell, idx.nx, idx.ny, idx.cell_ptr, idx.cell_edges,
            idx.ax, idx.ay, idx.bx, idx.by, idx.edge_seg, idx.width)

    rows = [("python", *_timed(_fallback.capsule_hits, args, a.repeat))]
    try:
        from chattymaps import _speedups
    except ImportError:
        print("compiled extension not built; timing the fallback only")
    else:
        rows.append(("cython", *_timed(_speedups.capsule_hits, args, a.repeat)))
        for ref, got in zip(rows[0][2], rows[1][2]):
            np.testing.assert_array_equal(ref, got)

    print(f"{a.segments} segments, {a.points} points, best of {a.repeat}")
    base = rows[0][1]
    for name, secs, (hp, _) in rows:
        print(f"{name:>7}  {secs:8.3f} s  {a.points / secs / 1e6:7.2f} Mpts/s  "
              f"hits={len(hp)}  speedup={base / secs:5.1f}x")


if __name__ == "__main__":
    main()
