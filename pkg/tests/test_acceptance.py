"""The ten acceptance criteria, one test each.

Every test carries ``@pytest.mark.criterion(n, title)``; the conftest prints
one PASS/FAIL line per criterion at the end of the run.
"""

import csv
import filecmp
import math
import os
import shutil
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import psutil
import pytest
from sklearn.metrics import normalized_mutual_info_score

from chattymaps import geo, layers, perception, stats, synthetic, taxonomy, validation
from chattymaps.constants import EMOTIONS, PERCEPTIONS, SOUND_CATEGORIES, SOUNDWALK_SOUNDS
from chattymaps.lexicon import Lexicon
from conftest import run_pipeline
from test_geo import linear_scan
from test_stats import brute_spearman
from test_taxonomy import BARBELL, TRIANGLES, exhaustive_best, graph


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# 1 ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "formula suite")
def test_formula_suite():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    tax = synthetic.toy_taxonomy()
    vocab = sorted(tax.paths) + ["street", "city"]
    segs = {f"s{i}": {t: int(c) for t, c in zip(vocab, rng.integers(0, 4, len(vocab))) if c}
            for i in range(300)}
    rows = [(s, t, c) for s, tags in segs.items() for t, c in tags.items()]
    table = geo.SegmentTagTable.from_rows(sorted(segs), rows, {s: 1 for s in segs})

    prof = layers.sound_profiles(table, tax)
    for sid in prof.segment_ids:
        assert sum(prof.exact_fractions(sid)) == 1
    zs = layers.zscores(prof)
    np.testing.assert_allclose(zs.z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(zs.z.std(axis=0), 1, atol=1e-9)

    div = layers.diversities(prof)
    assert ((div >= 0) & (div <= math.log(6) + 1e-12)).all()
    assert layers.diversity([1, 0, 0, 0, 0, 0]) == pytest.approx(0.0, abs=1e-9)
    assert layers.diversity([1 / 6] * 6) == pytest.approx(math.log(6), abs=1e-9)
    assert layers.diversity([0.5, 0.5, 0, 0, 0, 0]) == pytest.approx(math.log(2), abs=1e-9)

    emo_lex = Lexicon("emo", {"car": ("anger", "fear"), "bird": ("joy",), "music": ("joy", "trust")})
    emo = layers.emotion_profiles(table, emo_lex)
    totals = table.tag_totals
    for sid in emo.segment_ids[:50]:
        tags = table.tags(sid)
        expect = layers.emotion_profile(tags, emo_lex)
        np.testing.assert_allclose(emo.fractions[emo.index_of([sid])[0]], expect, atol=1e-15)
    assert (emo.fractions >= 0).all()
    assert len(emo) == int((totals > 0).sum())
    ez = layers.zscores(emo) if (emo.fractions.std(axis=0) > 0).all() else None
    if ez is None:
        with pytest.warns(RuntimeWarning):
            ez = layers.zscores(emo)
    live = ~ez.degenerate
    np.testing.assert_allclose(ez.z.mean(axis=0), 0, atol=1e-9)
    np.testing.assert_allclose(ez.z.std(axis=0)[live], 1, atol=1e-9)
    assert ez.categories == EMOTIONS
    assert time.perf_counter() - start < 1.0


# 2 ---------------------------------------------------------------------------


@pytest.mark.criterion(2, "geometry oracle")
def test_geometry_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    buffered = []
    for k in range(60):
        n_vert = int(rng.integers(2, 5))
        p0 = rng.uniform(-1000, 1000, 2)
        xy = np.vstack([p0, p0 + np.cumsum(rng.normal(0, 150, (n_vert - 1, 2)), axis=0)])
        buffered.append(geo.buffer_polyline(xy, 22.5, f"s{k}"))
    pts = rng.uniform(-1200, 1200, (10_000, 2))
    p, s = geo.build_index(buffered).query_many(pts[:, 0], pts[:, 1])
    got = set(zip(p.tolist(), s.tolist()))
    assert got == linear_scan(pts, buffered)

    seg = geo.buffer_polyline(np.array([[0.0, 0.0], [100.0, 0.0]]), 22.5)
    exact = 100 * 45 + math.pi * 22.5 ** 2
    assert exact == pytest.approx(6090.43, abs=0.005)
    n = 400_000
    box = (145.0, 45.0)
    mc = rng.uniform([-22.5, -22.5], [122.5, 22.5], (n, 2))
    hits = len(geo.build_index([seg]).query_many(mc[:, 0], mc[:, 1])[0])
    frac = hits / n
    area = box[0] * box[1] * frac
    se = box[0] * box[1] * math.sqrt(frac * (1 - frac) / n)
    assert abs(area - exact) <= 3 * se
    perimeter = 200 + 2 * math.pi * 22.5
    assert abs(seg.area - exact) <= geo.POLYGON_TOLERANCE_M * perimeter
    assert time.perf_counter() - start < 10.0


# 3 ---------------------------------------------------------------------------


@pytest.mark.criterion(3, "clustering recovery")
def test_clustering_recovery():
    start = time.perf_counter()
    rgs, values = exhaustive_best(BARBELL)
    assert len(rgs) == 115_975
    part = taxonomy.infomap_partition(BARBELL, seed=0)
    found = taxonomy.map_equation(BARBELL, part)
    assert found == pytest.approx(values.min(), abs=1e-12)
    assert normalized_mutual_info_score(rgs[np.argmin(values)], [part.paths[w][0] for w in BARBELL.nodes]) == 1.0

    for blocks in ([20, 20], [20, 20, 20, 20]):
        for mixing in (0.0, 0.05, 0.1):
            for seed in range(20):
                g, labels = synthetic.planted_partition(blocks, mixing, seed=seed)
                part = taxonomy.infomap_partition(g, seed=seed)
                nmi = normalized_mutual_info_score(labels, [part.paths[w][0] for w in g.nodes])
                assert nmi >= 0.99, (blocks, mixing, seed, nmi)

    for seed in range(10):
        g, _ = synthetic.planted_partition([15, 15, 15], 0.25, mean_degree=6, seed=seed)
        states = []
        taxonomy.louvain(g, seed=seed, on_move=states.append)
        q = [taxonomy.modularity(g, s) for s in states]
        assert all(b >= a - 1e-12 for a, b in zip(q, q[1:]))
    assert time.perf_counter() - start < 120.0


# 4 ---------------------------------------------------------------------------


@pytest.mark.criterion(4, "modularity values")
def test_modularity_values():
    assert taxonomy.modularity(TRIANGLES, [0, 0, 0, 1, 1, 1], exact=True) == Fraction(1, 2)
    assert taxonomy.modularity(TRIANGLES, [0] * 6, exact=True) == 0
    assert taxonomy.modularity(BARBELL, [0] * 10, exact=True) == 0
    tri = graph([("a", "b", 1), ("b", "c", 1), ("a", "c", 1)])
    assert taxonomy.modularity(tri, [0, 1, 2], exact=True) == Fraction(-1, 3)


# 5 ---------------------------------------------------------------------------


@pytest.mark.criterion(5, "statistics oracle")
def test_statistics_oracle():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 1000:
        n = int(rng.integers(3, 40))
        a = rng.integers(0, 8, n)
        b = rng.integers(0, 8, n)
        if len(set(a)) < 2 or len(set(b)) < 2:
            continue
        assert abs(stats.spearman(a, b) - brute_spearman(a, b)) <= 1e-12
        checked += 1

    for seed in range(50):
        r = np.random.default_rng(seed)
        loc = r.uniform(0, 10_000, (500, 2))
        res = stats.clifford_pvalue(r.normal(size=500), r.normal(size=500), loc)
        assert 0.8 <= res.effective_n / res.n <= 1.05

        trend = np.sin(loc[:, 0] / 2500.0) + np.cos(loc[:, 1] / 3000.0)
        a = trend + 0.4 * r.normal(size=500)
        b = trend + 0.4 * r.normal(size=500) + 0.5 * np.sin(loc[:, 1] / 2000.0)
        res = stats.clifford_pvalue(a, b, loc)
        assert res.effective_n < res.n
        assert res.p >= res.classical_p


# 6 ---------------------------------------------------------------------------


def _records(s, f):
    from chattymaps.ingest import SoundwalkRecord

    return [SoundwalkRecord("w", f"p{k}", "l", tuple(map(int, a)), tuple(map(int, b))) for k, (a, b) in enumerate(zip(s, f))]


@pytest.mark.criterion(6, "perception pipeline")
def test_perception_pipeline():
    n = 40
    s = np.tile(np.r_[np.full(30, 1), np.full(10, 3)][:, None], (1, 5))
    f = np.tile(np.r_[np.full(30, 1), np.full(10, 3)][:, None], (1, 8))
    traffic, chaotic = SOUNDWALK_SOUNDS.index("traffic"), PERCEPTIONS.index("chaotic")
    s[:, traffic] = f[:, chaotic] = np.r_[np.full(10, 9), np.full(n - 10, 2)]
    assert perception.conditional_probabilities(_records(s, f)).prob("chaotic", "traffic") == 1.0

    rng = np.random.default_rng(0)
    t = perception.conditional_probabilities(_records(rng.integers(1, 11, (10_000, 5)), rng.integers(1, 11, (10_000, 8))))
    assert np.abs(t.p_perception_given_sound - t.p_perception[None, :]).max() <= 0.05

    t = perception.conditional_probabilities(synthetic.synthetic_soundwalk(342, seed=0))
    again = perception.bayes_from_counts(t.q4_sound, t.q4_perception, t.q4_joint, t.q4_sound_star, t.q4_perception_star)
    np.testing.assert_array_equal(again[3], t.p_perception_given_sound)
    np.testing.assert_array_equal(again[2], t.p_sound_given_perception)

    x = np.outer(rng.normal(size=300), rng.normal(size=8))
    with pytest.warns(RuntimeWarning):
        assert perception.principal_components_array(x).explained_ratio[0] == pytest.approx(1.0, abs=1e-9)

    r = 1 / math.sqrt(2)
    loadings = np.array([[1, 0], [-r, r], [r, r], [0, -1], [r, -r], [-1, 0], [0, 1], [-r, -r]])
    x = (rng.normal(size=(2000, 2)) * [2.0, 1.5]) @ loadings.T + rng.normal(0, 0.3, (2000, 8))
    assert perception.principal_components_array(x).explained_ratio[:2].sum() >= 0.9


# 7 ---------------------------------------------------------------------------


@pytest.mark.criterion(7, "EWL")
def test_ewl():
    assert validation.ewl(60, 60, 60) == pytest.approx(66.21, abs=0.01)
    for ld in range(30, 91, 10):
        for le in range(30, 91, 10):
            for ln in range(30, 91, 10):
                base = validation.ewl(ld, le, ln)
                assert validation.ewl(ld + 1, le, ln) > base
                assert validation.ewl(ld, le + 1, ln) > base
                assert validation.ewl(ld, le, ln + 1) > base


# 8 ---------------------------------------------------------------------------


@pytest.mark.criterion(8, "end-to-end synthetic city")
def test_end_to_end_city(city, city_dir, tmp_path):
    work = tmp_path / "city"
    shutil.copytree(city_dir, work, ignore=shutil.ignore_patterns("out"))
    start = time.perf_counter()
    out = run_pipeline(work)
    elapsed = time.perf_counter() - start

    tags = {r["segment_id"]: int(r["tag_total"]) for r in _read_csv(out / "sound_profiles.csv")}
    zrows = _read_csv(out / "zscores.csv")
    eligible = [r for r in zrows if tags[r["segment_id"]] >= 5]
    match = sum(r["dominant"] == city.regimes[r["segment_id"]] for r in eligible)
    assert len(eligible) >= 300
    assert match / len(eligible) >= 0.95

    sweep = _read_csv(out / "noise_correlation.csv")
    low = [r for r in sweep if int(r["N"]) <= 25]
    assert {int(r["N"]) for r in low} == {1, 5, 10, 25}
    for r in low:
        if r["category"] == "transport":
            assert float(r["rho"]) > 0.3 and float(r["p"]) < 0.01, r
        if r["category"] == "nature":
            assert float(r["rho"]) < 0, r
    assert elapsed < 60.0


# 9 ---------------------------------------------------------------------------


@pytest.mark.criterion(9, "determinism")
def test_determinism(city_dir, pipeline_out, tmp_path):
    work = tmp_path / "again"
    shutil.copytree(city_dir, work, ignore=shutil.ignore_patterns("out"))
    again = run_pipeline(work)
    names = sorted(p.name for p in pipeline_out.iterdir())
    assert names == sorted(p.name for p in again.iterdir())
    assert "partition.csv" in names and "taxonomy.csv" in names
    match, mismatch, errors = filecmp.cmpfiles(pipeline_out, again, names, shallow=False)
    assert mismatch == [] and errors == []


# 10 --------------------------------------------------------------------------


def _timed(cmd, cwd):
    start = time.perf_counter()
    env = dict(os.environ)
    env.pop("CHATTYMAPS_SEED", None)
    proc = psutil.Popen(cmd, cwd=cwd, env=env, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE)
    peak = 0
    while proc.poll() is None:
        try:
            peak = max(peak, proc.memory_info().rss)
        except psutil.Error:
            pass
        time.sleep(0.1)
    return proc.returncode, time.perf_counter() - start, peak, proc.stderr.read().decode()


@pytest.mark.criterion(10, "scale smoke test")
def test_scale(tmp_path):
    manifest = synthetic.write_scale_inputs(tmp_path / "scale", 150_000, 2_000_000)
    total = 0.0
    peak = 0
    for sub in ("assign", "sound-map"):
        rc, secs, rss, err = _timed([sys.executable, "-m", "chattymaps.cli", sub, "--manifest", str(manifest)], tmp_path)
        assert rc == 0, err
        total += secs
        peak = max(peak, rss)
    print(f"scale: assign + sound-map {total:.1f} s, peak RSS {peak / 2**30:.2f} GiB")
    summary = {r["metric"]: r["value"] for r in _read_csv(manifest.parent / "out" / "assign_summary.csv")}
    assert float(summary["photos"]) == 2_000_000 and float(summary["segments"]) == 150_000
    assert total < 600.0
    assert peak < 8 * 10**9
