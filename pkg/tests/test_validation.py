import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chattymaps import validation
from chattymaps.constants import SOUND_CATEGORIES
from chattymaps.ingest import NoiseRecord
from chattymaps.layers import ProfileTable


def test_ewl_equal_sixty():
    assert validation.ewl(60, 60, 60) == pytest.approx(66.21, abs=0.005)


def test_ewl_day_only():
    assert validation.ewl(70, -300, -300) == pytest.approx(70 + 10 * math.log10(14 / 24), abs=1e-9)
    assert validation.ewl(70, -300, -300) == pytest.approx(70 - 2.34, abs=0.005)


@given(st.floats(-20, 130))
def test_ewl_without_penalties_is_identity(v):
    assert validation.ewl(v, v, v, 0.0, 0.0) == pytest.approx(v, abs=1e-9)


@given(st.floats(0, 120))
def test_ewl_of_equal_levels_within_ten_db(v):
    assert v < validation.ewl(v, v, v) < v + 10


@given(st.floats(0, 120), st.floats(0, 120), st.floats(0, 120), st.floats(0, 5), st.integers(0, 2))
def test_ewl_monotone(ld, le, ln, bump, which):
    args = [ld, le, ln]
    base = validation.ewl(*args)
    args[which] += bump
    assert validation.ewl(*args) >= base - 1e-12


def test_noise_levels_prefers_supplied_ewl():
    recs = [NoiseRecord("a", 60, 60, 60, None), NoiseRecord("b", 60, 60, 60, 50.0)]
    lv = validation.noise_levels(recs)
    assert lv["a"] == pytest.approx(validation.ewl(60, 60, 60)) and lv["b"] == 50.0
    assert validation.noise_levels(recs, "l_night") == {"a": 60, "b": 60}


def _profiles(rng, n):
    totals = rng.integers(1, 300, n)
    counts = np.array([rng.multinomial(t, rng.dirichlet(np.ones(6))) for t in totals])
    ids = [f"s{i:04d}" for i in range(n)]
    loc = dict(zip(ids, map(tuple, rng.uniform(0, 8000, (n, 2)))))
    return ProfileTable(ids, SOUND_CATEGORIES, counts, totals), loc


def test_sweep_planted_transport():
    rng = np.random.default_rng(0)
    prof, loc = _profiles(rng, 1500)
    transport = prof.fractions[:, 0]
    levels = dict(zip(prof.segment_ids, 55 + 20 * transport + rng.normal(0, 2, len(prof))))
    pts = validation.noise_correlation_sweep(prof, levels, loc)
    tr = [p for p in pts if p.category == "transport"]
    assert [p.min_tags for p in tr] == [1, 5, 10, 25, 50, 100, 200]
    assert all(p.rho > 0 and p.p < 0.01 for p in tr)


def test_sweep_independent_noise():
    rng = np.random.default_rng(1)
    prof, loc = _profiles(rng, 800)
    levels = dict(zip(prof.segment_ids, rng.normal(60, 5, len(prof))))
    pts = validation.noise_correlation_sweep(prof, levels, loc)
    assert np.mean([abs(p.rho) < 0.15 for p in pts]) >= 0.9
    assert np.mean([p.p > 0.01 for p in pts]) >= 0.9


def test_sweep_restriction_reproduces_point():
    rng = np.random.default_rng(2)
    prof, loc = _profiles(rng, 400)
    levels = dict(zip(prof.segment_ids, rng.normal(60, 5, len(prof))))
    full = validation.noise_correlation_sweep(prof, levels, loc, thresholds=(1, 50))
    sub = prof.subset(prof.tag_total >= 50)
    again = validation.noise_correlation_sweep(sub, levels, loc, thresholds=(50,))
    assert [p for p in full if p.min_tags == 50] == again


def test_sweep_omits_small_points(caplog):
    rng = np.random.default_rng(3)
    prof, loc = _profiles(rng, 30)
    levels = dict(zip(prof.segment_ids, rng.normal(60, 5, 30)))
    pts = validation.noise_correlation_sweep(prof, levels, loc, thresholds=(1, 1000))
    assert {p.min_tags for p in pts} == {1}
    assert "N=1000" in caplog.text


def test_sweep_thresholds_ascending():
    rng = np.random.default_rng(3)
    prof, loc = _profiles(rng, 30)
    with pytest.raises(ValueError):
        validation.noise_correlation_sweep(prof, {}, loc, thresholds=(5, 1))
