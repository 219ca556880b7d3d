"""Noise-level aggregation and the noise vs. sound-category correlation sweep."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from chattymaps import stats

log = logging.getLogger(__name__)

DAY_HOURS, EVENING_HOURS, NIGHT_HOURS = 14, 2, 8
DEFAULT_THRESHOLDS = (1, 5, 10, 25, 50, 100, 200)
MIN_SWEEP_SEGMENTS = 20


def ewl(l_day: float, l_evening: float, l_night: float,
        evening_penalty: float = 5.0, night_penalty: float = 10.0) -> float:
    """Energetic day-evening-night level in dB.

    Day 07-21 h, evening 21-23 h (+5 dB), night 23-07 h (+10 dB).
    """
    energy = (
        DAY_HOURS * 10.0 ** (l_day / 10.0)
        + EVENING_HOURS * 10.0 ** ((l_evening + evening_penalty) / 10.0)
        + NIGHT_HOURS * 10.0 ** ((l_night + night_penalty) / 10.0)
    )
    return 10.0 * math.log10(energy / (DAY_HOURS + EVENING_HOURS + NIGHT_HOURS))


def noise_levels(records, measure: str = "ewl") -> dict[str, float]:
    """Segment id -> level. For ``ewl`` a supplied value wins over the computed one."""
    out = {}
    for r in records:
        if measure == "ewl":
            out[r.segment_id] = r.ewl if r.ewl is not None else ewl(r.l_day, r.l_evening, r.l_night)
        else:
            out[r.segment_id] = getattr(r, measure)
    return out


@dataclass(frozen=True)
class SweepPoint:
    min_tags: int
    category: str
    rho: float
    n: int
    effective_n: float
    p: float


def noise_correlation_sweep(profiles, levels: Mapping[str, float], locations: Mapping[str, Sequence[float]],
                            thresholds: Sequence[int] = DEFAULT_THRESHOLDS,
                            distance_classes: int = 20) -> list[SweepPoint]:
    """Spearman rho between noise level and each category fraction, restricted
    to segments with at least N sound tags, for each N in ``thresholds``.

    Points with fewer than 20 segments are skipped with a warning.
    """
    if list(thresholds) != sorted(thresholds):
        raise ValueError("thresholds must be ascending")
    idx = np.array([i for i, s in enumerate(profiles.segment_ids) if s in levels], dtype=np.int64)
    ids = [profiles.segment_ids[i] for i in idx]
    fractions = profiles.fractions[idx]
    tags = profiles.tag_total[idx]
    noise = np.array([levels[s] for s in ids], dtype=np.float64)
    loc = np.array([locations[s] for s in ids], dtype=np.float64).reshape(-1, 2)
    out = []
    for n_min in thresholds:
        sel = tags >= n_min
        n = int(sel.sum())
        if n < MIN_SWEEP_SEGMENTS:
            log.warning("N=%d: only %d segments, point omitted", n_min, n)
            continue
        rho, neff, p = stats.clifford_matrix(noise[sel, None], fractions[sel], loc[sel], distance_classes)
        for k, cat in enumerate(profiles.categories):
            out.append(SweepPoint(int(n_min), cat, float(rho[0, k]), n, float(neff[0, k]), float(p[0, k])))
    return out
