"""Rank statistics: Spearman correlation, spatially corrected significance
and fourth-quartile indicators."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

MAX_PAIRS = 1_000_000
DISTANCE_QUANTILE = 0.9


def average_ranks(values) -> np.ndarray:
    """1-based ranks; ties share their mean rank."""
    return sps.rankdata(np.asarray(values, dtype=np.float64), method="average")


def spearman(a, b) -> float:
    """Spearman's rho as the Pearson correlation of average ranks.

    Returns ``nan`` when either input is constant.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("spearman needs two 1-d vectors of equal length")
    if len(a) < 3:
        raise ValueError("spearman needs at least 3 observations")
    ra = average_ranks(a)
    rb = average_ranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        return float("nan")
    return float(np.clip(float(ra @ rb) / den, -1.0, 1.0))


def spearman_matrix(columns: np.ndarray, other: np.ndarray | None = None) -> np.ndarray:
    """Pairwise Spearman rho between columns (or between two column sets)."""
    columns = np.asarray(columns, dtype=np.float64)
    other = columns if other is None else np.asarray(other, dtype=np.float64)
    out = np.empty((columns.shape[1], other.shape[1]))
    for i in range(columns.shape[1]):
        for j in range(other.shape[1]):
            out[i, j] = spearman(columns[:, i], other[:, j])
    return out


def _t_pvalue(rho: float, dof: float) -> float:
    if math.isnan(rho):
        return float("nan")
    if rho == 0:
        return 1.0
    if abs(rho) >= 1.0:
        return 0.0
    t = abs(rho) * math.sqrt(dof / (1.0 - rho * rho))
    return float(2.0 * sps.t.sf(t, dof))


def classical_pvalue(rho: float, n: int) -> float:
    """Two-sided p of ``rho`` against Student-t with n - 2 degrees of freedom."""
    return _t_pvalue(rho, n - 2)


class DistanceClasses:
    """Equal-width distance classes over (sampled) location pairs.

    Pairs farther apart than the 90th percentile of pairwise distances are
    ignored. With more than ``max_pairs`` unordered pairs a fixed-seed random
    subsample is used and class weights are scaled back to the full count.
    """

    def __init__(self, locations, n_classes: int = 20, max_pairs: int = MAX_PAIRS, seed: int = 0):
        loc = np.asarray(locations, dtype=np.float64)
        if loc.ndim != 2 or loc.shape[1] != 2:
            raise ValueError("locations must have shape (n, 2)")
        n = len(loc)
        self.n = n
        self.n_classes = n_classes
        total = n * (n - 1) // 2
        if total <= max_pairs:
            i, j = np.triu_indices(n, k=1)
            scale = 1.0
        else:
            rng = np.random.default_rng(seed)
            i = rng.integers(0, n, size=max_pairs)
            j = rng.integers(0, n - 1, size=max_pairs)
            j = np.where(j >= i, j + 1, j)
            scale = total / max_pairs
        d = np.hypot(*(loc[i] - loc[j]).T)
        cutoff = float(np.quantile(d, DISTANCE_QUANTILE)) if len(d) else 0.0
        self.degenerate = cutoff <= 0.0
        self.cutoff = cutoff
        if self.degenerate:
            self.i = self.j = self.cls = np.empty(0, np.int64)
            self.weights = np.zeros(n_classes)
            return
        keep = d <= cutoff
        cls = np.minimum((d[keep] / cutoff * n_classes).astype(np.int64), n_classes - 1)
        self.i, self.j, self.cls = i[keep], j[keep], cls
        self.sampled = np.bincount(cls, minlength=n_classes).astype(np.float64)
        # ordered pairs per class in the full population
        self.weights = 2.0 * scale * self.sampled

    def autocorrelation(self, series) -> np.ndarray:
        """Moran-type autocorrelation of a series in each distance class."""
        z = np.asarray(series, dtype=np.float64)
        z = z - z.mean()
        ss = float(z @ z)
        if ss == 0 or self.degenerate:
            return np.zeros(self.n_classes)
        prod = np.bincount(self.cls, weights=z[self.i] * z[self.j], minlength=self.n_classes)
        with np.errstate(invalid="ignore", divide="ignore"):
            r = self.n * prod / (self.sampled * ss)
        return np.where(self.sampled > 0, r, 0.0)

    def effective_n(self, ra: np.ndarray, rb: np.ndarray) -> float:
        """n_eff = 1 + n^2 / (n + sum_d W_d r_a(d) r_b(d)), clamped to [3, n].

        The ``n`` in the denominator is the zero-distance class (every point
        paired with itself, autocorrelation 1).
        """
        n = self.n
        den = n + float(np.sum(self.weights * ra * rb))
        if den <= 0:
            return float(n)
        return float(min(max(1.0 + n * n / den, 3.0), n))


@dataclass(frozen=True)
class CliffordResult:
    rho: float
    n: int
    effective_n: float
    p: float
    classical_p: float


def clifford_pvalue(a, b, locations, distance_classes: int = 20,
                    classes: DistanceClasses | None = None) -> CliffordResult:
    """Spearman rho with a spatially corrected p-value.

    Each ranked series' autocorrelation is estimated per distance class, the
    effective sample size is derived from their cross products, and rho is
    tested against Student-t with ``n_eff - 2`` degrees of freedom. Pass a
    prebuilt ``classes`` to reuse the pair structure across many tests.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = len(a)
    if n < 20:
        raise ValueError(f"spatially corrected test needs n >= 20, got {n}")
    rho = spearman(a, b)
    classical = classical_pvalue(rho, n)
    if classes is None:
        classes = DistanceClasses(locations, distance_classes)
    if classes.n != n:
        raise ValueError("locations and series differ in length")
    if classes.degenerate:
        warnings.warn("all locations coincide; using the classical test", RuntimeWarning, stacklevel=2)
        return CliffordResult(rho, n, float(n), classical, classical)
    n_eff = classes.effective_n(classes.autocorrelation(average_ranks(a)),
                                classes.autocorrelation(average_ranks(b)))
    return CliffordResult(rho, n, n_eff, _t_pvalue(rho, n_eff - 2.0), classical)


def clifford_matrix(left: np.ndarray, right: np.ndarray, locations, distance_classes: int = 20):
    """rho, n_eff and corrected p for every (left column, right column) pair."""
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    n = len(left)
    classes = DistanceClasses(locations, distance_classes)
    ac_l = [classes.autocorrelation(average_ranks(left[:, i])) for i in range(left.shape[1])]
    ac_r = [classes.autocorrelation(average_ranks(right[:, j])) for j in range(right.shape[1])]
    shape = (left.shape[1], right.shape[1])
    rho, neff, p = np.empty(shape), np.empty(shape), np.empty(shape)
    for i in range(shape[0]):
        for j in range(shape[1]):
            r = spearman(left[:, i], right[:, j])
            ne = float(n) if classes.degenerate else classes.effective_n(ac_l[i], ac_r[j])
            rho[i, j], neff[i, j], p[i, j] = r, ne, _t_pvalue(r, ne - 2.0)
    return rho, neff, p


def quartile_flags(values) -> np.ndarray:
    """Flag values in the fourth quartile.

    The threshold is the ceil(n/4)-th largest value (nearest rank counted from
    the top); every value at or above it is flagged, so ties at the boundary
    are all in, and at least ceil(n/4) values are always flagged.
    """
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n < 4:
        raise ValueError("quartile flags need at least 4 values")
    k = -(-n // 4)
    threshold = np.sort(v)[n - k]
    if v.min() == v.max():
        warnings.warn("constant column: every value is in the fourth quartile", RuntimeWarning, stacklevel=2)
    return v >= threshold
