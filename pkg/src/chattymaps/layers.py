"""Per-segment sound and emotion layers, z-scores, street-type averages,
dominant categories and Shannon diversity."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from chattymaps import stats
from chattymaps.constants import DEFAULT_MIN_TAGS, EMOTIONS, INSUFFICIENT, SOUND_CATEGORIES
from chattymaps.lexicon import Lexicon, Taxonomy

DIVERSITY_BINS = 20
TAG_BUCKETS = (1, 2, 3, 4, 5, 6, 8, 10, 15, 20, 25, 30, 40, 50, 75, 100, 200, 500)


@dataclass(frozen=True)
class SoundProfile:
    segment_id: str
    fractions: tuple[float, ...]
    tag_total: int
    counts: tuple[int, ...] = ()


@dataclass
class ProfileTable:
    """Category counts for the segments where the layer is defined.

    ``tag_total`` is the denominator of the fractions: the number of
    sound-matched tags for the sound layer, all tags for the emotion layer.
    ``label_total`` is the summed label counts; the sound layer normalizes by
    it so fractions sum to 1 even if a tag carries two categories.
    """

    segment_ids: list[str]
    categories: tuple[str, ...]
    counts: np.ndarray
    tag_total: np.ndarray
    normalize_by_labels: bool = True
    multi_label: np.ndarray | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64).reshape(len(self.segment_ids), len(self.categories))
        self.tag_total = np.asarray(self.tag_total, dtype=np.int64)
        if self.multi_label is None:
            self.multi_label = np.zeros(len(self.segment_ids), dtype=bool)
        self._row = {s: i for i, s in enumerate(self.segment_ids)}

    def __len__(self) -> int:
        return len(self.segment_ids)

    @property
    def denominators(self) -> np.ndarray:
        return self.counts.sum(axis=1) if self.normalize_by_labels else self.tag_total

    @property
    def fractions(self) -> np.ndarray:
        den = self.denominators.astype(np.float64)
        return self.counts / den[:, None]

    def exact_fractions(self, segment_id: str) -> list[Fraction]:
        i = self._row[segment_id]
        den = int(self.denominators[i])
        return [Fraction(int(c), den) for c in self.counts[i]]

    def profile(self, segment_id: str) -> SoundProfile:
        i = self._row[segment_id]
        return SoundProfile(segment_id, tuple(self.fractions[i].tolist()), int(self.tag_total[i]),
                            tuple(self.counts[i].tolist()))

    def index_of(self, segment_ids: Iterable[str]) -> np.ndarray:
        return np.array([self._row[s] for s in segment_ids], dtype=np.int64)

    def subset(self, mask) -> "ProfileTable":
        mask = np.asarray(mask)
        idx = np.nonzero(mask)[0] if mask.dtype == bool else mask
        return ProfileTable([self.segment_ids[i] for i in idx], self.categories, self.counts[idx],
                            self.tag_total[idx], self.normalize_by_labels, self.multi_label[idx])


def _category_matrix(vocab: Sequence[str], source: Taxonomy | Lexicon,
                     categories: Sequence[str]) -> sp.csr_matrix:
    col = {c: k for k, c in enumerate(categories)}
    rows, cols = [], []
    for t_idx, tag in enumerate(vocab):
        if isinstance(source, Taxonomy):
            path = source.paths.get(tag)
            labels = (path[0],) if path else ()
        else:
            labels = source.terms.get(tag, ())
        for lab in labels:
            if lab in col:
                rows.append(t_idx)
                cols.append(col[lab])
    data = np.ones(len(rows), dtype=np.int64)
    return sp.csr_matrix((data, (rows, cols)), shape=(len(vocab), len(categories)))


def sound_profiles(table, taxonomy: Taxonomy | Lexicon, categories: Sequence[str] | None = None) -> ProfileTable:
    """Sound profile for every segment with at least one sound-matched tag.

    Fractions are tag counts per top-level category over the number of
    sound-matched tags; segments with none are excluded.
    """
    if categories is None:
        categories = taxonomy.top_levels if isinstance(taxonomy, Taxonomy) else SOUND_CATEGORIES
    cat = _category_matrix(table.vocab, taxonomy, categories)
    counts = np.asarray((table.counts @ cat).todense(), dtype=np.int64)
    hit = (np.asarray(cat.sum(axis=1)).ravel() > 0).astype(np.int64)
    multi = np.asarray(cat.sum(axis=1)).ravel() > 1
    matched = np.asarray(table.counts @ hit).ravel().astype(np.int64)
    multi_seg = np.asarray(table.counts[:, multi].sum(axis=1)).ravel() > 0 if multi.any() else np.zeros(len(matched), bool)
    keep = np.nonzero(matched > 0)[0]
    return ProfileTable([table.segment_ids[i] for i in keep], tuple(categories), counts[keep], matched[keep],
                        True, multi_seg[keep])


def sound_profile(tags: Mapping[str, int], taxonomy: Taxonomy, segment_id: str = "",
                  categories: Sequence[str] | None = None) -> SoundProfile | None:
    """Single-segment sound profile from a normalized tag multiset.

    Returns ``None`` when no tag matches the taxonomy.
    """
    categories = tuple(categories or taxonomy.top_levels)
    counts = [0] * len(categories)
    matched = 0
    for tag, mult in tags.items():
        c = taxonomy.category(tag)
        if c is not None and c in categories:
            counts[categories.index(c)] += mult
            matched += mult
    if matched == 0:
        return None
    return SoundProfile(segment_id, tuple(c / matched for c in counts), matched, tuple(counts))


@dataclass
class ZScores:
    segment_ids: list[str]
    categories: tuple[str, ...]
    z: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray

    def row(self, segment_id: str) -> np.ndarray:
        return self.z[self.segment_ids.index(segment_id)]


def zscores_array(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Column z-scores with population std; zero-variance columns give z = 0."""
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("z-scores need at least 2 segments")
    mu = x.mean(axis=0)
    sigma = x.std(axis=0)
    # a constant column can leave rounding residue in sigma
    degenerate = (np.ptp(x, axis=0) == 0) | (sigma < 1e-12)
    safe = np.where(degenerate, 1.0, sigma)
    z = np.where(degenerate, 0.0, (x - mu) / safe)
    return z, mu, sigma, degenerate


def zscores(profiles: ProfileTable) -> ZScores:
    z, mu, sigma, degenerate = zscores_array(profiles.fractions)
    if degenerate.any():
        warnings.warn(
            "zero variance in categories: " + ", ".join(np.array(profiles.categories)[degenerate]),
            RuntimeWarning, stacklevel=2,
        )
    return ZScores(list(profiles.segment_ids), profiles.categories, z, mu, sigma, degenerate)


@dataclass(frozen=True)
class TypeAverage:
    category: str
    street_type: str
    n: int
    mean: float
    ci_low: float
    ci_high: float


def street_type_average(zs: ZScores, street_types: Mapping[str, str]) -> list[TypeAverage]:
    """Mean z per (category, street type) with a normal-approximation 95% CI.

    Types without segments are omitted; with a single segment the CI is nan.
    """
    types = np.array([street_types[s] for s in zs.segment_ids])
    out = []
    for k, cat in enumerate(zs.categories):
        for t in sorted(set(types.tolist())):
            vals = zs.z[types == t, k]
            n = len(vals)
            mean = float(vals.mean())
            if n > 1:
                half = 1.959963984540054 * float(vals.std(ddof=1)) / math.sqrt(n)
                lo, hi = mean - half, mean + half
            else:
                lo = hi = float("nan")
            out.append(TypeAverage(cat, t, n, mean, lo, hi))
    return out


def dominant_category(zrow, tag_total: int, min_tags: int = DEFAULT_MIN_TAGS,
                      categories: Sequence[str] = SOUND_CATEGORIES) -> str:
    """Category with the highest z; ties go to the earliest category."""
    if tag_total < min_tags:
        return INSUFFICIENT
    return categories[int(np.argmax(np.asarray(zrow, dtype=np.float64)))]


def diversity(fractions) -> float:
    """Shannon index -sum p ln p over the nonzero fractions."""
    p = np.asarray(fractions, dtype=np.float64)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum()) + 0.0


def diversities(profiles: ProfileTable) -> np.ndarray:
    f = profiles.fractions
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(f > 0, f * np.log(np.where(f > 0, f, 1.0)), 0.0)
    return -terms.sum(axis=1) + 0.0


@dataclass
class DiversityReport:
    zero_fraction: float
    histogram: list[tuple[float, float, int]]
    by_tags: list[tuple[int, int, float]]


def diversity_report(values, tag_totals, bins: int = DIVERSITY_BINS,
                     max_value: float = math.log(len(SOUND_CATEGORIES))) -> DiversityReport:
    """Histogram of nonzero diversity and mean diversity per tag-count bucket.

    Zero-diversity segments are reported only through ``zero_fraction``.
    ``by_tags`` rows are (bucket lower edge, segments, mean diversity).
    """
    values = np.asarray(values, dtype=np.float64)
    tag_totals = np.asarray(tag_totals)
    if len(values) == 0:
        return DiversityReport(0.0, [], [])
    nonzero = values > 1e-12
    zero_fraction = float(1.0 - nonzero.mean())
    hist = []
    if nonzero.any():
        counts, edges = np.histogram(values[nonzero], bins=bins, range=(0.0, max_value + 1e-12))
        hist = [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(bins)]
    by_tags = []
    edges = list(TAG_BUCKETS) + [np.inf]
    v, t = values[nonzero], tag_totals[nonzero]
    for lo, hi in zip(edges[:-1], edges[1:]):
        sel = (t >= lo) & (t < hi)
        if sel.any():
            by_tags.append((int(lo), int(sel.sum()), float(v[sel].mean())))
    return DiversityReport(zero_fraction, hist, by_tags)


def emotion_profiles(table, lexicon: Lexicon, emotions: Sequence[str] = EMOTIONS) -> ProfileTable:
    """Emotion fractions over all tags at each segment with at least one tag.

    A tag carrying several emotions increments each of them, so rows need not
    sum to 1; segments without emotion words keep an all-zero row.
    """
    cat = _category_matrix(table.vocab, lexicon, emotions)
    counts = np.asarray((table.counts @ cat).todense(), dtype=np.int64)
    totals = table.tag_totals
    keep = np.nonzero(totals > 0)[0]
    return ProfileTable([table.segment_ids[i] for i in keep], tuple(emotions), counts[keep], totals[keep], False)


def emotion_profile(tags: Mapping[str, int], lexicon: Lexicon, emotions: Sequence[str] = EMOTIONS) -> tuple[float, ...] | None:
    total = sum(tags.values())
    if total == 0:
        return None
    counts = dict.fromkeys(emotions, 0)
    for tag, mult in tags.items():
        for lab in lexicon.terms.get(tag, ()):
            if lab in counts:
                counts[lab] += mult
    return tuple(counts[e] / total for e in emotions)


@dataclass
class CorrelationMatrix:
    rows: tuple[str, ...]
    cols: tuple[str, ...]
    rho: np.ndarray
    n: int
    effective_n: np.ndarray
    p: np.ndarray

    def cells(self):
        for i, r in enumerate(self.rows):
            for j, c in enumerate(self.cols):
                yield r, c, float(self.rho[i, j]), self.n, float(self.effective_n[i, j]), float(self.p[i, j])


def correlate_layers(left: np.ndarray, right: np.ndarray, locations, rows, cols) -> CorrelationMatrix:
    n = len(left)
    if locations is not None and n >= 20:
        rho, neff, p = stats.clifford_matrix(left, right, locations)
    else:
        rho = stats.spearman_matrix(left, right)
        neff = np.full(rho.shape, float(n))
        p = np.vectorize(lambda r: stats.classical_pvalue(r, n))(rho)
    return CorrelationMatrix(tuple(rows), tuple(cols), rho, n, neff, p)


def sound_emotion_correlations(sound_z: ZScores, emotion_z: ZScores, locations: Mapping[str, tuple[float, float]] | None = None,
                               min_segments: int = 10) -> CorrelationMatrix:
    """Spearman rho between every sound z column and emotion z column.

    Uses the segments present in both layers; p-values are spatially
    corrected when ``locations`` (segment id -> projected x, y) are given.
    """
    erow = {s: i for i, s in enumerate(emotion_z.segment_ids)}
    shared = [(i, erow[s]) for i, s in enumerate(sound_z.segment_ids) if s in erow]
    if len(shared) < min_segments:
        raise ValueError(f"need at least {min_segments} shared segments, got {len(shared)}")
    si = np.array([a for a, _ in shared])
    ei = np.array([b for _, b in shared])
    loc = None
    if locations is not None:
        loc = np.array([locations[sound_z.segment_ids[i]] for i in si])
    return correlate_layers(sound_z.z[si], emotion_z.z[ei], loc, sound_z.categories, emotion_z.categories)


def category_correlations(profiles: ProfileTable, locations: Mapping[str, tuple[float, float]] | None = None) -> CorrelationMatrix:
    """Pairwise Spearman rho between category fractions across segments."""
    f = profiles.fractions
    loc = None if locations is None else np.array([locations[s] for s in profiles.segment_ids])
    return correlate_layers(f, f, loc, profiles.categories, profiles.categories)


def dedup_photos(photos) -> list:
    """Collapse photos sharing owner, coordinates and tag set (bulk uploads).

    The first photo of each group is kept, in input order.
    """
    seen = set()
    out = []
    for p in photos:
        key = (p.owner, p.lon, p.lat, frozenset(p.tags))
        if key in seen:
            continue
        seen.add(key)
        out.append(p)
    return out
