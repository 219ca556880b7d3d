"""Soundwalk analysis and sound-to-perception mapping of street segments."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from chattymaps import stats
from chattymaps.constants import (
    DEFAULT_MIN_TAGS,
    INSUFFICIENT,
    PERCEPTIONS,
    SOUND_CATEGORIES,
    SOUNDWALK_SOUNDS,
)

log = logging.getLogger(__name__)

DEFAULT_CATEGORY_MAP = {
    "transport": {"traffic": 1.0},
    "mechanical": {"other": 1.0},
    "human": {"individuals": 1.0},
    "music": {"individuals": 1.0},
    "nature": {"nature": 1.0},
    "indoor": {"other": 1.0},
}


def score_matrices(records) -> tuple[np.ndarray, np.ndarray]:
    """(n x 5 sound scores, n x 8 perception scores)."""
    records = list(records)
    sounds = np.array([r.sound_scores for r in records], dtype=np.float64).reshape(-1, len(SOUNDWALK_SOUNDS))
    percs = np.array([r.perception_scores for r in records], dtype=np.float64).reshape(-1, len(PERCEPTIONS))
    return sounds, percs


@dataclass
class SoundwalkCorrelations:
    sounds: np.ndarray
    perceptions: np.ndarray
    sound_perception: np.ndarray


def soundwalk_cross_correlations(records) -> SoundwalkCorrelations:
    """Spearman matrices among sound scores, among perception scores and
    between the two. Cells involving a constant column are nan."""
    sounds, percs = score_matrices(records)
    if len(sounds) < 10:
        raise ValueError("cross-correlations need at least 10 records")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = SoundwalkCorrelations(
            stats.spearman_matrix(sounds),
            stats.spearman_matrix(percs),
            stats.spearman_matrix(sounds, percs),
        )
    for name, m in (("sound", out.sounds), ("perception", out.perceptions)):
        if np.isnan(m).any():
            log.warning("undefined %s correlations (constant column)", name)
    return out


@dataclass
class ConditionalTable:
    """Fourth-quartile counts and the probabilities derived from them.

    Rows of the 5 x 8 arrays are soundwalk sound categories, columns are
    perceptions.
    """

    q4_sound: np.ndarray
    q4_perception: np.ndarray
    q4_joint: np.ndarray
    q4_sound_star: int
    q4_perception_star: int
    p_sound: np.ndarray
    p_perception: np.ndarray
    p_sound_given_perception: np.ndarray
    p_perception_given_sound: np.ndarray
    marginal_base: str = "records"

    def prob(self, perception: str, sound: str) -> float:
        return float(self.p_perception_given_sound[SOUNDWALK_SOUNDS.index(sound), PERCEPTIONS.index(perception)])

    def ranking(self, sound: str) -> list[str]:
        """Perceptions ordered by p(f|c), highest first (stable on ties)."""
        row = self.p_perception_given_sound[SOUNDWALK_SOUNDS.index(sound)]
        return [PERCEPTIONS[k] for k in np.argsort(-row, kind="stable")]


def bayes_from_counts(q4_sound, q4_perception, q4_joint, sound_star, perception_star):
    """p(c), p(f), p(c|f) and p(f|c) = p(c|f) p(f) / p(c) from Q4 counts.

    Undefined p(c|f) (no record has f in its fourth quartile) gives
    p(f|c) = 0; so does p(c) = 0.
    """
    q4_sound = np.asarray(q4_sound, dtype=np.float64)
    q4_perception = np.asarray(q4_perception, dtype=np.float64)
    q4_joint = np.asarray(q4_joint, dtype=np.float64)
    p_c = q4_sound / sound_star
    p_f = q4_perception / perception_star
    with np.errstate(divide="ignore", invalid="ignore"):
        p_c_f = np.where(q4_perception[None, :] > 0, q4_joint / q4_perception[None, :], np.nan)
        p_f_c = (p_c_f * p_f[None, :]) / p_c[:, None]
    p_f_c = np.where(np.isfinite(p_f_c), p_f_c, 0.0)
    return p_c, p_f, p_c_f, p_f_c


def conditional_probabilities(records, marginal_base: str = "records") -> ConditionalTable:
    """Perception-given-sound probabilities from fourth-quartile co-occurrence.

    Every column is split at its fourth quartile (``stats.quartile_flags``).
    ``marginal_base`` picks the denominators of p(c) and p(f): ``"records"``
    uses the number of tuples for both, which keeps p(f|c) in [0, 1];
    ``"flags"`` uses the total number of fourth-quartile hits over all sound
    (resp. perception) columns.
    """
    sounds, percs = score_matrices(records)
    n = len(sounds)
    if n < 8:
        raise ValueError(f"conditional probabilities need at least 8 records, got {n}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        fs = np.column_stack([stats.quartile_flags(sounds[:, k]) for k in range(sounds.shape[1])])
        fp = np.column_stack([stats.quartile_flags(percs[:, k]) for k in range(percs.shape[1])])
    q4_c = fs.sum(axis=0).astype(np.int64)
    q4_f = fp.sum(axis=0).astype(np.int64)
    joint = (fs.astype(np.int64).T @ fp.astype(np.int64))
    if marginal_base == "records":
        c_star = f_star = n
    elif marginal_base == "flags":
        c_star, f_star = int(q4_c.sum()), int(q4_f.sum())
    else:
        raise ValueError(f"unknown marginal base {marginal_base!r}")
    if (q4_f == 0).any():
        warnings.warn("perception never in its fourth quartile; p(f|c) set to 0", RuntimeWarning, stacklevel=2)
    p_c, p_f, p_c_f, p_f_c = bayes_from_counts(q4_c, q4_f, joint, c_star, f_star)
    return ConditionalTable(q4_c, q4_f, joint, c_star, f_star, p_c, p_f, p_c_f, p_f_c, marginal_base)


@dataclass
class PCAResult:
    components: np.ndarray
    explained_variance: np.ndarray
    explained_ratio: np.ndarray
    mean: np.ndarray
    labels: tuple[str, ...] = PERCEPTIONS

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T


def principal_components_array(x: np.ndarray, labels: Sequence[str] = PERCEPTIONS) -> PCAResult:
    x = np.asarray(x, dtype=np.float64)
    if len(x) < 9:
        raise ValueError("PCA needs at least 9 records")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (len(x) - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T
    for k in range(len(vecs)):
        nz = np.nonzero(np.abs(vecs[k]) > 1e-12)[0]
        if len(nz) and vecs[k, nz[0]] < 0:
            vecs[k] = -vecs[k]
    total = vals.sum()
    if np.count_nonzero(vals > 1e-12 * max(total, 1e-300)) < len(vals):
        warnings.warn("perception scores are rank deficient", RuntimeWarning, stacklevel=2)
    ratio = vals / total if total > 0 else np.zeros_like(vals)
    return PCAResult(vecs, vals, ratio, mean, tuple(labels))


def principal_components(records) -> PCAResult:
    """Eigen-decomposition of the perception score covariance.

    Components are rows sorted by eigenvalue; each is signed so its first
    nonzero loading is positive.
    """
    _, percs = score_matrices(records)
    return principal_components_array(percs)


@dataclass
class CategoryMap:
    """Weights bridging taxonomy categories to soundwalk sound categories."""

    weights: dict[str, dict[str, float]]

    def __post_init__(self):
        for cat, row in self.weights.items():
            if any(w < 0 for w in row.values()):
                raise ValueError(f"negative weight for {cat}")
            unknown = set(row) - set(SOUNDWALK_SOUNDS)
            if unknown:
                raise ValueError(f"unknown soundwalk categories {sorted(unknown)}")
            if abs(sum(row.values()) - 1.0) > 1e-9:
                raise ValueError(f"weights for {cat} sum to {sum(row.values())}, not 1")

    @classmethod
    def default(cls) -> "CategoryMap":
        return cls({k: dict(v) for k, v in DEFAULT_CATEGORY_MAP.items()})

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, float]]) -> "CategoryMap":
        weights: dict[str, dict[str, float]] = {}
        for cat, swc, w in rows:
            weights.setdefault(cat, {})
            weights[cat][swc] = weights[cat].get(swc, 0.0) + w
        return cls(weights)

    def matrix(self, categories: Sequence[str] = SOUND_CATEGORIES) -> np.ndarray:
        m = np.zeros((len(categories), len(SOUNDWALK_SOUNDS)))
        for i, cat in enumerate(categories):
            if cat not in self.weights:
                raise ValueError(f"category map has no row for {cat!r}")
            for swc, w in self.weights[cat].items():
                m[i, SOUNDWALK_SOUNDS.index(swc)] = w
        return m

    def rows(self) -> list[tuple[str, str, float]]:
        return [(c, s, w) for c in self.weights for s, w in self.weights[c].items()]


@dataclass(frozen=True)
class PerceptionRow:
    segment_id: str
    probabilities: tuple[float, ...]
    label: str
    degenerate: bool = False


def perception_probabilities(fractions: np.ndarray, table: ConditionalTable, cmap: CategoryMap,
                             categories: Sequence[str] = SOUND_CATEGORIES) -> np.ndarray:
    """p_j(f) = sum_c p(f|c) p_j(c) for each row of taxonomy-category fractions."""
    p_c = np.atleast_2d(np.asarray(fractions, dtype=np.float64)) @ cmap.matrix(categories)
    return p_c @ table.p_perception_given_sound


def segment_perception(profile, table: ConditionalTable, cmap: CategoryMap | None = None,
                       min_tags: int = DEFAULT_MIN_TAGS,
                       categories: Sequence[str] = SOUND_CATEGORIES) -> PerceptionRow:
    """Expected perception probabilities of one segment and the strongest one.

    Ties in the argmax go to the earliest perception; an all-zero row is
    flagged degenerate.
    """
    cmap = cmap or CategoryMap.default()
    probs = perception_probabilities(profile.fractions, table, cmap, categories)[0]
    degenerate = bool(np.all(probs == 0))
    label = INSUFFICIENT if profile.tag_total < min_tags else PERCEPTIONS[int(np.argmax(probs))]
    return PerceptionRow(profile.segment_id, tuple(probs.tolist()), label, degenerate)


def perception_map(profiles, table: ConditionalTable, cmap: CategoryMap | None = None,
                   min_tags: int = DEFAULT_MIN_TAGS) -> list[PerceptionRow]:
    cmap = cmap or CategoryMap.default()
    probs = perception_probabilities(profiles.fractions, table, cmap, profiles.categories)
    out = []
    for i, sid in enumerate(profiles.segment_ids):
        row = probs[i]
        label = INSUFFICIENT if profiles.tag_total[i] < min_tags else PERCEPTIONS[int(np.argmax(row))]
        out.append(PerceptionRow(sid, tuple(row.tolist()), label, bool(np.all(row == 0))))
    return out
