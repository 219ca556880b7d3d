"""Tag normalization, lexicon matching and coverage statistics."""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from chattymaps.constants import SOUND_CATEGORIES, UNCLASSIFIED

_SEPARATORS = re.compile(r"[\s\-]+")


def _is_edge_char(ch: str) -> bool:
    return ch.isspace() or unicodedata.category(ch)[0] in "PZ"


def normalize(raw: str) -> str | None:
    """Normalize one raw tag.

    Lowercases, collapses runs of whitespace and hyphens into one space and
    strips surrounding punctuation. Returns ``None`` when nothing is left.

    >>> normalize("Bird-Song ")
    'bird song'
    """
    token = _SEPARATORS.sub(" ", raw.lower())
    start, end = 0, len(token)
    while start < end and _is_edge_char(token[start]):
        start += 1
    while end > start and _is_edge_char(token[end - 1]):
        end -= 1
    token = token[start:end]
    return token or None


def normalize_all(raw_tags: Iterable[str]) -> list[str]:
    out = []
    for raw in raw_tags:
        tok = normalize(raw)
        if tok is not None:
            out.append(tok)
    return out


def filter_by_frequency(term_counts: Mapping[str, int], min_count: int = 100) -> tuple[set[str], float]:
    """Keep terms occurring strictly more than ``min_count`` times.

    Returns the kept term set and the fraction of the total volume they carry.
    """
    total = 0
    kept_volume = 0
    kept = set()
    for term, count in term_counts.items():
        if count < 0:
            raise ValueError(f"negative count for {term!r}")
        total += count
        if count > min_count:
            kept.add(term)
            kept_volume += count
    fraction = kept_volume / total if total else 0.0
    return kept, fraction


@dataclass
class Lexicon:
    """Normalized term -> labels mapping used for exact whole-tag matching."""

    name: str
    terms: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @classmethod
    def from_entries(cls, name: str, entries: Iterable[tuple[str, Iterable[str]]]) -> "Lexicon":
        terms: dict[str, tuple[str, ...]] = {}
        for term, labels in entries:
            tok = normalize(term)
            if tok is None:
                continue
            labels = tuple(labels) or (UNCLASSIFIED,)
            if tok in terms:
                raise ValueError(f"duplicate lexicon term {tok!r} in {name}")
            terms[tok] = labels
        return cls(name, terms)

    def __contains__(self, tag: str) -> bool:
        return tag in self.terms

    def __len__(self) -> int:
        return len(self.terms)

    def labels(self) -> list[str]:
        seen = dict.fromkeys(lab for labs in self.terms.values() for lab in labs)
        return list(seen)


def match(tags: Mapping[str, int] | Iterable[str], lexicon: Lexicon) -> Counter:
    """Count lexicon labels hit by a multiset of normalized tags.

    A tag matching a term with several labels increments each label by the
    tag's multiplicity. No stemming: ``birds`` does not match ``bird``.
    """
    if not isinstance(tags, Mapping):
        tags = Counter(tags)
    out: Counter = Counter()
    for tag, mult in tags.items():
        labels = lexicon.terms.get(tag)
        if labels:
            for lab in labels:
                out[lab] += mult
    return out


@dataclass
class Taxonomy:
    """Hierarchical term classification: term -> category path.

    ``top_levels`` defaults to the six canonical sound categories when every
    path head is one of them, otherwise to the sorted distinct heads.
    """

    paths: dict[str, tuple[str, ...]]
    top_levels: tuple[str, ...] = ()

    def __post_init__(self):
        heads = {p[0] for p in self.paths.values()}
        for term, path in self.paths.items():
            if not 1 <= len(path) <= 4:
                raise ValueError(f"taxonomy path for {term!r} must have 1-4 labels, got {path}")
        if not self.top_levels:
            if heads <= set(SOUND_CATEGORIES):
                self.top_levels = SOUND_CATEGORIES
            else:
                self.top_levels = tuple(sorted(heads))
        missing = heads - set(self.top_levels)
        if missing:
            raise ValueError(f"path heads not among top levels: {sorted(missing)}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Iterable[str]]], top_levels=()) -> "Taxonomy":
        paths = {}
        for term, path in pairs:
            tok = normalize(term)
            if tok is None:
                continue
            if tok in paths:
                raise ValueError(f"duplicate taxonomy term {tok!r}")
            paths[tok] = tuple(path)
        return cls(paths, tuple(top_levels))

    def category(self, term: str) -> str | None:
        path = self.paths.get(term)
        return path[0] if path else None

    def as_lexicon(self, name: str = "taxonomy") -> Lexicon:
        return Lexicon(name, {t: (p[0],) for t, p in self.paths.items()})

    def rows(self) -> list[tuple[str, str]]:
        return [(t, "/".join(self.paths[t])) for t in sorted(self.paths)]


@dataclass(frozen=True)
class CoverageRow:
    city: str
    lexicon: str
    matched_tags: int
    photos_matched: int
    segments_matched: int


def coverage_report(photos, table, lexicons: Iterable[Lexicon], city: str = "city") -> list[CoverageRow]:
    """Per-lexicon counts of matched tags, photos and segments.

    ``photos`` are :class:`~chattymaps.ingest.PhotoRecord` objects (raw tags,
    normalized here); ``table`` is the :class:`~chattymaps.geo.SegmentTagTable`.
    """
    photo_tags = [normalize_all(p.tags) for p in photos]
    rows = []
    for lex in lexicons:
        matched = 0
        photos_hit = 0
        for tags in photo_tags:
            n = sum(1 for t in tags if t in lex.terms)
            matched += n
            photos_hit += n > 0
        per_seg = matched_tags_per_segment(table, lex)
        rows.append(CoverageRow(city, lex.name, matched, photos_hit, int(np.count_nonzero(per_seg))))
    return rows


def matched_tags_per_segment(table, lexicon: Lexicon) -> np.ndarray:
    """Number of tags at each segment (table order) matching any lexicon term."""
    hit = np.fromiter((t in lexicon.terms for t in table.vocab), dtype=bool, count=len(table.vocab))
    return np.asarray(table.counts[:, hit].sum(axis=1)).ravel().astype(np.int64)


def tags_per_segment_histogram(per_segment: np.ndarray) -> list[tuple[int, int]]:
    """(matched-tag count, number of segments) for every count >= 1."""
    values, counts = np.unique(per_segment[per_segment > 0], return_counts=True)
    return [(int(v), int(c)) for v, c in zip(values, counts)]
