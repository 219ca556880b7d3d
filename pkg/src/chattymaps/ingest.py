"""Parsers for every external input.

Each parser returns a :class:`ParseResult` holding the valid records and one
:class:`Rejection` per bad line, so that ``len(records) + len(rejections)``
always equals the number of input lines (parsing is total). Only structural
problems that make a whole file unusable raise :class:`IngestError`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from typing import IO, Generic, Iterable, Iterator, TypeVar

from chattymaps.constants import (
    OTHER_STREET_TYPE,
    PERCEPTIONS,
    SOUNDWALK_SOUNDS,
    STREET_TYPES,
    UNCLASSIFIED,
)

log = logging.getLogger(__name__)

T = TypeVar("T")

SCORE_COLUMNS = SOUNDWALK_SOUNDS + PERCEPTIONS
SOUNDWALK_ID_COLUMNS = ("walk_id", "participant_id", "location_id")


class IngestError(ValueError):
    """An input file cannot be used at all."""


@dataclass(frozen=True)
class Rejection:
    line: int
    reason: str

    def __str__(self) -> str:
        return f"line:{self.line} reason:{self.reason}"


@dataclass
class ParseResult(Generic[T]):
    records: list[T] = field(default_factory=list)
    rejections: list[Rejection] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.rejections)

    @property
    def line_count(self) -> int:
        return len(self.records) + len(self.rejections)

    def report(self, stream: IO[str] | None = None) -> None:
        stream = stream or sys.stderr
        for rej in self.rejections:
            print(rej, file=stream)


@dataclass(frozen=True, slots=True)
class PhotoRecord:
    photo_id: str
    lon: float
    lat: float
    tags: tuple[str, ...]
    timestamp: float | None = None
    owner: str | None = None


@dataclass(frozen=True)
class StreetSegment:
    segment_id: str
    polyline: tuple[tuple[float, float], ...]
    street_type: str = OTHER_STREET_TYPE


@dataclass(frozen=True)
class LexiconFile:
    name: str
    entries: tuple[tuple[str, tuple[str, ...]], ...]


@dataclass(frozen=True)
class NoiseRecord:
    segment_id: str
    l_day: float
    l_evening: float
    l_night: float
    ewl: float | None = None


@dataclass(frozen=True)
class SoundwalkRecord:
    walk_id: str
    participant_id: str
    location_id: str
    sound_scores: tuple[int, ...]
    perception_scores: tuple[int, ...]

    def score(self, name: str) -> int:
        if name in SOUNDWALK_SOUNDS:
            return self.sound_scores[SOUNDWALK_SOUNDS.index(name)]
        return self.perception_scores[PERCEPTIONS.index(name)]


def _lines(source) -> Iterator[str]:
    """Yield text lines from a path, an open text stream or a string list."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from source


def _read_text(source) -> str:
    if isinstance(source, (str, os.PathLike)):
        with open(source, encoding="utf-8") as fh:
            return fh.read()
    if hasattr(source, "read"):
        return source.read()
    return "".join(source)


def _coord(value, lo: float, hi: float, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} is not a number")
    value = float(value)
    if not math.isfinite(value) or not lo <= value <= hi:
        raise ValueError(f"{name}={value} outside [{lo:g},{hi:g}]")
    return value


# -- photos -----------------------------------------------------------------


def _photo_from_obj(obj) -> PhotoRecord:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    pid = obj.get("id", obj.get("photo_id"))
    if pid is None or pid == "":
        raise ValueError("missing id")
    lon = _coord(obj.get("lon"), -180.0, 180.0, "lon")
    lat = _coord(obj.get("lat"), -90.0, 90.0, "lat")
    tags = obj.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ValueError("tags must be a list of strings")
    ts = obj.get("timestamp")
    if ts is not None:
        if isinstance(ts, bool) or not isinstance(ts, (int, float)):
            raise ValueError("timestamp is not a number")
        ts = float(ts)
    owner = obj.get("owner")
    return PhotoRecord(
        str(pid),
        lon,
        lat,
        tuple(sys.intern(t) for t in tags),
        ts,
        None if owner is None else str(owner),
    )


def parse_photos(source) -> ParseResult[PhotoRecord]:
    """Parse line-delimited JSON photo records.

    Each line is an object with ``id``, ``lon``, ``lat``, ``tags`` (list of raw
    strings) and optional ``timestamp`` and ``owner``. Duplicate ids keep the
    first occurrence; later ones are reported as rejections.
    """
    result: ParseResult[PhotoRecord] = ParseResult()
    seen: set[str] = set()
    for lineno, line in enumerate(_lines(source), start=1):
        if not line.strip():
            result.rejections.append(Rejection(lineno, "empty line"))
            continue
        try:
            rec = _photo_from_obj(json.loads(line))
        except json.JSONDecodeError as exc:
            result.rejections.append(Rejection(lineno, f"invalid JSON ({exc.msg})"))
            continue
        except ValueError as exc:
            result.rejections.append(Rejection(lineno, str(exc)))
            continue
        if rec.photo_id in seen:
            log.warning("line %d: duplicate photo_id %s, keeping first", lineno, rec.photo_id)
            result.rejections.append(Rejection(lineno, f"duplicate photo_id {rec.photo_id}"))
            continue
        seen.add(rec.photo_id)
        result.records.append(rec)
    return result


def photo_to_json(rec: PhotoRecord) -> str:
    obj = {"id": rec.photo_id, "lon": rec.lon, "lat": rec.lat, "tags": list(rec.tags)}
    if rec.timestamp is not None:
        obj["timestamp"] = rec.timestamp
    if rec.owner is not None:
        obj["owner"] = rec.owner
    return json.dumps(obj, ensure_ascii=False)


def write_photos(records: Iterable[PhotoRecord], stream: IO[str]) -> None:
    for rec in records:
        stream.write(photo_to_json(rec))
        stream.write("\n")


# -- segments ---------------------------------------------------------------


def street_type_of(value) -> str:
    if not isinstance(value, str):
        return OTHER_STREET_TYPE
    value = value.strip().lower()
    return value if value in STREET_TYPES else OTHER_STREET_TYPE


def _segment_from_feature(feat, index: int) -> StreetSegment:
    if not isinstance(feat, dict) or feat.get("type") != "Feature":
        raise ValueError("not a Feature")
    geom = feat.get("geometry") or {}
    if geom.get("type") != "LineString":
        raise ValueError(f"geometry type {geom.get('type')!r} is not LineString")
    props = feat.get("properties") or {}
    sid = props.get("segment_id", props.get("id", feat.get("id")))
    sid = str(index) if sid is None else str(sid)
    coords = geom.get("coordinates")
    if not isinstance(coords, list):
        raise ValueError("coordinates missing")
    vertices: list[tuple[float, float]] = []
    for pt in coords:
        if not isinstance(pt, (list, tuple)) or len(pt) < 2:
            raise ValueError("malformed vertex")
        v = (_coord(pt[0], -180.0, 180.0, "lon"), _coord(pt[1], -90.0, 90.0, "lat"))
        if not vertices or vertices[-1] != v:
            vertices.append(v)
    if len(vertices) < 2:
        raise ValueError("polyline has fewer than 2 distinct vertices")
    stype = street_type_of(props.get("highway", props.get("street_type")))
    return StreetSegment(sid, tuple(vertices), stype)


def parse_segments(source) -> ParseResult[StreetSegment]:
    """Parse a GeoJSON FeatureCollection of LineString street segments.

    Rejections carry the feature index (0-based) in their ``line`` field.
    Duplicate segment ids raise :class:`IngestError`.
    """
    try:
        doc = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise IngestError(f"segments file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
        raise IngestError("segments file is not a FeatureCollection")
    result: ParseResult[StreetSegment] = ParseResult()
    seen: set[str] = set()
    for index, feat in enumerate(doc.get("features") or []):
        try:
            seg = _segment_from_feature(feat, index)
        except ValueError as exc:
            result.rejections.append(Rejection(index, str(exc)))
            continue
        if seg.segment_id in seen:
            raise IngestError(f"duplicate segment_id {seg.segment_id!r} at feature {index}")
        seen.add(seg.segment_id)
        result.records.append(seg)
    return result


def segments_to_geojson(segments: Iterable[StreetSegment]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": {"segment_id": s.segment_id, "highway": s.street_type},
                "geometry": {"type": "LineString", "coordinates": [list(v) for v in s.polyline]},
            }
            for s in segments
        ],
    }


# -- tabular inputs ---------------------------------------------------------


def _csv_rows(source, required: Iterable[str]) -> tuple[list[str], Iterator[tuple[int, dict]]]:
    reader = csv.reader(_lines(source))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration as exc:
        raise IngestError("empty file, header expected") from exc
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"header lacks columns: {', '.join(missing)}")

    def rows():
        for row in reader:
            lineno = reader.line_num
            if not row or all(not c.strip() for c in row):
                yield lineno, None
                continue
            if len(row) != len(header):
                yield lineno, f"expected {len(header)} fields, got {len(row)}"
                continue
            yield lineno, {h: c.strip() for h, c in zip(header, row)}

    return header, rows()


def parse_soundwalk(source) -> ParseResult[SoundwalkRecord]:
    """Parse soundwalk tuples: 3 id columns plus 13 integer scores in [1, 10]."""
    _, rows = _csv_rows(source, SOUNDWALK_ID_COLUMNS + SCORE_COLUMNS)
    result: ParseResult[SoundwalkRecord] = ParseResult()
    for lineno, row in rows:
        if not isinstance(row, dict):
            result.rejections.append(Rejection(lineno, row or "empty line"))
            continue
        try:
            scores = []
            for col in SCORE_COLUMNS:
                try:
                    v = int(row[col])
                except ValueError:
                    raise ValueError(f"{col}={row[col]!r} is not an integer") from None
                if not 1 <= v <= 10:
                    raise ValueError(f"{col}={v} outside [1,10]")
                scores.append(v)
        except ValueError as exc:
            result.rejections.append(Rejection(lineno, str(exc)))
            continue
        result.records.append(
            SoundwalkRecord(
                row["walk_id"],
                row["participant_id"],
                row["location_id"],
                tuple(scores[: len(SOUNDWALK_SOUNDS)]),
                tuple(scores[len(SOUNDWALK_SOUNDS):]),
            )
        )
    return result


def write_soundwalk(records: Iterable[SoundwalkRecord], stream: IO[str]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(SOUNDWALK_ID_COLUMNS + SCORE_COLUMNS)
    for r in records:
        w.writerow([r.walk_id, r.participant_id, r.location_id, *r.sound_scores, *r.perception_scores])


def parse_lexicon(source, name: str) -> ParseResult[tuple[str, tuple[str, ...]]]:
    """Parse ``term,labels`` rows where labels are ``|``-separated.

    A missing or empty labels column marks the term ``unclassified``. Terms
    are lowercased and must be unique; later duplicates are rejected.
    """
    header, rows = _csv_rows(source, ("term",))
    has_labels = "labels" in header
    result: ParseResult = ParseResult()
    seen: set[str] = set()
    for lineno, row in rows:
        if not isinstance(row, dict):
            result.rejections.append(Rejection(lineno, row or "empty line"))
            continue
        term = row["term"].lower()
        if not term:
            result.rejections.append(Rejection(lineno, "empty term"))
            continue
        if term in seen:
            result.rejections.append(Rejection(lineno, f"duplicate term {term!r}"))
            continue
        seen.add(term)
        raw = row["labels"] if has_labels else ""
        labels = tuple(lab.strip().lower() for lab in raw.split("|") if lab.strip()) or (UNCLASSIFIED,)
        result.records.append((term, labels))
    return result


def lexicon_file(source, name: str) -> LexiconFile:
    return LexiconFile(name, tuple(parse_lexicon(source, name).records))


def parse_taxonomy(source) -> ParseResult[tuple[str, tuple[str, ...]]]:
    """Parse ``term,path`` rows with ``/``-separated category paths."""
    _, rows = _csv_rows(source, ("term", "path"))
    result: ParseResult = ParseResult()
    seen: set[str] = set()
    for lineno, row in rows:
        if not isinstance(row, dict):
            result.rejections.append(Rejection(lineno, row or "empty line"))
            continue
        term = row["term"].lower()
        path = tuple(p.strip() for p in row["path"].split("/") if p.strip())
        if not term or not path:
            result.rejections.append(Rejection(lineno, "empty term or path"))
        elif len(path) > 4:
            result.rejections.append(Rejection(lineno, "path deeper than 4 labels"))
        elif term in seen:
            result.rejections.append(Rejection(lineno, f"duplicate term {term!r}"))
        else:
            seen.add(term)
            result.records.append((term, path))
    return result


def _db(value: str, name: str) -> float:
    try:
        v = float(value)
    except ValueError:
        raise ValueError(f"{name}={value!r} is not a number") from None
    if not (math.isfinite(v) and 0.0 <= v <= 130.0):
        raise ValueError(f"{name}={v} outside [0,130] dB")
    return v


def parse_noise(source) -> ParseResult[NoiseRecord]:
    """Parse ``segment_id,l_day,l_evening,l_night[,ewl]`` rows (dB)."""
    header, rows = _csv_rows(source, ("segment_id", "l_day", "l_evening", "l_night"))
    result: ParseResult[NoiseRecord] = ParseResult()
    for lineno, row in rows:
        if not isinstance(row, dict):
            result.rejections.append(Rejection(lineno, row or "empty line"))
            continue
        try:
            ewl = row.get("ewl", "")
            rec = NoiseRecord(
                row["segment_id"],
                _db(row["l_day"], "l_day"),
                _db(row["l_evening"], "l_evening"),
                _db(row["l_night"], "l_night"),
                _db(ewl, "ewl") if ewl else None,
            )
        except ValueError as exc:
            result.rejections.append(Rejection(lineno, str(exc)))
            continue
        result.records.append(rec)
    return result


def parse_category_map(source) -> ParseResult[tuple[str, str, float]]:
    """Parse ``category,soundwalk_category,weight`` rows."""
    _, rows = _csv_rows(source, ("category", "soundwalk_category", "weight"))
    result: ParseResult = ParseResult()
    for lineno, row in rows:
        if not isinstance(row, dict):
            result.rejections.append(Rejection(lineno, row or "empty line"))
            continue
        try:
            w = float(row["weight"])
            if not math.isfinite(w) or w < 0:
                raise ValueError
        except ValueError:
            result.rejections.append(Rejection(lineno, f"bad weight {row['weight']!r}"))
            continue
        result.records.append((row["category"].lower(), row["soundwalk_category"].lower(), w))
    return result


def parse_merge_map(source) -> ParseResult[tuple[str, str, str]]:
    """Parse ``action,source,target`` rows; action is ``merge`` or ``label``."""
    _, rows = _csv_rows(source, ("action", "source", "target"))
    result: ParseResult = ParseResult()
    for lineno, row in rows:
        if not isinstance(row, dict):
            result.rejections.append(Rejection(lineno, row or "empty line"))
            continue
        action = row["action"].lower()
        if action not in ("merge", "label") or not row["source"] or not row["target"]:
            result.rejections.append(Rejection(lineno, f"bad merge-map row {row}"))
            continue
        result.records.append((action, row["source"], row["target"]))
    return result
