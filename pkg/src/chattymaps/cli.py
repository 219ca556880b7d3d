"""Command-line pipeline.

Every subcommand reads its inputs from a key = value manifest (paths relative
to the manifest file), reads earlier stage artifacts from the output directory
and writes its own CSV/GeoJSON artifacts plus a copy of the resolved settings.

Exit codes: 0 success, 1 input error, 2 missing upstream artifact,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from chattymaps import __version__, geo, ingest, layers, lexicon, perception, taxonomy, validation
from chattymaps.constants import (
    DEFAULT_BUFFER_M,
    DEFAULT_MIN_COUNT,
    DEFAULT_MIN_TAGS,
    DEFAULT_SIZE_THRESHOLD,
    PERCEPTIONS,
    SOUND_CATEGORIES,
    SOUNDWALK_SOUNDS,
)

log = logging.getLogger("chattymaps")

SUBCOMMANDS = (
    "ingest-check",
    "assign",
    "taxonomy",
    "sound-map",
    "emotion-map",
    "perception-map",
    "diversity-map",
    "validate-noise",
    "report",
)
INPUT_KEYS = (
    "photos",
    "segments",
    "sound_lexicon",
    "emotion_lexicon",
    "taxonomy",
    "merge_map",
    "noise",
    "soundwalk",
    "category_map",
)
SETTING_KEYS = (
    "out_dir",
    "buffer_m",
    "ref",
    "seed",
    "size_threshold",
    "min_tags",
    "min_count",
    "threads",
    "dedup_photos",
    "marginal_base",
    "city",
)
EXIT_OK, EXIT_INPUT, EXIT_UPSTREAM, EXIT_INVARIANT = 0, 1, 2, 3

# artifact -> subcommand that writes it
PRODUCER = {
    "segment_tags.csv": "assign",
    "segment_photos.csv": "assign",
    "taxonomy.csv": "taxonomy",
    "sound_profiles.csv": "sound-map",
}


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def fmt(value) -> str:
    """6 significant digits for floats; ints and strings verbatim."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return f"{v:.6g}"
    return str(value)


def _num(value):
    """A JSON-ready number rounded to 6 significant digits (nan -> null)."""
    v = float(value)
    return None if math.isnan(v) else float(f"{v:.6g}")


# -- manifest ------------------------------------------------------------------


@dataclass
class RunManifest:
    inputs: dict[str, str] = field(default_factory=dict)
    base_dir: Path = Path(".")
    out_dir: str = "out"
    buffer_m: float = DEFAULT_BUFFER_M
    ref: tuple[float, float] | None = None
    seed: int = 0
    size_threshold: int = DEFAULT_SIZE_THRESHOLD
    min_tags: int = DEFAULT_MIN_TAGS
    min_count: int = DEFAULT_MIN_COUNT
    threads: int = 1
    dedup_photos: bool = False
    marginal_base: str = "records"
    city: str = "city"

    @property
    def out(self) -> Path:
        return (self.base_dir / self.out_dir).resolve()

    def input_path(self, key: str, required: bool = True) -> Path | None:
        if key not in self.inputs:
            if required:
                raise StageError(EXIT_INPUT, f"manifest has no {key!r} input")
            return None
        path = self.base_dir / self.inputs[key]
        if not path.is_file():
            raise StageError(EXIT_INPUT, f"{key} input not found: {path}")
        return path

    def lines(self, subcommand: str) -> list[str]:
        out = [f"tool_version = {__version__}", f"subcommand = {subcommand}"]
        for key in INPUT_KEYS:
            if key in self.inputs:
                out.append(f"{key} = {self.inputs[key]}")
        out += [
            f"out_dir = {self.out_dir}",
            f"buffer_m = {fmt(self.buffer_m)}",
            f"ref = {'auto' if self.ref is None else ','.join(repr(v) for v in self.ref)}",
            f"seed = {self.seed}",
            f"size_threshold = {self.size_threshold}",
            f"min_tags = {self.min_tags}",
            f"min_count = {self.min_count}",
            f"threads = {self.threads}",
            f"dedup_photos = {str(self.dedup_photos).lower()}",
            f"marginal_base = {self.marginal_base}",
            f"city = {self.city}",
        ]
        return out


def _parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _parse_ref(value: str) -> tuple[float, float] | None:
    if value.strip().lower() in ("", "auto"):
        return None
    parts = [float(p) for p in value.split(",")]
    if len(parts) != 2 or not (-180 <= parts[0] <= 180 and -90 <= parts[1] <= 90):
        raise ValueError(f"ref must be lon,lat: {value!r}")
    return parts[0], parts[1]


_CONVERT = {
    "buffer_m": float,
    "ref": _parse_ref,
    "seed": int,
    "size_threshold": int,
    "min_tags": int,
    "min_count": int,
    "threads": int,
    "dedup_photos": _parse_bool,
    "marginal_base": str,
    "city": str,
}


def _apply(m: RunManifest, key: str, value: str) -> None:
    if key in INPUT_KEYS:
        m.inputs[key] = value
    elif key == "out_dir":
        m.out_dir = value
    elif key in _CONVERT:
        try:
            setattr(m, key, _CONVERT[key](value))
        except ValueError as exc:
            raise StageError(EXIT_INPUT, f"bad value for {key}: {exc}") from None
    else:
        raise StageError(EXIT_INPUT, f"unknown manifest key {key!r}")


def load_manifest(path: str | None) -> RunManifest:
    m = RunManifest()
    if path is None:
        return m
    p = Path(path)
    if not p.is_file():
        raise StageError(EXIT_INPUT, f"manifest not found: {p}")
    m.base_dir = p.resolve().parent
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StageError(EXIT_INPUT, f"manifest line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        _apply(m, key, value)
    return m


def _validate(m: RunManifest) -> None:
    if not m.buffer_m > 0:
        raise StageError(EXIT_INPUT, "buffer_m must be positive")
    if m.size_threshold < 1 or m.min_tags < 0 or m.min_count < 0 or m.threads < 1:
        raise StageError(EXIT_INPUT, "size_threshold, threads >= 1 and min_tags, min_count >= 0 required")
    if m.marginal_base not in ("records", "flags"):
        raise StageError(EXIT_INPUT, "marginal_base must be 'records' or 'flags'")


# -- artifact io -------------------------------------------------------------


class Run:
    def __init__(self, manifest: RunManifest, subcommand: str):
        self.m = manifest
        self.subcommand = subcommand
        self.out = manifest.out
        self._segments = None
        self._ref = None

    def require(self, name: str) -> Path:
        path = self.out / name
        if not path.is_file():
            producer = PRODUCER.get(name, "an earlier stage")
            raise StageError(EXIT_UPSTREAM, f"missing artifact {name}: run `{producer}` first")
        return path

    def write_csv(self, name: str, header, rows) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / name, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])

    def write_geojson(self, name: str, features) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / name, "w", encoding="utf-8") as fh:
            fh.write('{"type": "FeatureCollection", "features": [\n')
            for k, feat in enumerate(features):
                if k:
                    fh.write(",\n")
                fh.write(json.dumps(feat, ensure_ascii=False, allow_nan=False))
            fh.write("\n]}\n")

    def write_manifest(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        text = "\n".join(self.m.lines(self.subcommand)) + "\n"
        (self.out / f"manifest.{self.subcommand}.txt").write_text(text, encoding="utf-8")

    def read_csv(self, name: str) -> list[dict]:
        with open(self.require(name), newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    # inputs

    def segments(self) -> list[ingest.StreetSegment]:
        if self._segments is None:
            res = _parse(ingest.parse_segments, self.m.input_path("segments"), "segments")
            if not res.records:
                raise StageError(EXIT_INPUT, "no valid street segments")
            self._segments = res.records
        return self._segments

    def ref(self) -> tuple[float, float]:
        if self._ref is None:
            self._ref = self.m.ref or geo.reference_point(self.segments())
        return self._ref

    def locations(self) -> dict[str, tuple[float, float]]:
        segs = self.segments()
        cent = geo.segment_centroids(segs, self.ref())
        return {s.segment_id: (float(c[0]), float(c[1])) for s, c in zip(segs, cent)}

    def photos(self) -> list[ingest.PhotoRecord]:
        res = _parse(ingest.parse_photos, self.m.input_path("photos"), "photos")
        photos = res.records
        if self.m.dedup_photos:
            before = len(photos)
            photos = layers.dedup_photos(photos)
            log.info("dedup: %d -> %d photos", before, len(photos))
        return photos

    def lexicon(self, key: str) -> lexicon.Lexicon:
        res = _parse(lambda p: ingest.parse_lexicon(p, key), self.m.input_path(key), key)
        return lexicon.Lexicon.from_entries(key, res.records)

    def taxonomy_input(self) -> lexicon.Taxonomy | None:
        path = self.m.input_path("taxonomy", required=False)
        if path is None:
            return None
        res = _parse(ingest.parse_taxonomy, path, "taxonomy")
        return _taxonomy(res.records)

    # artifacts

    def tag_table(self) -> geo.SegmentTagTable:
        seg_rows = self.read_csv("segment_photos.csv")
        path = self.require("segment_tags.csv")
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            rows = [(s, t, int(n)) for s, t, n in reader]
        ids = [r["segment_id"] for r in seg_rows]
        counts = {r["segment_id"]: int(r["photo_count"]) for r in seg_rows}
        return geo.SegmentTagTable.from_rows(ids, rows, counts)

    def profiles(self) -> layers.ProfileTable:
        rows = self.read_csv("sound_profiles.csv")
        if not rows:
            raise StageError(EXIT_INVARIANT, "sound_profiles.csv is empty")
        cats = tuple(k[2:] for k in rows[0] if k.startswith("n_"))
        counts = np.array([[int(r["n_" + c]) for c in cats] for r in rows], dtype=np.int64)
        totals = np.array([int(r["tag_total"]) for r in rows], dtype=np.int64)
        return layers.ProfileTable([r["segment_id"] for r in rows], cats, counts, totals)


def _parse(parser, path, name):
    try:
        res = parser(path)
    except ingest.IngestError as exc:
        raise StageError(EXIT_INPUT, f"{name}: {exc}") from None
    for rej in res.rejections:
        print(f"{name} {rej}", file=sys.stderr)
    return res


def _taxonomy(pairs) -> lexicon.Taxonomy:
    try:
        return lexicon.Taxonomy.from_pairs(pairs)
    except ValueError as exc:
        raise StageError(EXIT_INPUT, f"taxonomy: {exc}") from None


def _feature(seg: ingest.StreetSegment, props: dict) -> dict:
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {"type": "LineString", "coordinates": [list(v) for v in seg.polyline]},
    }


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise StageError(EXIT_INVARIANT, message)


# -- stages ------------------------------------------------------------------


def cmd_ingest_check(run: Run) -> None:
    parsers = {
        "photos": ingest.parse_photos,
        "segments": ingest.parse_segments,
        "sound_lexicon": lambda p: ingest.parse_lexicon(p, "sound_lexicon"),
        "emotion_lexicon": lambda p: ingest.parse_lexicon(p, "emotion_lexicon"),
        "taxonomy": ingest.parse_taxonomy,
        "merge_map": ingest.parse_merge_map,
        "noise": ingest.parse_noise,
        "soundwalk": ingest.parse_soundwalk,
        "category_map": ingest.parse_category_map,
    }
    rows = []
    for key in INPUT_KEYS:
        path = run.m.input_path(key, required=False)
        if path is None:
            continue
        res = _parse(parsers[key], path, key)
        rows.append((key, run.m.inputs[key], len(res.records), len(res.rejections)))
    if not rows:
        raise StageError(EXIT_INPUT, "manifest names no inputs")
    run.write_csv("ingest_report.csv", ("input", "path", "records", "rejections"), rows)


def cmd_assign(run: Run) -> None:
    segments = run.segments()
    photos = run.photos()
    ref = run.ref()
    try:
        buffered = geo.buffer_segments(segments, ref, run.m.buffer_m)
    except geo.GeometryError as exc:
        raise StageError(EXIT_INPUT, str(exc)) from None
    index = geo.build_index(buffered)
    table = geo.assign_photos(photos, index, ref)
    _check(int(table.counts.sum()) >= 0 and len(table.segment_ids) == len(segments), "tag table shape")
    run.write_csv("segment_tags.csv", ("segment_id", "tag", "count"), table.rows())
    order = sorted(range(len(segments)), key=lambda i: segments[i].segment_id)
    totals = table.tag_totals
    run.write_csv(
        "segment_photos.csv",
        ("segment_id", "street_type", "photo_count", "tag_count"),
        ((segments[i].segment_id, segments[i].street_type, table.photo_counts[i], totals[i]) for i in order),
    )
    assigned = len(photos) - table.unassigned
    run.write_csv(
        "assign_summary.csv",
        ("metric", "value"),
        [
            ("photos", len(photos)),
            ("photos_assigned", assigned),
            ("photos_unassigned", table.unassigned),
            ("segments", len(segments)),
            ("segments_with_photos", int(np.count_nonzero(table.photo_counts))),
            ("ref_lon", ref[0]),
            ("ref_lat", ref[1]),
            ("buffer_m", run.m.buffer_m),
        ],
    )


def cmd_taxonomy(run: Run) -> None:
    given = run.taxonomy_input()
    lex_path = run.m.input_path("sound_lexicon", required=given is None)
    partition = taxonomy.Partition({})
    graph = taxonomy.CooccurrenceGraph([])
    if lex_path is not None:
        sound = run.lexicon("sound_lexicon")
        photos = run.photos()
        freq: dict[str, int] = {}
        for p in photos:
            for t in lexicon.normalize_all(p.tags):
                if t in sound.terms:
                    freq[t] = freq.get(t, 0) + 1
        kept, volume = lexicon.filter_by_frequency(freq, run.m.min_count)
        log.info("%d sound words kept (%.3f of volume)", len(kept), volume)
        graph = taxonomy.build_cooccurrence(photos, kept)
        if graph.edges:
            flat = taxonomy.infomap_partition(graph, seed=run.m.seed)
            partition = taxonomy.louvain_refine(graph, flat, run.m.size_threshold, seed=run.m.seed)
    if given is None:
        if not graph.edges:
            raise StageError(EXIT_INPUT, "no sound-word co-occurrences to cluster and no taxonomy input")
        merge_path = run.m.input_path("merge_map", required=False)
        merge_rows = _parse(ingest.parse_merge_map, merge_path, "merge_map").records if merge_path else []
        try:
            given = taxonomy.apply_merge(partition, merge_rows)
        except ValueError as exc:
            raise StageError(EXIT_INPUT, f"merge_map: {exc}") from None
    run.write_csv("cooccurrence.csv", ("word1", "word2", "weight"), graph.rows())
    run.write_csv("partition.csv", ("word", "community_path"), partition.rows())
    summary = [("words", len(graph.nodes)), ("edges", len(graph.edges)), ("communities", len(partition))]
    if graph.edges:
        summary += [
            ("map_equation_bits", taxonomy.map_equation(graph, {w: p[0] for w, p in partition.paths.items()})),
            ("modularity", taxonomy.modularity(graph, {w: p[0] for w, p in partition.paths.items()})),
        ]
    run.write_csv("partition_summary.csv", ("metric", "value"), summary)
    run.write_csv("taxonomy.csv", ("term", "path"), given.rows())


def _sound_source(run: Run):
    path = run.out / "taxonomy.csv"
    if path.is_file():
        return _taxonomy(_parse(ingest.parse_taxonomy, path, "taxonomy.csv").records)
    given = run.taxonomy_input()
    if given is not None:
        return given
    if "sound_lexicon" in run.m.inputs:
        return run.lexicon("sound_lexicon")
    raise StageError(EXIT_UPSTREAM, "no taxonomy: run `taxonomy` first or name a taxonomy or sound_lexicon input")


def _zscores(profiles: layers.ProfileTable) -> layers.ZScores:
    if len(profiles) < 2:
        raise StageError(EXIT_INPUT, "fewer than 2 segments carry sound tags")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        zs = layers.zscores(profiles)
    for cat in np.array(zs.categories)[zs.degenerate]:
        log.warning("category %s has zero variance; z set to 0", cat)
    return zs


def cmd_sound_map(run: Run) -> None:
    table = run.tag_table()
    source = _sound_source(run)
    if isinstance(source, lexicon.Lexicon):
        labels = set(source.labels())
        cats = SOUND_CATEGORIES if labels <= set(SOUND_CATEGORIES) else tuple(sorted(labels))
        profiles = layers.sound_profiles(table, source, cats)
    else:
        profiles = layers.sound_profiles(table, source)
    if len(profiles) == 0:
        raise StageError(EXIT_INPUT, "no segment carries a sound tag")
    sums = profiles.fractions.sum(axis=1)
    _check(bool(np.all(np.abs(sums - 1.0) <= 1e-9)), "sound fractions do not sum to 1")
    zs = _zscores(profiles)
    _check(bool(np.all(np.abs(zs.z.mean(axis=0)) <= 1e-9)), "z-scores are not centred")
    cats = profiles.categories
    order = np.argsort(np.array(profiles.segment_ids), kind="stable")
    fr = profiles.fractions
    dominant = [layers.dominant_category(zs.z[i], int(profiles.tag_total[i]), run.m.min_tags, cats)
                for i in range(len(profiles))]
    run.write_csv(
        "sound_profiles.csv",
        ("segment_id",) + cats + ("tag_total",) + tuple("n_" + c for c in cats) + ("multi_label",),
        ((profiles.segment_ids[i], *fr[i], profiles.tag_total[i], *profiles.counts[i], profiles.multi_label[i])
         for i in order),
    )
    run.write_csv(
        "zscores.csv",
        ("segment_id",) + cats + ("dominant",),
        ((profiles.segment_ids[i], *zs.z[i], dominant[i]) for i in order),
    )
    div = layers.diversities(profiles)
    segs = {s.segment_id: s for s in run.segments()}
    types = {s: segs[s].street_type for s in profiles.segment_ids}
    run.write_csv(
        "type_averages.csv",
        ("category", "street_type", "n", "mean_z", "ci_low", "ci_high"),
        ((t.category, t.street_type, t.n, t.mean, t.ci_low, t.ci_high) for t in layers.street_type_average(zs, types)),
    )
    locs = run.locations()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        cm = layers.category_correlations(profiles, locs)
    run.write_csv("category_correlations.csv", ("row", "col", "rho", "n", "n_eff", "p"), cm.cells())
    run.write_geojson(
        "sound_map.geojson",
        (
            _feature(segs[profiles.segment_ids[i]], {
                "segment_id": profiles.segment_ids[i],
                "street_type": types[profiles.segment_ids[i]],
                "tag_total": int(profiles.tag_total[i]),
                "dominant": dominant[i],
                "diversity": _num(div[i]),
                **{c: _num(fr[i, k]) for k, c in enumerate(cats)},
                **{"z_" + c: _num(zs.z[i, k]) for k, c in enumerate(cats)},
            })
            for i in order
        ),
    )


def cmd_emotion_map(run: Run) -> None:
    table = run.tag_table()
    sound = run.profiles()
    emo_lex = run.lexicon("emotion_lexicon")
    emo = layers.emotion_profiles(table, emo_lex)
    if len(emo) < 2:
        raise StageError(EXIT_INPUT, "fewer than 2 segments carry tags")
    ezs = _zscores(emo)
    szs = _zscores(sound)
    order = np.argsort(np.array(emo.segment_ids), kind="stable")
    run.write_csv(
        "emotion_profiles.csv",
        ("segment_id", "tag_total") + emo.categories + tuple("z_" + e for e in emo.categories),
        ((emo.segment_ids[i], emo.tag_total[i], *emo.fractions[i], *ezs.z[i]) for i in order),
    )
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cm = layers.sound_emotion_correlations(szs, ezs, run.locations())
        cells = list(cm.cells())
    except ValueError as exc:
        log.warning("sound-emotion correlations skipped: %s", exc)
        cells = []
    run.write_csv("sound_emotion_correlations.csv", ("row", "col", "rho", "n", "n_eff", "p"), cells)


def cmd_diversity_map(run: Run) -> None:
    profiles = run.profiles()
    div = layers.diversities(profiles)
    top = math.log(len(profiles.categories))
    _check(bool(np.all((div >= -1e-12) & (div <= top + 1e-9))), "diversity outside [0, ln k]")
    order = np.argsort(np.array(profiles.segment_ids), kind="stable")
    run.write_csv("diversity.csv", ("segment_id", "tag_total", "diversity"),
                  ((profiles.segment_ids[i], profiles.tag_total[i], div[i]) for i in order))
    rep = layers.diversity_report(div, profiles.tag_total, max_value=top)
    run.write_csv("diversity_histogram.csv", ("low", "high", "segments"), rep.histogram)
    run.write_csv("diversity_by_tags.csv", ("min_tags", "segments", "mean_diversity"), rep.by_tags)
    run.write_csv("diversity_summary.csv", ("metric", "value"),
                  [("segments", len(div)), ("zero_fraction", rep.zero_fraction),
                   ("mean_diversity", float(div.mean()))])
    segs = {s.segment_id: s for s in run.segments()}
    run.write_geojson(
        "diversity_map.geojson",
        (
            _feature(segs[profiles.segment_ids[i]], {
                "segment_id": profiles.segment_ids[i],
                "tag_total": int(profiles.tag_total[i]),
                "diversity": _num(div[i]),
            })
            for i in order
        ),
    )


def _category_map(run: Run, categories) -> perception.CategoryMap:
    path = run.m.input_path("category_map", required=False)
    try:
        if path is None:
            cmap = perception.CategoryMap.default()
        else:
            cmap = perception.CategoryMap.from_rows(_parse(ingest.parse_category_map, path, "category_map").records)
        cmap.matrix(categories)
    except ValueError as exc:
        raise StageError(EXIT_INPUT, f"category_map: {exc}") from None
    return cmap


def cmd_perception_map(run: Run) -> None:
    run.require("taxonomy.csv")
    profiles = run.profiles()
    records = _parse(ingest.parse_soundwalk, run.m.input_path("soundwalk"), "soundwalk").records
    cmap = _category_map(run, profiles.categories)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            table = perception.conditional_probabilities(records, run.m.marginal_base)
            corr = perception.soundwalk_cross_correlations(records)
            pca = perception.principal_components(records)
    except ValueError as exc:
        raise StageError(EXIT_INPUT, f"soundwalk: {exc}") from None
    rows = []
    for a, c in enumerate(SOUNDWALK_SOUNDS):
        for b, f in enumerate(PERCEPTIONS):
            rows.append((c, f, table.q4_sound[a], table.q4_perception[b], table.q4_joint[a, b],
                         table.p_sound[a], table.p_perception[b],
                         table.p_sound_given_perception[a, b], table.p_perception_given_sound[a, b]))
    run.write_csv(
        "perception_table.csv",
        ("sound", "perception", "q4_sound", "q4_perception", "q4_joint", "p_sound", "p_perception",
         "p_sound_given_perception", "p_perception_given_sound"),
        rows,
    )
    out = perception.perception_map(profiles, table, cmap, run.m.min_tags)
    for r in out:
        if r.degenerate:
            log.warning("segment %s: all perception probabilities are 0", r.segment_id)
    out.sort(key=lambda r: r.segment_id)
    run.write_csv("perception_segments.csv", ("segment_id", "tag_total") + PERCEPTIONS + ("argmax",),
                  ((r.segment_id, profiles.tag_total[profiles.index_of([r.segment_id])[0]], *r.probabilities, r.label)
                   for r in out))
    cells = []
    for name, mat, rl, cl in (("sound", corr.sounds, SOUNDWALK_SOUNDS, SOUNDWALK_SOUNDS),
                              ("perception", corr.perceptions, PERCEPTIONS, PERCEPTIONS),
                              ("sound_perception", corr.sound_perception, SOUNDWALK_SOUNDS, PERCEPTIONS)):
        cells += [(name, r, c, mat[i, j]) for i, r in enumerate(rl) for j, c in enumerate(cl)]
    run.write_csv("soundwalk_correlations.csv", ("matrix", "row", "col", "rho"), cells)
    run.write_csv(
        "perception_pca.csv",
        ("component", "explained_variance", "explained_ratio") + PERCEPTIONS,
        ((k + 1, pca.explained_variance[k], pca.explained_ratio[k], *pca.components[k])
         for k in range(len(pca.components))),
    )
    segs = {s.segment_id: s for s in run.segments()}
    run.write_geojson(
        "perception_map.geojson",
        (
            _feature(segs[r.segment_id], {
                "segment_id": r.segment_id,
                **{"p_" + f: _num(p) for f, p in zip(PERCEPTIONS, r.probabilities)},
                "argmax": r.label,
            })
            for r in out
        ),
    )


def cmd_validate_noise(run: Run) -> None:
    profiles = run.profiles()
    records = _parse(ingest.parse_noise, run.m.input_path("noise"), "noise").records
    locs = run.locations()
    header = ("N", "category", "rho", "n", "n_eff", "p")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sweep = validation.noise_correlation_sweep(profiles, validation.noise_levels(records), locs)
        periods = []
        for measure in ("l_day", "l_evening", "l_night"):
            for p in validation.noise_correlation_sweep(profiles, validation.noise_levels(records, measure), locs):
                periods.append((measure, p.min_tags, p.category, p.rho, p.n, p.effective_n, p.p))
    run.write_csv("noise_correlation.csv", header,
                  ((p.min_tags, p.category, p.rho, p.n, p.effective_n, p.p) for p in sweep))
    run.write_csv("noise_correlation_periods.csv", ("measure",) + header, periods)


CORRELATION_ARTIFACTS = (
    ("category", "category_correlations.csv"),
    ("sound_emotion", "sound_emotion_correlations.csv"),
    ("soundwalk", "soundwalk_correlations.csv"),
    ("noise", "noise_correlation.csv"),
)


def cmd_report(run: Run) -> None:
    table = run.tag_table()
    photos = run.photos()
    lexicons = []
    for key in ("sound_lexicon", "emotion_lexicon"):
        if key in run.m.inputs:
            lexicons.append(run.lexicon(key))
    tax = run.out / "taxonomy.csv"
    if tax.is_file():
        lexicons.append(_taxonomy(_parse(ingest.parse_taxonomy, tax, "taxonomy.csv").records).as_lexicon("taxonomy"))
    if not lexicons:
        raise StageError(EXIT_INPUT, "report needs a sound_lexicon, emotion_lexicon or taxonomy")
    cov = lexicon.coverage_report(photos, table, lexicons, city=run.m.city)
    run.write_csv("coverage.csv", ("city", "lexicon", "matched_tags", "photos_matched", "segments_matched"),
                  ((r.city, r.lexicon, r.matched_tags, r.photos_matched, r.segments_matched) for r in cov))
    hist = []
    for lex in lexicons:
        per_seg = lexicon.matched_tags_per_segment(table, lex)
        hist += [(lex.name, n, c) for n, c in lexicon.tags_per_segment_histogram(per_seg)]
    run.write_csv("tag_histogram.csv", ("lexicon", "matched_tags", "segments"), hist)
    rows = []
    for name, fname in CORRELATION_ARTIFACTS:
        path = run.out / fname
        if not path.is_file():
            continue
        with open(path, newline="", encoding="utf-8") as fh:
            for r in csv.DictReader(fh):
                if name == "noise":
                    rows.append((name, f"ewl@{r['N']}", r["category"], r["rho"], r["n"], r["n_eff"], r["p"]))
                elif name == "soundwalk":
                    rows.append((f"soundwalk_{r['matrix']}", r["row"], r["col"], r["rho"], "", "", ""))
                else:
                    rows.append((name, r["row"], r["col"], r["rho"], r["n"], r["n_eff"], r["p"]))
    run.write_csv("correlations.csv", ("matrix", "row", "col", "rho", "n", "n_eff", "p"), rows)


COMMANDS = {
    "ingest-check": cmd_ingest_check,
    "assign": cmd_assign,
    "taxonomy": cmd_taxonomy,
    "sound-map": cmd_sound_map,
    "emotion-map": cmd_emotion_map,
    "perception-map": cmd_perception_map,
    "diversity-map": cmd_diversity_map,
    "validate-noise": cmd_validate_noise,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="chattymaps",
        description="Street-level sound, emotion, diversity and perception maps from geo-tagged photo tags.",
    )
    ap.add_argument("--version", action="version", version=f"chattymaps {__version__}")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--manifest", help="key = value run manifest; paths are relative to it")
    ap.add_argument("--out-dir", help="artifact directory (overrides out_dir)")
    for key in INPUT_KEYS:
        ap.add_argument("--" + key.replace("_", "-"), dest=key, metavar="PATH", help=f"{key} input file")
    ap.add_argument("--buffer-m", type=float, help=f"buffer half-width in metres (default {DEFAULT_BUFFER_M})")
    ap.add_argument("--ref", help="projection reference lon,lat (default: mean segment vertex)")
    ap.add_argument("--seed", type=int, help="clustering seed (env CHATTYMAPS_SEED also overrides the manifest)")
    ap.add_argument("--size-threshold", type=int, help=f"refine communities above this size (default {DEFAULT_SIZE_THRESHOLD})")
    ap.add_argument("--min-tags", type=int, help=f"sound tags needed for a map label (default {DEFAULT_MIN_TAGS})")
    ap.add_argument("--min-count", type=int, help=f"word frequency cut for the taxonomy graph (default {DEFAULT_MIN_COUNT})")
    ap.add_argument("--threads", type=int, help="worker cap (the pipeline itself runs on one worker)")
    ap.add_argument("--dedup-photos", action="store_const", const="true", help="collapse bulk-upload duplicates")
    ap.add_argument("--marginal-base", choices=("records", "flags"), help="denominator of p(c), p(f)")
    ap.add_argument("--city", help="city label for the coverage report (default: city)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def resolve_manifest(args) -> RunManifest:
    m = load_manifest(args.manifest)
    env_seed = os.environ.get("CHATTYMAPS_SEED")
    if env_seed is not None:
        _apply(m, "seed", env_seed)
    for key in INPUT_KEYS:
        value = getattr(args, key)
        if value is not None:
            m.inputs[key] = str(Path(value).resolve())
    if args.out_dir is not None:
        m.out_dir = str(Path(args.out_dir).resolve())
    for key in SETTING_KEYS:
        if key == "out_dir":
            continue
        value = getattr(args, key, None)
        if value is not None:
            _apply(m, key, str(value))
    _validate(m)
    return m


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        m = resolve_manifest(args)
        run = Run(m, args.subcommand)
        COMMANDS[args.subcommand](run)
        run.write_manifest()
    except StageError as exc:
        print(f"chattymaps {args.subcommand}: error: {exc}", file=sys.stderr)
        return exc.code
    except (ingest.IngestError, geo.GeometryError, OSError) as exc:
        print(f"chattymaps {args.subcommand}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
