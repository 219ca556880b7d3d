"""Synthetic fixtures: a grid city with planted sound regimes, planted-partition
graphs and soundwalk tables.

Run ``python -m chattymaps.synthetic OUT_DIR`` to write a complete input set
(photos, segments, noise, soundwalk, toy lexicons and a manifest) for the CLI.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import shutil
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from chattymaps import geo
from chattymaps.constants import SOUND_CATEGORIES
from chattymaps.ingest import (
    NoiseRecord,
    PhotoRecord,
    SoundwalkRecord,
    StreetSegment,
    lexicon_file,
    parse_taxonomy,
    segments_to_geojson,
    write_photos,
    write_soundwalk,
)
from chattymaps.lexicon import Lexicon, Taxonomy
from chattymaps.taxonomy import CooccurrenceGraph

ORIGIN = (2.1734, 41.3851)
FILLER_TAGS = ("city", "street", "travel", "architecture", "photo", "urban", "night", "people")
EMOTION_TAGS = ("happy", "love", "party", "crash", "storm", "garden", "protest", "smoke")

# street type drawn for a segment, by planted regime
REGIME_STREET_TYPES = {
    "transport": ("primary", "secondary", "tertiary"),
    "mechanical": ("construction", "tertiary"),
    "human": ("pedestrian", "footway"),
    "music": ("pedestrian", "residential"),
    "nature": ("track", "footway"),
    "indoor": ("residential",),
}


def data_path(name: str) -> Path:
    return Path(str(resources.files("chattymaps") / "data" / name))


def toy_sound_lexicon() -> Lexicon:
    return Lexicon.from_entries("sound", lexicon_file(data_path("toy_sound_lexicon.csv"), "sound").entries)


def toy_emotion_lexicon() -> Lexicon:
    return Lexicon.from_entries("emotion", lexicon_file(data_path("toy_emotion_lexicon.csv"), "emotion").entries)


def toy_taxonomy() -> Taxonomy:
    return Taxonomy.from_pairs(parse_taxonomy(data_path("toy_taxonomy.csv")).records)


def _words_by_category() -> dict[str, list[str]]:
    lex = toy_sound_lexicon()
    out: dict[str, list[str]] = {c: [] for c in SOUND_CATEGORIES}
    for term in sorted(lex.terms):
        out[lex.terms[term][0]].append(term)
    return out


@dataclass
class SyntheticCity:
    segments: list[StreetSegment]
    photos: list[PhotoRecord]
    regimes: dict[str, str]
    noise: list[NoiseRecord]
    transport_share: dict[str, float]
    nature_share: dict[str, float]


def grid_segments(n_segments: int, block_m: float = 150.0, origin=ORIGIN) -> list[tuple[str, np.ndarray]]:
    """Edges of the smallest square street grid holding ``n_segments``,
    in metres around ``origin``; horizontal edges first, row by row."""
    side = 2
    while 2 * side * (side - 1) < n_segments:
        side += 1
    edges = []
    for r in range(side):
        for c in range(side - 1):
            edges.append(np.array([[c, r], [c + 1, r]], dtype=np.float64) * block_m)
    for c in range(side):
        for r in range(side - 1):
            edges.append(np.array([[c, r], [c, r + 1]], dtype=np.float64) * block_m)
    half = (side - 1) * block_m / 2.0
    return [(f"s{k:06d}", e - half) for k, e in enumerate(edges[:n_segments])]


def _unproject(xy: np.ndarray, origin) -> list[tuple[float, float]]:
    lon0, lat0 = origin
    k = math.degrees(1.0 / geo.EARTH_RADIUS_M)
    lat = lat0 + xy[:, 1] * k
    lon = lon0 + xy[:, 0] * k / math.cos(math.radians(lat0))
    return [(round(float(a), 8), round(float(b), 8)) for a, b in zip(lon, lat)]


def _regime_of(mid: np.ndarray, extent: float) -> int:
    """Six spatial zones: 3 columns by 2 rows of the grid."""
    col = min(int((mid[0] + extent) / (2 * extent) * 3), 2)
    row = min(int((mid[1] + extent) / (2 * extent) * 2), 1)
    return row * 3 + col


def synthetic_city(n_segments: int = 400, seed: int = 0, block_m: float = 150.0,
                   own_weight: float = 0.7, photos_per_segment: tuple[int, int] = (2, 30),
                   noise_sd: float = 4.0, origin=ORIGIN) -> SyntheticCity:
    """Grid city with six planted sound regimes.

    Each photo draws one category (the regime's own with probability
    ``own_weight``, otherwise uniformly among the rest) and one to three
    words of it, plus filler and emotion tags. Photos sit within 15 m of the
    middle part of their street, so they never reach a neighbouring buffer.
    Day noise is ``55 + 15 * transport share - 5 * nature share`` plus
    Gaussian noise; evening and night are 3 and 8 dB lower.
    """
    rng = np.random.default_rng(seed)
    words = _words_by_category()
    edges = grid_segments(n_segments, block_m, origin)
    extent = max(float(np.abs(e).max()) for _, e in edges) + 1e-9
    segments, photos, regimes, noise = [], [], {}, []
    t_share, n_share = {}, {}
    n_cat = len(SOUND_CATEGORIES)
    for sid, xy in edges:
        regime = SOUND_CATEGORIES[_regime_of(xy.mean(axis=0), extent)]
        regimes[sid] = regime
        stypes = REGIME_STREET_TYPES[regime]
        stype = stypes[int(rng.integers(len(stypes)))]
        segments.append(StreetSegment(sid, tuple(_unproject(xy, origin)), stype))
        probs = np.full(n_cat, (1.0 - own_weight) / (n_cat - 1))
        probs[SOUND_CATEGORIES.index(regime)] = own_weight
        n_photos = int(rng.integers(photos_per_segment[0], photos_per_segment[1] + 1))
        counts = np.zeros(n_cat)
        d = xy[1] - xy[0]
        normal = np.array([-d[1], d[0]]) / np.hypot(*d)
        for k in range(n_photos):
            cat = int(rng.choice(n_cat, p=probs))
            n_words = int(rng.integers(1, 4))
            picked = rng.choice(len(words[SOUND_CATEGORIES[cat]]), size=n_words, replace=False)
            tags = [words[SOUND_CATEGORIES[cat]][i] for i in sorted(picked)]
            counts[cat] += n_words
            tags += [FILLER_TAGS[i] for i in sorted(rng.choice(len(FILLER_TAGS), size=int(rng.integers(0, 3)), replace=False))]
            if rng.random() < 0.3:
                tags.append(EMOTION_TAGS[int(rng.integers(len(EMOTION_TAGS)))])
            t = rng.uniform(0.3, 0.7)
            pos = xy[0] + t * d + rng.uniform(-15.0, 15.0) * normal
            (lon, lat), = _unproject(pos[None, :], origin)
            photos.append(PhotoRecord(f"{sid}p{k:03d}", lon, lat, tuple(tags), 1.2e9 + k, f"u{int(rng.integers(50))}"))
        share = counts / counts.sum()
        t_share[sid] = float(share[0])
        n_share[sid] = float(share[SOUND_CATEGORIES.index("nature")])
        day = 55.0 + 15.0 * share[0] - 5.0 * n_share[sid] + rng.normal(0.0, noise_sd)
        day = round(float(day), 2)
        noise.append(NoiseRecord(sid, day, round(day - 3.0, 2), round(day - 8.0, 2)))
    return SyntheticCity(segments, photos, regimes, noise, t_share, n_share)


def planted_partition(block_sizes, mixing: float, mean_degree: float = 12.0, seed: int = 0,
                      weight: int = 1) -> tuple[CooccurrenceGraph, list[int]]:
    """Random graph with planted blocks.

    Each node expects ``(1 - mixing) * mean_degree`` neighbours inside its
    block and ``mixing * mean_degree`` outside. Returns the graph (nodes
    ``w000``, ``w001``, ...) and the planted block of every node.
    """
    rng = np.random.default_rng(seed)
    labels = [b for b, size in enumerate(block_sizes) for _ in range(size)]
    n = len(labels)
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            same = labels[i] == labels[j]
            n_in = block_sizes[labels[i]] - 1
            n_out = n - block_sizes[labels[i]]
            p = (1 - mixing) * mean_degree / n_in if same else (mixing * mean_degree / n_out if n_out else 0.0)
            if rng.random() < min(p, 1.0):
                edges.append((f"w{i:03d}", f"w{j:03d}", weight))
    nodes = [f"w{i:03d}" for i in range(n)]
    return CooccurrenceGraph.from_edge_list(edges, nodes), labels


def _scores(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 1, 10).astype(np.int64)


def synthetic_soundwalk(n: int = 200, seed: int = 0, locations: int = 10) -> list[SoundwalkRecord]:
    """Soundwalk tuples driven by three latent sources (traffic, nature,
    people) with perceptions that respond to them plausibly."""
    rng = np.random.default_rng(seed)
    loc_level = rng.uniform(0, 1, size=(locations, 3))
    out = []
    for k in range(n):
        loc = k % locations
        traffic, nat, people = np.clip(loc_level[loc] + rng.normal(0, 0.15, 3), 0, 1)
        sounds = _scores(np.array([
            1 + 9 * traffic,
            1 + 9 * people * 0.8 + rng.normal(0, 1),
            1 + 9 * people,
            1 + 9 * nat,
            1 + 4 * rng.random(),
        ]) + rng.normal(0, 0.7, 5))
        percs = _scores(np.array([
            1 + 9 * (0.6 * nat + 0.4 * (1 - traffic)),
            1 + 9 * (0.7 * traffic + 0.3 * people),
            1 + 9 * people,
            1 + 9 * (1 - people) * 0.8,
            1 + 9 * (0.5 * nat + 0.5 * (1 - traffic)),
            1 + 9 * traffic * 0.9,
            1 + 9 * (0.6 * people + 0.2 * traffic),
            1 + 9 * (1 - people) * 0.6,
        ]) + rng.normal(0, 0.7, 8))
        out.append(SoundwalkRecord(f"w{loc // 5}", f"p{k // locations:03d}", f"l{loc:02d}",
                                   tuple(int(v) for v in sounds), tuple(int(v) for v in percs)))
    return out


def write_noise(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "l_day", "l_evening", "l_night"])
        for r in records:
            w.writerow([r.segment_id, f"{r.l_day:.2f}", f"{r.l_evening:.2f}", f"{r.l_night:.2f}"])


def write_inputs(out_dir, city: SyntheticCity, soundwalk=None, seed: int = 0) -> Path:
    """Write the city, toy lexicons and a manifest into ``out_dir``.

    Returns the manifest path; outputs are configured to go to
    ``out_dir/out``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "photos.jsonl", "w", encoding="utf-8") as fh:
        write_photos(city.photos, fh)
    with open(out / "segments.geojson", "w", encoding="utf-8") as fh:
        json.dump(segments_to_geojson(city.segments), fh)
    write_noise(city.noise, out / "noise.csv")
    if soundwalk is None:
        soundwalk = synthetic_soundwalk(seed=seed)
    with open(out / "soundwalk.csv", "w", newline="", encoding="utf-8") as fh:
        write_soundwalk(soundwalk, fh)
    for name in ("toy_sound_lexicon.csv", "toy_emotion_lexicon.csv", "toy_taxonomy.csv"):
        shutil.copyfile(data_path(name), out / name)
    manifest = out / "run.manifest"
    manifest.write_text(
        "photos = photos.jsonl\n"
        "segments = segments.geojson\n"
        "sound_lexicon = toy_sound_lexicon.csv\n"
        "emotion_lexicon = toy_emotion_lexicon.csv\n"
        "taxonomy = toy_taxonomy.csv\n"
        "noise = noise.csv\n"
        "soundwalk = soundwalk.csv\n"
        "out_dir = out\n"
        f"seed = {seed}\n"
        "min_count = 0\n",
        encoding="utf-8",
    )
    return manifest


def write_scale_inputs(out_dir, n_segments: int = 150_000, n_photos: int = 2_000_000,
                       seed: int = 0, block_m: float = 150.0) -> Path:
    """Large grid city written straight to disk without building records.

    Photos are spread uniformly over segments with one to four tags from the
    toy lexicon plus filler; returns the manifest path.
    """
    rng = np.random.default_rng(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    edges = grid_segments(n_segments, block_m)
    a = np.array([e[0] for _, e in edges])
    b = np.array([e[1] for _, e in edges])
    with open(out / "segments.geojson", "w", encoding="utf-8") as fh:
        fh.write('{"type": "FeatureCollection", "features": [\n')
        lon0, lat0 = ORIGIN
        k = math.degrees(1.0 / geo.EARTH_RADIUS_M)
        kx = k / math.cos(math.radians(lat0))
        for i, (sid, _) in enumerate(edges):
            sep = ",\n" if i else ""
            fh.write(
                f'{sep}{{"type": "Feature", "properties": {{"segment_id": "{sid}", "highway": "residential"}}, '
                f'"geometry": {{"type": "LineString", "coordinates": '
                f'[[{lon0 + a[i, 0] * kx:.8f}, {lat0 + a[i, 1] * k:.8f}], '
                f'[{lon0 + b[i, 0] * kx:.8f}, {lat0 + b[i, 1] * k:.8f}]]}}}}'
            )
        fh.write("\n]}\n")
    vocab = sorted(toy_sound_lexicon().terms) + list(FILLER_TAGS)
    chunk = 200_000
    with open(out / "photos.jsonl", "w", encoding="utf-8") as fh:
        for start in range(0, n_photos, chunk):
            m = min(chunk, n_photos - start)
            seg = rng.integers(0, n_segments, m)
            t = rng.uniform(0.3, 0.7, m)
            pos = a[seg] + t[:, None] * (b[seg] - a[seg])
            d = b[seg] - a[seg]
            normal = np.column_stack([-d[:, 1], d[:, 0]]) / np.hypot(d[:, 0], d[:, 1])[:, None]
            pos += rng.uniform(-15, 15, m)[:, None] * normal
            lon = lon0 + pos[:, 0] * kx
            lat = lat0 + pos[:, 1] * k
            ntag = rng.integers(1, 5, m)
            tag_ids = rng.integers(0, len(vocab), (m, 4))
            lines = []
            for j in range(m):
                tags = ", ".join(f'"{vocab[t]}"' for t in tag_ids[j, : ntag[j]])
                lines.append(f'{{"id": "p{start + j}", "lon": {lon[j]:.8f}, "lat": {lat[j]:.8f}, "tags": [{tags}]}}\n')
            fh.write("".join(lines))
    for name in ("toy_sound_lexicon.csv", "toy_taxonomy.csv"):
        shutil.copyfile(data_path(name), out / name)
    manifest = out / "run.manifest"
    manifest.write_text(
        "photos = photos.jsonl\n"
        "segments = segments.geojson\n"
        "sound_lexicon = toy_sound_lexicon.csv\n"
        "taxonomy = toy_taxonomy.csv\n"
        "out_dir = out\n"
        f"seed = {seed}\n",
        encoding="utf-8",
    )
    return manifest


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Write a synthetic input set for the chattymaps CLI.")
    ap.add_argument("out_dir")
    ap.add_argument("--segments", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    city = synthetic_city(args.segments, seed=args.seed)
    print(write_inputs(args.out_dir, city, seed=args.seed))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
