from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chattymaps import geo, lexicon, synthetic
from chattymaps.ingest import PhotoRecord, StreetSegment
from chattymaps.lexicon import Lexicon, Taxonomy


@pytest.mark.parametrize("raw, tok", [
    ("TRAFFIC", "traffic"),
    ("bird-song", "bird song"),
    ("Bird-Song ", "bird song"),
    ("  ” ” ", None),
    ("Café!", "café"),
    ("a  -  b", "a b"),
])
def test_normalize_examples(raw, tok):
    assert lexicon.normalize(raw) == tok


@given(st.text(max_size=30))
def test_normalize_idempotent(raw):
    tok = lexicon.normalize(raw)
    if tok is not None:
        assert lexicon.normalize(tok) == tok


def test_filter_boundary_is_strict():
    kept, frac = lexicon.filter_by_frequency({"a": 101, "b": 100, "c": 5}, 100)
    assert kept == {"a"}
    assert Fraction(frac).limit_denominator(1000) == Fraction(101, 206)


def test_filter_min_zero_keeps_positive_counts():
    kept, frac = lexicon.filter_by_frequency({"a": 1, "b": 0, "c": 3}, 0)
    assert kept == {"a", "c"} and frac == 1.0


def test_filter_negative_count_raises():
    with pytest.raises(ValueError):
        lexicon.filter_by_frequency({"a": -1})


def test_filter_zipf_fixture():
    # floor(292000 * k^-1.035) over 65,000 ranks; values counted once and frozen
    k = np.arange(1, 65_001)
    counts = np.floor(292_000 * k ** -1.035).astype(np.int64)
    kept, frac = lexicon.filter_by_frequency({f"t{i}": int(c) for i, c in enumerate(counts)}, 100)
    assert len(kept) == 2208
    assert frac == pytest.approx(2_139_100 / 2_820_311, rel=1e-12)
    assert frac == pytest.approx(0.76, abs=0.005)


SOUND = Lexicon.from_entries("sound", [("bird", ["nature"]), ("car", ["transport"])])
EMO = Lexicon.from_entries("emo", [("happy", ["joy", "trust"])])


def test_match_examples():
    assert lexicon.match({"bird": 2, "car": 1}, SOUND) == {"nature": 2, "transport": 1}
    assert lexicon.match(["birds"], SOUND) == {}
    assert lexicon.match(["happy"], EMO) == {"joy": 1, "trust": 1}


def test_multiword_terms_match_exact_string_only():
    lex = Lexicon.from_entries("x", [("Bird Song", ["nature"])])
    assert lexicon.match(["bird song"], lex) == {"nature": 1}
    assert lexicon.match(["bird", "song", "birdsong"], lex) == {}


def test_duplicate_lexicon_term_raises():
    with pytest.raises(ValueError):
        Lexicon.from_entries("x", [("Car", ["a"]), ("car", ["b"])])


_tags = st.dictionaries(st.sampled_from(["bird", "car", "happy", "x", "y"]), st.integers(1, 5))


@given(_tags, _tags)
def test_match_is_linear(a, b):
    lex = Lexicon("all", {**SOUND.terms, **EMO.terms})
    assert lexicon.match(Counter(a) + Counter(b), lex) == lexicon.match(a, lex) + lexicon.match(b, lex)


def test_taxonomy_defaults_and_validation():
    tax = synthetic.toy_taxonomy()
    assert tax.top_levels == ("transport", "mechanical", "human", "music", "nature", "indoor")
    assert tax.category("bus") == "transport"
    assert tax.category("nope") is None
    with pytest.raises(ValueError):
        Taxonomy({"a": ("x", "b", "c", "d", "e")})
    with pytest.raises(ValueError):
        Taxonomy({"a": ("x",)}, top_levels=("y",))
    assert Taxonomy({"a": ("z",), "b": ("y",)}).top_levels == ("y", "z")


def _tiny_city():
    segs = [StreetSegment("a", ((0.0, 0.0), (0.001, 0.0)), "primary"),
            StreetSegment("b", ((0.0, 0.01), (0.001, 0.01)), "primary")]
    photos = [PhotoRecord("p1", 0.0005, 0.0, ("Bird", "car")),
              PhotoRecord("p2", 0.0005, 0.0, ("car",)),
              PhotoRecord("p3", 0.0005, 0.01, ("happy",))]
    ref = (0.0, 0.005)
    table = geo.assign_photos(photos, geo.build_index(geo.buffer_segments(segs, ref)), ref)
    return photos, table


def test_coverage_counts():
    photos, table = _tiny_city()
    rows = lexicon.coverage_report(photos, table, [SOUND, EMO, Lexicon("empty")], "toy")
    got = {r.lexicon: (r.matched_tags, r.photos_matched, r.segments_matched) for r in rows}
    assert got == {"sound": (3, 2, 1), "emo": (1, 1, 1), "empty": (0, 0, 0)}


def test_every_photo_matching_gives_full_photo_coverage(city):
    photos = city.photos[:500]
    lex = Lexicon("any", {t: ("x",) for p in photos for t in lexicon.normalize_all(p.tags)})
    ref = geo.reference_point(city.segments)
    table = geo.assign_photos(photos, geo.build_index(geo.buffer_segments(city.segments, ref)), ref)
    (row,) = lexicon.coverage_report(photos, table, [lex])
    assert row.photos_matched == len(photos)


def test_histogram_matches_brute_force(city):
    ref = geo.reference_point(city.segments)
    table = geo.assign_photos(city.photos, geo.build_index(geo.buffer_segments(city.segments, ref)), ref)
    lex = synthetic.toy_sound_lexicon()
    per_seg = lexicon.matched_tags_per_segment(table, lex)
    brute = Counter()
    for sid in table.segment_ids:
        n = sum(c for t, c in table.tags(sid).items() if t in lex)
        if n:
            brute[n] += 1
    assert dict(lexicon.tags_per_segment_histogram(per_seg)) == dict(brute)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.sampled_from(["bird", "car", "happy", "x", "y", "z"]), unique=True))
def test_coverage_monotone_in_lexicon_size(extra):
    photos, table = _tiny_city()
    small = SOUND
    big = Lexicon("big", {**SOUND.terms, **{t: ("extra",) for t in extra if t not in SOUND.terms}})
    (a,) = lexicon.coverage_report(photos, table, [small])
    (b,) = lexicon.coverage_report(photos, table, [big])
    assert b.matched_tags >= a.matched_tags
    assert b.photos_matched >= a.photos_matched
    assert b.segments_matched >= a.segments_matched
