import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brandalign.data import (BrandMapping, DataError, HotelCatalog, HotelRecord,
                             load_catalog, load_mapping, load_sessions,
                             split_sessions, split_sizes)
from conftest import make_catalog, make_sessions


def _write_lines(path, objs):
    with open(path, "w", encoding="utf-8") as fh:
        for obj in objs:
            fh.write(json.dumps(obj) + "\n")


def _catalog_obj(hid, market="m0", amenities=(0.5, 0.5), geo=(0.0, 0.0)):
    return {"hotel_id": hid, "market_id": market,
            "amenities": list(amenities), "geo": list(geo)}


# ---------------------------------------------------------------------------
# catalog loading

def test_load_catalog_two_records_one_market(tmp_path):
    path = tmp_path / "catalog.jsonl"
    _write_lines(path, [_catalog_obj("h0"), _catalog_obj("h1")])
    catalog = load_catalog(path)
    assert len(catalog) == 2
    assert set(catalog.markets) == {"m0"}
    assert catalog.markets["m0"] == {"h0", "h1"}


def test_load_catalog_empty_file_errors(tmp_path):
    path = tmp_path / "catalog.jsonl"
    path.write_text("")
    with pytest.raises(DataError, match="empty catalog"):
        load_catalog(path)


def test_load_catalog_duplicate_id_names_the_id(tmp_path):
    path = tmp_path / "catalog.jsonl"
    _write_lines(path, [_catalog_obj("h7"), _catalog_obj("h7")])
    with pytest.raises(DataError, match="h7"):
        load_catalog(path)


def test_load_catalog_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "catalog.jsonl"
    path.write_text(json.dumps(_catalog_obj("h0")) + "\n{not json\n")
    with pytest.raises(DataError, match=":2:"):
        load_catalog(path)


def test_catalog_rejects_inconsistent_feature_lengths():
    hotels = [
        HotelRecord("h0", "m0", np.array([0.1, 0.2]), np.array([0.0, 0.0])),
        HotelRecord("h1", "m0", np.array([0.1]), np.array([0.0, 0.0])),
    ]
    with pytest.raises(DataError, match="amenity length"):
        HotelCatalog(hotels)


def test_catalog_rejects_out_of_range_features():
    bad_amenity = [HotelRecord("h0", "m0", np.array([1.5, 0.0]), np.array([0.0, 0.0]))]
    with pytest.raises(DataError, match="amenity"):
        HotelCatalog(bad_amenity)
    bad_geo = [HotelRecord("h0", "m0", np.array([0.5, 0.0]), np.array([0.0, -2.0]))]
    with pytest.raises(DataError, match="geo"):
        HotelCatalog(bad_geo)


# ---------------------------------------------------------------------------
# session loading

def _session_obj(sid, clicks, brand="A", market="m0"):
    return {"session_id": sid, "brand": brand, "market_id": market,
            "clicks": list(clicks)}


def test_load_sessions_three_valid(tmp_path, catalog6):
    path = tmp_path / "sessions.jsonl"
    _write_lines(path, [_session_obj("s0", ["h0", "h1"]),
                        _session_obj("s1", ["h1", "h2"]),
                        _session_obj("s2", ["h2", "h0", "h1"])])
    assert len(load_sessions(path, catalog6, "A")) == 3


def test_load_sessions_unknown_hotel_names_it(tmp_path, catalog6):
    path = tmp_path / "sessions.jsonl"
    _write_lines(path, [_session_obj("s0", ["h0", "Z9"])])
    with pytest.raises(DataError, match="Z9"):
        load_sessions(path, catalog6, "A")


def test_load_sessions_single_click_accepted(tmp_path, catalog6):
    path = tmp_path / "sessions.jsonl"
    _write_lines(path, [_session_obj("s0", ["h0"])])
    sset = load_sessions(path, catalog6, "A")
    assert len(sset) == 1
    assert sset.sessions[0].clicks == ("h0",)


def test_load_sessions_empty_clicks_error(tmp_path, catalog6):
    path = tmp_path / "sessions.jsonl"
    _write_lines(path, [_session_obj("s0", [])])
    with pytest.raises(DataError, match="no clicks"):
        load_sessions(path, catalog6, "A")


def test_load_sessions_brand_mismatch_error(tmp_path, catalog6):
    path = tmp_path / "sessions.jsonl"
    _write_lines(path, [_session_obj("s0", ["h0", "h1"], brand="B")])
    with pytest.raises(DataError, match="brand"):
        load_sessions(path, catalog6, "A")


def test_load_sessions_cross_market_click_warns(tmp_path, catalog6):
    path = tmp_path / "sessions.jsonl"
    _write_lines(path, [_session_obj("s0", ["h0", "h3"], market="m0")])
    with pytest.warns(UserWarning, match="outside market"):
        load_sessions(path, catalog6, "A")


# ---------------------------------------------------------------------------
# mapping loading

def test_load_mapping_roundtrip(tmp_path):
    path = tmp_path / "mapping.tsv"
    path.write_text("a1\tb1\na2\tb2\n")
    mapping = load_mapping(path)
    assert mapping.to_target("a1") == "b1"
    assert mapping.to_source("b2") == "a2"
    assert mapping.to_source("unknown") is None


def test_load_mapping_duplicate_source_errors(tmp_path):
    path = tmp_path / "mapping.tsv"
    path.write_text("a1\tb1\na1\tb2\n")
    with pytest.raises(DataError, match="duplicate source"):
        load_mapping(path)


def test_load_mapping_bad_column_count(tmp_path):
    path = tmp_path / "mapping.tsv"
    path.write_text("a1\tb1\tc1\n")
    with pytest.raises(DataError, match="2 tab-separated columns"):
        load_mapping(path)


def test_load_mapping_checks_catalogs(tmp_path, catalog6):
    path = tmp_path / "mapping.tsv"
    path.write_text("h0\tnope\n")
    with pytest.raises(DataError, match="nope"):
        load_mapping(path, source_catalog=catalog6, target_catalog=catalog6)


def test_mapping_rejects_repeated_target():
    with pytest.raises(DataError, match="not injective"):
        BrandMapping({"a1": "b1", "a2": "b1"})


def test_mapping_inverse_is_identity_on_domain():
    mapping = BrandMapping({"a1": "b1", "a2": "b2", "a3": "b3"})
    for src in mapping.pairs:
        assert mapping.to_source(mapping.to_target(src)) == src


# ---------------------------------------------------------------------------
# splits

def test_split_sizes_ten_sessions_paper_ratio():
    assert split_sizes(10, (8, 1, 1)) == (8, 1, 1)


def test_split_sizes_seven_sessions_remainder_rule():
    assert split_sizes(7, (8, 1, 1)) == (5, 1, 1)


# Hand-enumerated allocation for n = 1..20 at ratios 8:1:1: floors of the
# exact shares, leftover handed out one at a time cycling val, test, train.
SPLIT_TABLE = {
    1: (0, 1, 0), 2: (1, 1, 0), 3: (2, 1, 0), 4: (3, 1, 0), 5: (4, 1, 0),
    6: (4, 1, 1), 7: (5, 1, 1), 8: (6, 1, 1), 9: (7, 1, 1), 10: (8, 1, 1),
    11: (8, 2, 1), 12: (9, 2, 1), 13: (10, 2, 1), 14: (11, 2, 1), 15: (12, 2, 1),
    16: (12, 2, 2), 17: (13, 2, 2), 18: (14, 2, 2), 19: (15, 2, 2), 20: (16, 2, 2),
}


@pytest.mark.parametrize("n,expected", sorted(SPLIT_TABLE.items()))
def test_split_sizes_frozen_table(n, expected):
    assert split_sizes(n, (8, 1, 1)) == expected


def test_split_sizes_all_zero_ratios_error():
    with pytest.raises(ValueError):
        split_sizes(5, (0, 0, 0))
    with pytest.raises(ValueError):
        split_sizes(5, (1, -1, 1))


def test_split_sizes_zero_ratio_part_stays_empty():
    train, val, test = split_sizes(9, (1, 0, 1))
    assert val == 0
    assert train + test == 9


@given(n=st.integers(0, 300),
       ratios=st.tuples(st.integers(0, 9), st.integers(0, 9), st.integers(0, 9))
       .filter(lambda r: sum(r) > 0))
@settings(max_examples=300, deadline=None)
def test_split_sizes_partition_property(n, ratios):
    sizes = split_sizes(n, ratios)
    assert sum(sizes) == n
    assert all(s >= 0 for s in sizes)
    for s, r in zip(sizes, ratios):
        if r == 0:
            assert s == 0


def _ten_sessions(catalog):
    return make_sessions("A", [["h0", "h1"]] * 10, catalog)


def test_split_sessions_partition_and_determinism(catalog6):
    sset = make_sessions("A", [["h0", "h1", "h2"] for _ in range(13)], catalog6)
    parts1 = split_sessions(sset, (8, 1, 1), seed=5)
    parts2 = split_sessions(sset, (8, 1, 1), seed=5)
    ids = [sorted(s.session_id for s in p.sessions) for p in parts1]
    assert [len(p) for p in parts1] == [10, 2, 1]
    # disjoint and union-preserving
    all_ids = ids[0] + ids[1] + ids[2]
    assert sorted(all_ids) == sorted(s.session_id for s in sset.sessions)
    assert len(set(all_ids)) == len(all_ids)
    # deterministic under the seed
    for p1, p2 in zip(parts1, parts2):
        assert [s.session_id for s in p1.sessions] == [s.session_id for s in p2.sessions]


def test_split_sessions_sizes_do_not_depend_on_seed(catalog6):
    sset = make_sessions("A", [["h0", "h1"]] * 17, catalog6)
    sizes = {tuple(len(p) for p in split_sessions(sset, (8, 1, 1), seed))
             for seed in range(10)}
    assert sizes == {split_sizes(17, (8, 1, 1))}


def test_split_sessions_different_seed_different_shuffle(catalog6):
    sset = make_sessions("A", [["h0", "h1"]] * 40, catalog6)
    a = split_sessions(sset, (8, 1, 1), seed=1)
    b = split_sessions(sset, (8, 1, 1), seed=2)
    assert [s.session_id for s in a[0].sessions] != [s.session_id for s in b[0].sessions]
