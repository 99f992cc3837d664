import json

import numpy as np
import pytest

from brandalign.data import BrandMapping
from brandalign.evaluate import (MetricsReport, PredictionEvent,
                                 cross_brand_evaluate, evaluate, event_pool,
                                 hits_at_k, make_events, mrr_at_k,
                                 rank_candidates, write_metrics)
from brandalign.model import EmbeddingSpace
from conftest import make_catalog, make_sessions
from oracles import brute_force_metrics


def space_of(catalog, vectors, brand="B", dim=None):
    dims = {len(v) for v in vectors.values()}
    d = dim if dim is not None else dims.pop()
    return EmbeddingSpace(dim=d, brand=brand,
                         vectors={h: np.asarray(v, float)
                                  for h, v in vectors.items()})


# ---------------------------------------------------------------------------
# make_events / event_pool

def test_make_events_consecutive_pairs():
    catalog = make_catalog({"m0": ["A", "B", "C"]})
    sessions = make_sessions("X", [["A", "B", "C"]], catalog)
    events = make_events(sessions, catalog)
    assert events == [PredictionEvent("A", "B", "m0"),
                      PredictionEvent("B", "C", "m0")]


def test_make_events_drops_degenerate_repeats():
    catalog = make_catalog({"m0": ["A", "B"]})
    sessions = make_sessions("X", [["A", "A", "B", "B"]], catalog)
    events = make_events(sessions, catalog)
    assert events == [PredictionEvent("A", "B", "m0")]


def test_make_events_single_click_session_contributes_nothing():
    catalog = make_catalog({"m0": ["A", "B"]})
    sessions = make_sessions("X", [["A"]], catalog)
    assert make_events(sessions, catalog) == []


def test_event_pool_is_market_minus_query():
    catalog = make_catalog({"m0": ["A", "B", "C"], "m1": ["D"]})
    ev = PredictionEvent("A", "B", "m0")
    assert event_pool(ev, catalog) == {"B", "C"}
    assert event_pool(ev, catalog, pool="global") == {"B", "C", "D"}
    with pytest.raises(ValueError, match="pool"):
        event_pool(ev, catalog, pool="universe")


# ---------------------------------------------------------------------------
# rank_candidates

def test_rank_candidates_cosine_hand_example():
    catalog = make_catalog({"m0": ["Q", "X", "Y"]})
    space = space_of(catalog, {"Q": [1.0, 0.0],
                               "X": [2.0, 0.2],     # nearly parallel to Q
                               "Y": [0.0, 3.0]})    # orthogonal to Q
    ev = PredictionEvent("Q", "X", "m0")
    assert rank_candidates(ev, space, catalog, mode="cosine") == ["X", "Y"]


def test_rank_candidates_cosine_vs_model_flip():
    # Y has the bigger dot product, X the bigger cosine
    catalog = make_catalog({"m0": ["Q", "X", "Y"]})
    space = space_of(catalog, {"Q": [1.0, 0.0],
                               "X": [0.1, 0.0],
                               "Y": [10.0, 40.0]})
    ev = PredictionEvent("Q", "X", "m0")
    assert rank_candidates(ev, space, catalog, mode="cosine") == ["X", "Y"]
    assert rank_candidates(ev, space, catalog, mode="model") == ["Y", "X"]


def test_rank_candidates_all_zero_scores_ascending_id():
    catalog = make_catalog({"m0": ["Q", "c", "a", "b"]})
    space = space_of(catalog, {h: [0.0, 0.0] for h in ["Q", "a", "b", "c"]})
    ev = PredictionEvent("Q", "a", "m0")
    assert rank_candidates(ev, space, catalog) == ["a", "b", "c"]


def test_rank_candidates_missing_embeddings_rank_last():
    catalog = make_catalog({"m0": ["Q", "a", "b", "z"]})
    space = space_of(catalog, {"Q": [1.0, 0.0], "b": [1.0, 0.0]})
    ev = PredictionEvent("Q", "b", "m0")
    assert rank_candidates(ev, space, catalog) == ["b", "a", "z"]


def test_rank_candidates_missing_query_raises():
    catalog = make_catalog({"m0": ["Q", "a"]})
    space = space_of(catalog, {"a": [1.0, 0.0]})
    with pytest.raises(ValueError, match="missing"):
        rank_candidates(PredictionEvent("Q", "a", "m0"), space, catalog)


# ---------------------------------------------------------------------------
# hits@k / mrr@k

def test_hits_and_mrr_hand_example():
    ranks = [1, 5, 12]
    assert hits_at_k(ranks, 10) == pytest.approx(2 / 3)
    assert mrr_at_k(ranks, 10) == pytest.approx((1.0 + 0.2 + 0.0) / 3)


def test_hits_at_one():
    assert hits_at_k([1, 2, 1, 3], 1) == 0.5
    assert mrr_at_k([1, 2, 1, 3], 1) == 0.5


def test_metrics_reject_empty_or_bad_k():
    with pytest.raises(ValueError):
        hits_at_k([], 10)
    with pytest.raises(ValueError):
        mrr_at_k([], 10)
    with pytest.raises(ValueError):
        hits_at_k([1], 0)
    with pytest.raises(ValueError):
        mrr_at_k([1], 0)


# ---------------------------------------------------------------------------
# evaluate vs brute-force oracle

def _random_world(seed, n_markets=2, per_market=6, dim=3, drop=0.0):
    rng = np.random.default_rng(seed)
    markets = {f"m{i}": [f"m{i}h{j}" for j in range(per_market)]
               for i in range(n_markets)}
    catalog = make_catalog(markets, seed=seed)
    vectors = {}
    for h in catalog.hotel_ids:
        if rng.random() >= drop:
            vectors[h] = rng.normal(size=dim)
    clicks = []
    for _ in range(10):
        m = rng.choice(list(markets))
        length = int(rng.integers(2, 5))
        clicks.append(list(rng.choice(markets[m], size=length)))
    # queries must have vectors for the in-brand path
    clicks = [[c for c in s] for s in clicks
              if all(h in vectors for h in s)]
    sessions = make_sessions("X", [s for s in clicks if len(s) >= 2], catalog)
    return catalog, vectors, sessions


def test_evaluate_matches_brute_force_20_events():
    catalog = make_catalog({"m0": [f"h{j}" for j in range(8)],
                            "m1": [f"g{j}" for j in range(7)]}, seed=1)
    rng = np.random.default_rng(1)
    vectors = {h: rng.normal(size=4) for h in catalog.hotel_ids}
    clicks = [["h0", "h3", "h5"], ["h1", "h2"], ["h7", "h0", "h4", "h6"],
              ["g0", "g1", "g2"], ["g3", "g4"], ["g6", "g5", "g0", "g1"],
              ["h2", "h6", "h1"], ["g2", "g6", "g4"], ["h4", "h7", "h2"],
              ["g5", "g3", "g6"]]
    sessions = make_sessions("X", clicks, catalog)
    events = make_events(sessions, catalog)
    assert len(events) == 20
    space = space_of(catalog, vectors)
    for mode in ("cosine", "model"):
        rep = evaluate(sessions, space, catalog, mode=mode, ks=(1, 3, 10))
        for k in (1, 3, 10):
            bf_hits, bf_mrr = brute_force_metrics(events, vectors, catalog,
                                                  mode, k)
            assert abs(rep.hits(k, mode, "in_brand") - bf_hits) < 1e-12
            assert abs(rep.mrr(k, mode, "in_brand") - bf_mrr) < 1e-12


def test_metric_invariants_on_randomized_fixtures():
    rng = np.random.default_rng(99)
    checked = 0
    seed = 0
    while checked < 1000:
        seed += 1
        catalog, vectors, sessions = _random_world(seed, drop=0.2)
        events = make_events(sessions, catalog)
        if not events:
            continue
        space = space_of(catalog, vectors, dim=3)
        mode = "cosine" if rng.random() < 0.5 else "model"
        rep = evaluate(sessions, space, catalog, mode=mode, ks=(1, 3, 8))
        prev_h, prev_m = 0.0, 0.0
        for k in (1, 3, 8):
            h = rep.hits(k, mode, "in_brand")
            m = rep.mrr(k, mode, "in_brand")
            assert 0.0 <= m <= h <= 1.0
            assert h >= prev_h and m >= prev_m   # monotone in k
            prev_h, prev_m = h, m
        checked += 1


def test_cosine_is_scale_invariant_model_is_not():
    catalog, vectors, sessions = _random_world(5)
    space = space_of(catalog, vectors, dim=3)
    scaled = space_of(catalog, {h: (3.7 ** (i % 5)) * v
                                for i, (h, v) in enumerate(vectors.items())},
                      dim=3)
    a = evaluate(sessions, space, catalog, mode="cosine", ks=(3,))
    b = evaluate(sessions, scaled, catalog, mode="cosine", ks=(3,))
    assert a.rows == b.rows
    events = make_events(sessions, catalog)
    flips = any(rank_candidates(ev, space, catalog, mode="model")
                != rank_candidates(ev, scaled, catalog, mode="model")
                for ev in events)
    assert flips


def test_evaluate_event_order_invariance():
    catalog, vectors, sessions = _random_world(8)
    space = space_of(catalog, vectors, dim=3)
    rev = make_sessions(sessions.brand,
                        [list(s.clicks) for s in reversed(sessions.sessions)],
                        catalog)
    a = evaluate(sessions, space, catalog, ks=(3,))
    b = evaluate(rev, space, catalog, ks=(3,))
    assert a.rows == b.rows


def test_evaluate_planted_neighbor_gets_hits_at_one():
    # truth vector parallel to the query -> cosine rank 1 everywhere
    catalog = make_catalog({"m0": ["A", "B", "C", "D"]})
    space = space_of(catalog, {"A": [1.0, 0.0], "B": [2.0, 0.0],
                               "C": [-1.0, 5.0], "D": [0.0, -1.0]})
    sessions = make_sessions("X", [["A", "B"]], catalog)
    rep = evaluate(sessions, space, catalog, ks=(1,))
    assert rep.hits(1, "cosine", "in_brand") == 1.0
    assert rep.mrr(1, "cosine", "in_brand") == 1.0


# ---------------------------------------------------------------------------
# cross-brand evaluation

def _two_brand_setup():
    catalog = make_catalog({"m0": ["sA", "sB", "sC", "tA", "tB", "tC"]})
    rng = np.random.default_rng(3)
    src_vectors = {h: rng.normal(size=3) for h in ("sA", "sB", "sC")}
    src_space = space_of(catalog, src_vectors, brand="S")
    mapping = BrandMapping({"sA": "tA", "sB": "tB", "sC": "tC"})
    sessions = make_sessions("T", [["tA", "tB"], ["tB", "tC"]], catalog)
    return catalog, src_space, mapping, sessions


def test_cross_brand_identity_mapping_reduces_to_in_brand():
    catalog = make_catalog({"m0": ["A", "B", "C"]})
    rng = np.random.default_rng(4)
    space = space_of(catalog, {h: rng.normal(size=3) for h in ("A", "B", "C")})
    sessions = make_sessions("X", [["A", "B"], ["B", "C"], ["C", "A"]], catalog)
    mapping = BrandMapping({h: h for h in ("A", "B", "C")})
    a = evaluate(sessions, space, catalog, ks=(1, 2))
    b = cross_brand_evaluate(sessions, space, mapping, catalog, ks=(1, 2))
    for k in (1, 2):
        assert a.hits(k, "cosine", "in_brand") == b.hits(k, "cosine", "cross_brand")
        assert a.mrr(k, "cosine", "in_brand") == b.mrr(k, "cosine", "cross_brand")


def test_cross_brand_scores_through_mapping():
    catalog, src_space, mapping, sessions = _two_brand_setup()
    rep = cross_brand_evaluate(sessions, src_space, mapping, catalog, ks=(1, 2))
    # tA,tB,tC rank via sA,sB,sC vectors; unmapped pool mates (sA..sC as
    # candidates of the t-queries) have no mapping entry and rank last
    assert rep.rows[(2, "cosine", "cross_brand")]["n_events"] == 2
    assert rep.metadata["skipped_events"] == 0


def test_cross_brand_unmapped_queries_skipped_and_counted():
    catalog, src_space, mapping, sessions = _two_brand_setup()
    partial = BrandMapping({"sA": "tA", "sB": "tB"})   # tC unmapped
    sessions = make_sessions("T", [["tA", "tB"], ["tC", "tA"]], catalog)
    rep = cross_brand_evaluate(sessions, src_space, partial, catalog, ks=(2,))
    assert rep.metadata["skipped_events"] == 1
    assert rep.rows[(2, "cosine", "cross_brand")]["n_events"] == 1


def test_cross_brand_all_queries_unmapped_raises():
    catalog, src_space, _, sessions = _two_brand_setup()
    with pytest.raises(ValueError, match="every query was unmapped"):
        cross_brand_evaluate(sessions, src_space, BrandMapping({"sA": "zz"}),
                             catalog)


# ---------------------------------------------------------------------------
# write_metrics

def test_write_metrics_one_json_object_per_cell(tmp_path):
    rep = MetricsReport(rows={
        (10, "cosine", "in_brand"): {"hits": 0.5, "mrr": 0.25, "n_events": 4},
        (100, "cosine", "in_brand"): {"hits": 0.75, "mrr": 0.3, "n_events": 4},
    }, metadata={"missing_candidates": 0})
    p = tmp_path / "metrics.jsonl"
    write_metrics(rep, p)
    lines = [json.loads(line) for line in p.read_text().splitlines()]
    assert lines[0] == {"setting": "in_brand", "mode": "cosine", "k": 10,
                        "hits": 0.5, "mrr": 0.25, "n_events": 4}
    assert lines[1]["k"] == 100
    assert lines[2] == {"metadata": {"missing_candidates": 0}}
