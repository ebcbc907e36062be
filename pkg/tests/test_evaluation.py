import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_profiles, make_random_dataset
from textrec.data import InteractionDataset, ProfileSet
from textrec.encoder import Encoder, EncoderConfig
from textrec.evaluation import (MetricsReport, evaluate_all_rank, evaluate_multi_profile, ndcg_at_k,
                                recall_at_k)
from textrec.retrieval import EmbeddingStore
from textrec.tokenizer import build_vocab


def test_recall_example():
    ranked = ["a", "b", "c", "x", "d"]
    assert recall_at_k(ranked, {"x", "y", "z"}, 10) == pytest.approx(1 / 3)
    assert recall_at_k(ranked, {"x", "y", "z"}, 3) == 0.0
    with pytest.raises(ValueError):
        recall_at_k(ranked, set(), 10)


def test_ndcg_example_against_formula():
    ranked = ["a", "x", "b", "c", "y", "d"]
    expected = (1 / math.log2(3) + 1 / math.log2(6)) / (1 + 1 / math.log2(3) + 1 / 2)
    assert ndcg_at_k(ranked, {"x", "y", "z"}, 10) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.4776, abs=1e-4)
    assert ndcg_at_k(["x", "y"], {"x", "y"}, 10) == 1.0


def test_single_user_single_item(kernel_backend):
    ds = InteractionDataset(["u"], ["i"], test=[("u", "i")])
    us = EmbeddingStore("user", ["u"], np.array([[1.0, 0.0]]))
    its = EmbeddingStore("item", ["i"], np.array([[0.0, 1.0]]))
    m = evaluate_all_rank(us, its, ds, "test", (10,)).mean()
    assert m == {"recall@10": 1.0, "ndcg@10": 1.0}


def _oracle(us, its, ds, split, n):
    rel = ds.relevant(split)
    rows = []
    for u in ds.users:
        if not rel.get(u):
            continue
        v = us.row(u) / np.linalg.norm(us.row(u))
        cand = [i for i in its.ids if i not in ds.user_neighbors[u]]
        # ties are defined on the 2**-32 score grid
        sc = {i: round(float(its.row(i) @ v / np.linalg.norm(its.row(i))) * 2 ** 32) for i in cand}
        ranked = sorted(cand, key=lambda i: (-sc[i], i.encode()))
        rows.append((recall_at_k(ranked, rel[u], n), ndcg_at_k(ranked, rel[u], n)))
    return np.mean(rows, axis=0)


def test_end_to_end_against_sorting_oracle(kernel_backend, rng):
    ds = make_random_dataset(rng)
    us = EmbeddingStore("user", ds.users, rng.standard_normal((len(ds.users), 5)))
    its = EmbeddingStore("item", ds.items, np.round(rng.standard_normal((len(ds.items), 5)), 1))
    res = evaluate_all_rank(us, its, ds, "test", (5, 10, 20), chunk=7)
    m = res.mean()
    for n in (5, 10, 20):
        r, g = _oracle(us, its, ds, "test", n)
        assert m[f"recall@{n}"] == pytest.approx(r, abs=1e-12)
        assert m[f"ndcg@{n}"] == pytest.approx(g, abs=1e-12)


@given(st.integers(0, 10_000))
def test_metrics_monotone_in_cutoff(seed):
    rng = np.random.default_rng(seed)
    ds = make_random_dataset(rng, n_users=8, n_items=25)
    us = EmbeddingStore("user", ds.users, rng.standard_normal((8, 3)))
    its = EmbeddingStore("item", ds.items, rng.standard_normal((25, 3)))
    res = evaluate_all_rank(us, its, ds, "val", (1, 3, 5, 10, 25))
    assert np.all(np.diff(res.recall, axis=1) >= -1e-15)
    assert np.all(np.diff(res.ndcg, axis=1) >= -1e-15)
    assert np.all((res.recall >= 0) & (res.recall <= 1) & (res.ndcg >= 0) & (res.ndcg <= 1 + 1e-12))


def test_missing_store_entries_raise(rng):
    ds = make_random_dataset(rng, n_users=4, n_items=15)
    us = EmbeddingStore("user", ds.users[:2], np.ones((2, 2)))
    its = EmbeddingStore("item", ds.items, np.ones((15, 2)))
    with pytest.raises(KeyError):
        evaluate_all_rank(us, its, ds, "test")


def test_report_json_shape():
    r = MetricsReport.from_rounds([10], [{"recall@10": 0.2, "ndcg@10": 0.1}, {"recall@10": 0.4, "ndcg@10": 0.3}])
    doc = json.loads(r.to_json())
    assert set(doc) == {"rounds", "mean"}
    assert doc["mean"]["recall@10"] == pytest.approx(0.3)
    assert MetricsReport.from_dict(doc).mean == r.mean


@pytest.fixture(scope="module")
def small_setup():
    rng = np.random.default_rng(5)
    ds = make_random_dataset(rng, n_users=12, n_items=20)
    up, ip = make_profiles(ds.users, 3, rng), make_profiles(ds.items, 3, rng)
    vocab = build_vocab([p for s in (*up.values(), *ip.values()) for p in s.profiles], 50)
    enc = Encoder.create(EncoderConfig(layers=1, hidden=8, heads=2, vocab_size=len(vocab), max_len=8), 0, vocab)
    return ds, up, ip, enc


def test_constant_profiles_give_identical_rounds(small_setup):
    ds, up, ip, enc = small_setup
    const_u = {e: ProfileSet(e, [s.profiles[0]] * 4) for e, s in up.items()}
    const_i = {e: ProfileSet(e, [s.profiles[0]] * 4) for e, s in ip.items()}
    rep = evaluate_multi_profile(enc, const_u, const_i, ds, "test", (10,), t=3)
    assert len(rep.rounds) == 3
    assert all(r == rep.rounds[0] for r in rep.rounds)
    assert rep.mean == pytest.approx(rep.rounds[0], abs=1e-15)


def test_single_round_equals_single_evaluation(small_setup):
    from textrec.retrieval import embed_entities
    ds, up, ip, enc = small_setup
    rep = evaluate_multi_profile(enc, up, ip, ds, "test", (10, 20), t=1)
    direct = evaluate_all_rank(embed_entities(enc, up, 1, "user"), embed_entities(enc, ip, 1, "item"),
                               ds, "test", (10, 20)).mean()
    assert rep.rounds == [direct] and rep.mean == direct
    rep0 = evaluate_multi_profile(enc, up, ip, ds, "test", (10,), t=0)
    assert len(rep0.rounds) == 1
    with pytest.raises(ValueError):
        evaluate_multi_profile(enc, up, ip, ds, "test", (10,), t=4)
