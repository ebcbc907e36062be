import json

import numpy as np
import pytest

from textrec.data import load_data_dir
from textrec.synthetic import SyntheticSpec, generate, nearest_topic


def _all_pairs(ds):
    return ds.train + ds.val + ds.test


def test_noise_zero_has_no_cross_topic_edges():
    sc = generate(SyntheticSpec(topics=4, users_per_topic=10, items_per_topic=12, noise=0.0))
    assert all(sc.user_topic[u] == sc.item_topic[i] for u, i in _all_pairs(sc.corpus.dataset))


def test_cross_topic_fraction_matches_noise():
    spec = SyntheticSpec(topics=10, users_per_topic=100, items_per_topic=30, interactions_per_user=10, noise=0.1,
                         diversified=0, seed=3)
    sc = generate(spec)
    pairs = _all_pairs(sc.corpus.dataset)
    assert len(pairs) == 10_000
    frac = np.mean([sc.user_topic[u] != sc.item_topic[i] for u, i in pairs])
    assert abs(frac - 0.1) <= 0.02


def test_generation_is_deterministic():
    a = generate(SyntheticSpec(topics=3, users_per_topic=5, items_per_topic=8, seed=9))
    b = generate(SyntheticSpec(topics=3, users_per_topic=5, items_per_topic=8, seed=9))
    assert a.corpus.dataset.splits == b.corpus.dataset.splits
    assert a.corpus.user_profiles == b.corpus.user_profiles and a.corpus.item_profiles == b.corpus.item_profiles
    c = generate(SyntheticSpec(topics=3, users_per_topic=5, items_per_topic=8, seed=10))
    assert c.corpus.item_profiles != a.corpus.item_profiles


def test_profiles_carry_topic_signal():
    spec = SyntheticSpec(topics=5, users_per_topic=6, items_per_topic=10, noise=0.0, diversified=3)
    sc = generate(spec)
    for i, ps in sc.corpus.item_profiles.items():
        assert ps.t == 3
        assert all(nearest_topic(p, spec) == sc.item_topic[i] for p in ps.profiles)
    for u, ps in sc.corpus.user_profiles.items():
        assert all(nearest_topic(p, spec) == sc.user_topic[u] for p in ps.profiles)


def test_power_popularity_skews_counts():
    spec = SyntheticSpec(topics=2, users_per_topic=200, items_per_topic=20, interactions_per_user=3, noise=0.0,
                         popularity="power")
    sc = generate(spec)
    counts = {}
    for _, i in _all_pairs(sc.corpus.dataset):
        counts[i] = counts.get(i, 0) + 1
    assert counts.get("i00000", 0) > 3 * counts.get("i00019", 0)


def test_written_layout_loads_back(tmp_path):
    sc = generate(SyntheticSpec(topics=2, users_per_topic=4, items_per_topic=6, seed=2))
    sc.write(tmp_path)
    for name in ("items.jsonl", "users.jsonl", "train.tsv", "val.tsv", "test.tsv", "topics.jsonl"):
        assert (tmp_path / name).is_file()
    corpus = load_data_dir(tmp_path)
    assert corpus.dataset.splits == sc.corpus.dataset.splits
    assert corpus.item_profiles == sc.corpus.item_profiles
    meta = json.loads((tmp_path / "topics.jsonl").read_text())
    assert meta["item_topic"] == sc.item_topic


@pytest.mark.parametrize("kw", [dict(noise=1.0), dict(topics=0), dict(topics=1, noise=0.2),
                                dict(popularity="zipf")])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        SyntheticSpec(**kw)
