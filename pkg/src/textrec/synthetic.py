"""Planted-topic synthetic corpora.

Every topic owns a disjoint pool of words. Items draw profile words from
their topic pool; users draw from the pools of the items they interacted with
in the train split. Diversified profiles are independent re-draws from the
same pools, a cheap stand-in for LLM rephrasing.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Corpus, InteractionDataset, ProfileSet, RawItemRecord, split_interactions, write_interactions, write_jsonl

FILLER = ("the", "a", "this", "user", "item", "enjoys", "likes", "with", "and", "for", "of", "great", "product",
          "quality", "often", "prefers")


@dataclass
class SyntheticSpec:
    topics: int = 16
    users_per_topic: int = 40
    items_per_topic: int = 30
    words_per_topic: int = 24
    interactions_per_user: int = 10
    noise: float = 0.1
    seed: int = 0
    profile_words: int = 10
    filler_words: int = 4
    diversified: int = 3
    ratios: tuple[float, float, float] = (8, 1, 1)
    popularity: str = "uniform"

    def __post_init__(self) -> None:
        for name in ("topics", "users_per_topic", "items_per_topic", "words_per_topic",
                     "interactions_per_user", "profile_words"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.noise < 1.0:
            raise ValueError("noise must be in [0, 1)")
        if self.popularity not in ("uniform", "power"):
            raise ValueError("popularity must be 'uniform' or 'power'")
        if self.noise > 0 and self.topics < 2:
            raise ValueError("cross-topic noise needs at least two topics")
        self.ratios = tuple(self.ratios)


@dataclass
class SyntheticCorpus:
    spec: SyntheticSpec
    corpus: Corpus
    user_topic: dict[str, int]
    item_topic: dict[str, int]
    word_pools: list[list[str]] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> None:
        write_synthetic(self, out_dir)


def topic_words(topic: int, n: int) -> list[str]:
    return [f"t{topic}w{j}" for j in range(n)]


def _profile(rng: np.random.Generator, pools: list[list[str]], topics_src: list[int], spec: SyntheticSpec) -> str:
    words = [pools[topics_src[int(rng.integers(len(topics_src)))]][int(rng.integers(spec.words_per_topic))]
             for _ in range(spec.profile_words)]
    words += [FILLER[int(rng.integers(len(FILLER)))] for _ in range(spec.filler_words)]
    return " ".join(words[j] for j in rng.permutation(len(words)))


def profile_for_topic(topic: int, spec: SyntheticSpec, rng: np.random.Generator) -> str:
    pools = [topic_words(k, spec.words_per_topic) for k in range(spec.topics)]
    return _profile(rng, pools, [topic], spec)


def generate(spec: SyntheticSpec) -> SyntheticCorpus:
    rng = np.random.default_rng(spec.seed)
    T = spec.topics
    pools = [topic_words(k, spec.words_per_topic) for k in range(T)]
    items = [f"i{n:05d}" for n in range(T * spec.items_per_topic)]
    users = [f"u{n:05d}" for n in range(T * spec.users_per_topic)]
    item_topic = {i: n // spec.items_per_topic for n, i in enumerate(items)}
    user_topic = {u: n // spec.users_per_topic for n, u in enumerate(users)}
    by_topic = [items[k * spec.items_per_topic:(k + 1) * spec.items_per_topic] for k in range(T)]
    if spec.popularity == "power":
        w = 1.0 / np.arange(1, spec.items_per_topic + 1)
        weights = w / w.sum()
    else:
        weights = None

    pairs: list[tuple[str, str]] = []
    for u in users:
        k = user_topic[u]
        noisy = rng.random(spec.interactions_per_user) < spec.noise
        n_same = min(int((~noisy).sum()), spec.items_per_topic)
        same = rng.choice(spec.items_per_topic, size=n_same, replace=False, p=weights)
        pairs.extend((u, by_topic[k][j]) for j in same)
        if noisy.any():
            others = [i for kk in range(T) if kk != k for i in by_topic[kk]]
            cross = rng.choice(len(others), size=min(int(noisy.sum()), len(others)), replace=False)
            pairs.extend((u, others[j]) for j in cross)
    train, val, test = split_interactions(pairs, spec.ratios, spec.seed)

    item_profiles = {}
    for i in items:
        profs = [_profile(rng, pools, [item_topic[i]], spec) for _ in range(spec.diversified + 1)]
        item_profiles[i] = ProfileSet(i, profs)
    train_topics: dict[str, list[int]] = {u: [] for u in users}
    for u, i in train:
        train_topics[u].append(item_topic[i])
    user_profiles = {}
    for u in users:
        src = train_topics[u] or [user_topic[u]]
        user_profiles[u] = ProfileSet(u, [_profile(rng, pools, src, spec) for _ in range(spec.diversified + 1)])

    records = [RawItemRecord(i, title=f"item {i}", category=f"topic{item_topic[i]}") for i in items]
    dataset = InteractionDataset(users, items, train, val, test)
    return SyntheticCorpus(spec, Corpus(records, item_profiles, user_profiles, dataset), user_topic, item_topic, pools)


def write_synthetic(sc: SyntheticCorpus, out_dir: str | Path) -> None:
    """Write the corpus in the standard data-directory layout."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    c = sc.corpus
    write_jsonl(d / "items.jsonl", ({"item_id": r.item_id, "title": r.title, "category": r.category,
                                     "profiles": c.item_profiles[r.item_id].profiles} for r in c.items))
    write_jsonl(d / "users.jsonl", ({"user_id": u, "profiles": c.user_profiles[u].profiles}
                                    for u in c.dataset.users))
    for name in ("train", "val", "test"):
        write_interactions(d / f"{name}.tsv", c.dataset.splits[name])
    write_jsonl(d / "topics.jsonl", [{"spec": {k: list(v) if isinstance(v, tuple) else v
                                               for k, v in asdict(sc.spec).items()},
                                      "user_topic": sc.user_topic, "item_topic": sc.item_topic}])


def nearest_topic(text: str, spec: SyntheticSpec) -> int:
    """Bag-of-words topic classifier: the topic whose pool covers the most words of ``text``."""
    counts = np.zeros(spec.topics)
    for w in text.split():
        if w.startswith("t") and "w" in w:
            head = w[1:w.index("w")]
            if head.isdigit() and int(head) < spec.topics:
                counts[int(head)] += 1
    return int(np.argmax(counts))
