"""All-rank Recall@N / NDCG@N evaluation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .data import InteractionDataset, ProfileSet
from .retrieval import EmbeddingStore, embed_entities, exclusion_csr, score_matrix, tie_ranks

DEFAULT_NS = (10, 20)


def recall_at_k(ranked_ids: Sequence, relevant: set, k: int) -> float:
    if not relevant:
        raise ValueError("relevant set is empty")
    return len(set(ranked_ids[:k]) & relevant) / len(relevant)


def ndcg_at_k(ranked_ids: Sequence, relevant: set, k: int) -> float:
    if not relevant:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / math.log2(r + 1) for r, item in enumerate(ranked_ids[:k], 1) if item in relevant)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


def metric_keys(ns: Iterable[int]) -> list[str]:
    ns = list(ns)
    return [f"recall@{n}" for n in ns] + [f"ndcg@{n}" for n in ns]


@dataclass
class AllRankResult:
    users: list[str]
    ns: list[int]
    recall: np.ndarray  # (users, len(ns))
    ndcg: np.ndarray

    def mean(self) -> dict[str, float]:
        out = {}
        for j, n in enumerate(self.ns):
            out[f"recall@{n}"] = float(self.recall[:, j].mean()) if len(self.users) else 0.0
        for j, n in enumerate(self.ns):
            out[f"ndcg@{n}"] = float(self.ndcg[:, j].mean()) if len(self.users) else 0.0
        return out


def evaluate_all_rank(user_store: EmbeddingStore, item_store: EmbeddingStore, dataset: InteractionDataset,
                      split: str = "test", ns: Sequence[int] = DEFAULT_NS, scorer: str = "cosine",
                      chunk: int = 1024) -> AllRankResult:
    """Rank every item except the user's train items; users with nothing relevant are skipped."""
    ns = sorted(int(n) for n in ns)
    if not ns or ns[0] < 1:
        raise ValueError("cutoffs must be >= 1")
    relevant = dataset.relevant(split)
    users = [u for u in dataset.users if relevant.get(u)]
    for u in users:
        if u not in user_store.index:
            raise KeyError(f"user {u!r} missing from the user store")
    for i in dataset.items:
        if i not in item_store.index:
            raise KeyError(f"item {i!r} missing from the item store")
    ties = tie_ranks(item_store.ids)
    recall = np.zeros((len(users), len(ns)))
    ndcg = np.zeros((len(users), len(ns)))
    kmax = ns[-1]
    for start in range(0, len(users), chunk):
        batch = users[start:start + chunk]
        rows = user_store.matrix[[user_store.index[u] for u in batch]]
        scores = score_matrix(rows, item_store, scorer)
        ex_ptr, ex_idx = exclusion_csr(batch, item_store.index, dataset.user_neighbors)
        top, counts = kernels.topk_excluding(scores, ex_ptr, ex_idx, ties, kmax)
        rel_ptr, rel_idx = exclusion_csr(batch, item_store.index, relevant)
        r, g = kernels.rank_metrics(top, counts, rel_ptr, rel_idx, np.asarray(ns))
        recall[start:start + len(batch)] = r
        ndcg[start:start + len(batch)] = g
    return AllRankResult(users, ns, recall, ndcg)


@dataclass
class MetricsReport:
    ns: list[int]
    rounds: list[dict[str, float]]
    mean: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_rounds(cls, ns: Sequence[int], rounds: list[dict[str, float]]) -> "MetricsReport":
        if not rounds:
            raise ValueError("no rounds")
        keys = list(rounds[0])
        mean = {k: float(sum(r[k] for r in rounds) / len(rounds)) for k in keys}
        return cls(list(ns), rounds, mean)

    def to_dict(self) -> dict:
        return {"rounds": self.rounds, "mean": self.mean}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MetricsReport":
        rounds = [dict(r) for r in doc["rounds"]]
        ns = sorted({int(k.split("@")[1]) for k in doc["mean"]})
        return cls(ns, rounds, dict(doc["mean"]))


def evaluate_multi_profile(encoder, user_profiles: Mapping[str, ProfileSet], item_profiles: Mapping[str, ProfileSet],
                           dataset: InteractionDataset, split: str = "test", ns: Sequence[int] = DEFAULT_NS,
                           t: int = 3, include_original: bool = False, batch_size: int = 64) -> MetricsReport:
    """Average all-rank metrics over rounds that pair profile j of users with profile j of items.

    Rounds run over j = 1..t (plus j = 0 with ``include_original``); ``t = 0``
    evaluates the original profiles only.
    """
    rounds_idx = list(range(1, t + 1))
    if include_original or t == 0:
        rounds_idx = [0] + rounds_idx
    relevant_users = [u for u in dataset.users if dataset.relevant(split).get(u)]
    for kind, ids, sets in (("user", relevant_users, user_profiles), ("item", dataset.items, item_profiles)):
        for e in ids:
            if e not in sets or len(sets[e].profiles) < rounds_idx[-1] + 1:
                raise ValueError(f"{kind} {e!r} has fewer than {rounds_idx[-1]} diversified profiles")
    rounds = []
    for j in rounds_idx:
        us = embed_entities(encoder, user_profiles, j, "user", relevant_users, batch_size)
        its = embed_entities(encoder, item_profiles, j, "item", dataset.items, batch_size)
        rounds.append(evaluate_all_rank(us, its, dataset, split, ns).mean())
    return MetricsReport.from_rounds(sorted(ns), rounds)
