from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..data import InteractionDataset, ProfileSet
from ..tokenizer import MASK_ID, RESERVED, Vocab, tokenize_batch

MAX_NEG_RETRIES = 64


def sample_profile(profile_set: ProfileSet, rng: np.random.Generator, t: int | None = None) -> str:
    """Uniform draw among the original and the first ``t`` diversified profiles (all when None)."""
    n = len(profile_set.profiles) if t is None else min(t + 1, len(profile_set.profiles))
    return profile_set.profiles[int(rng.integers(n))]


def sample_negative(user: str, dataset: InteractionDataset, rng: np.random.Generator) -> str:
    """Uniform item outside the user's train neighbors."""
    seen = dataset.user_neighbors.get(user, set())
    items = dataset.items
    for _ in range(MAX_NEG_RETRIES):
        cand = items[int(rng.integers(len(items)))]
        if cand not in seen:
            return cand
    pool = [i for i in items if i not in seen]
    if not pool:
        raise ValueError(f"user {user!r} has interacted with every item; no negative available")
    return pool[int(rng.integers(len(pool)))]


@dataclass
class TripletBatch:
    users: list[str]
    pos: list[str]
    neg: list[str]
    ids: np.ndarray  # (3B, max_len): users, then positives, then negatives
    mask: np.ndarray

    @property
    def size(self) -> int:
        return len(self.users)


def sample_batch(dataset: InteractionDataset, user_profiles: Mapping[str, ProfileSet],
                 item_profiles: Mapping[str, ProfileSet], batch_size: int, rng: np.random.Generator,
                 vocab: Vocab, max_len: int, profile_t: int | None = None,
                 min_batch: int = 2) -> TripletBatch:
    """Draw (user, positive, negative) triplets with one sampled profile per entity, tokenized."""
    if batch_size < min_batch:
        raise ValueError(f"batch size must be >= {min_batch}")
    train = dataset.train
    if not train:
        raise ValueError("train split is empty")
    users, pos, neg, texts_u, texts_p, texts_n = [], [], [], [], [], []
    for _ in range(batch_size):
        u, i = train[int(rng.integers(len(train)))]
        j = sample_negative(u, dataset, rng)
        users.append(u)
        pos.append(i)
        neg.append(j)
        texts_u.append(sample_profile(user_profiles[u], rng, profile_t))
        texts_p.append(sample_profile(item_profiles[i], rng, profile_t))
        texts_n.append(sample_profile(item_profiles[j], rng, profile_t))
    ids, mask = tokenize_batch(texts_u + texts_p + texts_n, vocab, max_len)
    return TripletBatch(users, pos, neg, ids, mask)


def mlm_mask(ids, mask, ratio: float, rng: np.random.Generator, vocab_size: int,
             convention: str = "bert"):
    """Select maskable positions with probability ``ratio`` and corrupt them.

    Reserved tokens ([CLS], [PAD], [MASK], [UNK]) are never selected. With the
    ``"bert"`` convention a selected token becomes [MASK] 80% of the time, a
    random word 10% and stays unchanged 10%; ``"mask"`` always uses [MASK].
    Returns (masked ids, selected (row, col) index arrays, original labels).
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError("mask ratio must be in [0, 1)")
    ids = np.asarray(ids)
    eligible = (np.asarray(mask) > 0) & (ids >= len(RESERVED))
    selected = eligible & (rng.random(ids.shape) < ratio)
    rows, cols = np.nonzero(selected)
    labels = ids[rows, cols].copy()
    out = ids.copy()
    if convention == "mask":
        out[rows, cols] = MASK_ID
    elif convention == "bert":
        r = rng.random(len(rows))
        to_mask = r < 0.8
        to_rand = (r >= 0.8) & (r < 0.9)
        out[rows[to_mask], cols[to_mask]] = MASK_ID
        if vocab_size > len(RESERVED):
            out[rows[to_rand], cols[to_rand]] = rng.integers(len(RESERVED), vocab_size, size=int(to_rand.sum()))
    else:
        raise ValueError(f"unknown mask convention {convention!r}")
    return out, (rows, cols), labels
