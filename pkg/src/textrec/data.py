"""Corpus loading, rating / k-core filtering and per-user splitting.

On-disk layout of a data directory::

    items.jsonl   {"item_id", "title", "category"?, "description"?, "profiles": [...]}
    users.jsonl   {"user_id", "profiles": [...]}
    train.tsv / val.tsv / test.tsv   user_id<TAB>item_id[<TAB>rating]
    (or all.tsv, split on load)
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLITS = ("train", "val", "test")

Pair = tuple[str, str]


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class RawItemRecord:
    item_id: str
    title: str = ""
    category: str | None = None
    description: str | None = None
    reviews: list[tuple[str, str]] = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        # no description and no reviews: nothing but the title to profile from
        return not self.description and not self.reviews


@dataclass
class ProfileSet:
    entity_id: str
    profiles: list[str]

    def __post_init__(self) -> None:
        if not self.profiles:
            raise DataError(f"{self.entity_id}: profile set is empty")
        for p in self.profiles:
            if not isinstance(p, str) or not p.strip():
                raise DataError(f"{self.entity_id}: empty profile text")

    @property
    def t(self) -> int:
        return len(self.profiles) - 1


class InteractionDataset:
    """Users, items and their train/val/test interactions.

    Neighbor sets are built from the train split only.
    """

    def __init__(self, users: Sequence[str], items: Sequence[str],
                 train: Iterable[Pair] = (), val: Iterable[Pair] = (), test: Iterable[Pair] = ()):
        self.users = list(users)
        self.items = list(items)
        self.user_index = {u: n for n, u in enumerate(self.users)}
        self.item_index = {i: n for n, i in enumerate(self.items)}
        if len(self.user_index) != len(self.users):
            raise DataError("duplicate user id")
        if len(self.item_index) != len(self.items):
            raise DataError("duplicate item id")
        self.splits: dict[str, list[Pair]] = {}
        for name, pairs in zip(SPLITS, (train, val, test)):
            pairs = [(str(u), str(i)) for u, i in pairs]
            seen: set[Pair] = set()
            for u, i in pairs:
                if u not in self.user_index:
                    raise DataError(f"{name}: unknown user id {u!r}")
                if i not in self.item_index:
                    raise DataError(f"{name}: unknown item id {i!r}")
                if (u, i) in seen:
                    raise DataError(f"{name}: duplicate pair ({u!r}, {i!r})")
                seen.add((u, i))
            self.splits[name] = pairs
        self.user_neighbors: dict[str, set[str]] = defaultdict(set)
        self.item_neighbors: dict[str, set[str]] = defaultdict(set)
        for u, i in self.splits["train"]:
            self.user_neighbors[u].add(i)
            self.item_neighbors[i].add(u)

    @property
    def train(self) -> list[Pair]:
        return self.splits["train"]

    @property
    def val(self) -> list[Pair]:
        return self.splits["val"]

    @property
    def test(self) -> list[Pair]:
        return self.splits["test"]

    def relevant(self, split: str) -> dict[str, set[str]]:
        out: dict[str, set[str]] = defaultdict(set)
        for u, i in self.splits[split]:
            out[u].add(i)
        return out

    def train_matrix(self):
        """Binary user x item matrix of the train split (scipy CSR)."""
        import scipy.sparse as sp

        rows = [self.user_index[u] for u, _ in self.train]
        cols = [self.item_index[i] for _, i in self.train]
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(self.users), len(self.items)))


# ---------------------------------------------------------------- filters

def filter_ratings(pairs: Iterable[tuple], min_rating: float) -> list[tuple]:
    """Keep pairs whose rating is strictly above ``min_rating``.

    Pairs without a rating (2-tuples or rating ``None``) are kept.
    """
    out = []
    for p in pairs:
        r = p[2] if len(p) > 2 else None
        if r is None or r > min_rating:
            out.append(p)
    return out


def kcore_filter(pairs: Iterable[tuple], k: int = 10) -> list[tuple]:
    """Largest sub-graph in which every user and item has degree >= k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    uniq: dict[Pair, tuple] = {}
    for p in pairs:
        uniq.setdefault((p[0], p[1]), p)
    alive = set(uniq)
    while True:
        du = Counter(u for u, _ in alive)
        di = Counter(i for _, i in alive)
        drop = {e for e in alive if du[e[0]] < k or di[e[1]] < k}
        if not drop:
            break
        alive -= drop
    return [p for e, p in uniq.items() if e in alive]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_counts(n: int, ratios: Sequence[float]) -> tuple[int, int, int]:
    """(train, val, test) sizes for a user with ``n`` interactions."""
    if n < 3:
        return n, 0, 0
    total = float(sum(ratios))
    n_val = max(1, _round_half_up(n * ratios[1] / total))
    n_test = max(1, _round_half_up(n * ratios[2] / total))
    # keep at least one train interaction
    while n_val + n_test > n - 1:
        if n_val >= n_test and n_val > 1:
            n_val -= 1
        elif n_test > 1:
            n_test -= 1
        else:
            break
    return n - n_val - n_test, n_val, n_test


def split_interactions(pairs: Sequence[tuple], ratios: Sequence[float] = (8, 1, 1),
                       seed: int = 0) -> tuple[list[tuple], list[tuple], list[tuple]]:
    """Per-user random train/val/test partition; input order is kept within each split."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("ratios must be three positive numbers")
    by_user: dict[str, list[int]] = defaultdict(list)
    for idx, p in enumerate(pairs):
        by_user[p[0]].append(idx)
    rng = np.random.default_rng(seed)
    assign = np.zeros(len(pairs), dtype=np.int8)
    for user in sorted(by_user):
        idxs = by_user[user]
        _, n_val, n_test = split_counts(len(idxs), ratios)
        perm = [idxs[j] for j in rng.permutation(len(idxs))]
        for j in perm[:n_val]:
            assign[j] = 1
        for j in perm[n_val:n_val + n_test]:
            assign[j] = 2
    parts: tuple[list, list, list] = ([], [], [])
    for p, a in zip(pairs, assign):
        parts[a].append(p)
    return parts


# ---------------------------------------------------------------- file io

def read_jsonl(path: Path, id_key: str) -> list[dict]:
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or not isinstance(rec.get(id_key), str) or not rec[id_key]:
                raise DataError(f"{path}:{lineno}: missing or empty {id_key!r}")
            if rec[id_key] in seen:
                raise DataError(f"{path}:{lineno}: duplicate {id_key} {rec[id_key]!r}")
            seen.add(rec[id_key])
            records.append(rec)
    return records


def read_interactions(path: str | Path) -> list[tuple[str, str, float | None]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (2, 3) or not fields[0] or not fields[1]:
                raise DataError(f"{path}:{lineno}: expected user_id<TAB>item_id[<TAB>rating]")
            rating = None
            if len(fields) == 3 and fields[2] != "":
                try:
                    rating = float(fields[2])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: rating {fields[2]!r} is not numeric") from None
            out.append((fields[0], fields[1], rating))
    return out


def write_interactions(path: str | Path, pairs: Iterable[tuple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fields = [p[0], p[1]] + ([_fmt_rating(p[2])] if len(p) > 2 and p[2] is not None else [])
            fh.write("\t".join(fields) + "\n")


def _fmt_rating(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else repr(float(r))


def _profile_set(rec: dict, id_key: str, path: Path) -> ProfileSet | None:
    profiles = rec.get("profiles")
    if profiles is None:
        return None
    if not isinstance(profiles, list):
        raise DataError(f"{path}: {rec[id_key]!r}: 'profiles' must be a list")
    return ProfileSet(rec[id_key], list(profiles))


@dataclass
class Corpus:
    items: list[RawItemRecord]
    item_profiles: dict[str, ProfileSet]
    user_profiles: dict[str, ProfileSet]
    dataset: InteractionDataset


def load_corpus(items_path: str | Path, users_path: str | Path,
                interactions_paths: dict[str, str | Path] | None = None) -> Corpus:
    """Load items, users and train/val/test interaction files into one cross-checked corpus."""
    items_path, users_path = Path(items_path), Path(users_path)
    item_recs = read_jsonl(items_path, "item_id")
    user_recs = read_jsonl(users_path, "user_id")
    items = []
    item_profiles: dict[str, ProfileSet] = {}
    for rec in item_recs:
        reviews = [tuple(r) for r in rec.get("reviews", [])]
        items.append(RawItemRecord(rec["item_id"], rec.get("title", ""), rec.get("category"),
                                   rec.get("description"), reviews))
        ps = _profile_set(rec, "item_id", items_path)
        if ps is not None:
            item_profiles[ps.entity_id] = ps
    user_profiles: dict[str, ProfileSet] = {}
    for rec in user_recs:
        ps = _profile_set(rec, "user_id", users_path)
        if ps is not None:
            user_profiles[ps.entity_id] = ps
    splits: dict[str, list[Pair]] = {s: [] for s in SPLITS}
    for name, path in (interactions_paths or {}).items():
        if name not in splits:
            raise DataError(f"unknown split {name!r}")
        splits[name] = [(u, i) for u, i, _ in read_interactions(path)]
    dataset = InteractionDataset([r["user_id"] for r in user_recs], [r.item_id for r in items],
                                 splits["train"], splits["val"], splits["test"])
    return Corpus(items, item_profiles, user_profiles, dataset)


def load_data_dir(data_dir: str | Path, ratios: Sequence[float] = (8, 1, 1), seed: int = 0,
                  min_rating: float | None = None, kcore: int | None = None) -> Corpus:
    """Load a data directory; ``all.tsv`` is filtered and split when split files are absent."""
    d = Path(data_dir)
    split_paths = {s: d / f"{s}.tsv" for s in SPLITS if (d / f"{s}.tsv").exists()}
    if split_paths:
        return load_corpus(d / "items.jsonl", d / "users.jsonl", split_paths)
    corpus = load_corpus(d / "items.jsonl", d / "users.jsonl", {})
    if (d / "all.tsv").exists():
        pairs = prepare_pairs(read_interactions(d / "all.tsv"), min_rating, kcore)
        train, val, test = split_interactions(pairs, ratios, seed)
        ds = corpus.dataset
        corpus.dataset = InteractionDataset(ds.users, ds.items, [p[:2] for p in train],
                                            [p[:2] for p in val], [p[:2] for p in test])
    return corpus


def prepare_pairs(raw: list[tuple], min_rating: float | None, kcore: int | None) -> list[tuple]:
    """Rating filter first, then k-core."""
    pairs = filter_ratings(raw, min_rating) if min_rating is not None else list(raw)
    if kcore:
        pairs = kcore_filter(pairs, kcore)
    return pairs


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")
