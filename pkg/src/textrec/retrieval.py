"""Frozen embedding stores and exact cosine top-k recommendation."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels
from .data import ProfileSet
from .encoder import Encoder
from .tokenizer import tokenize_batch

MAGIC = b"EZEM"
VERSION = 1
KINDS = ("user", "item")


class EmbeddingStore:
    """Rows of ``matrix`` aligned with ``ids``."""

    def __init__(self, kind: str, ids: Sequence[str], matrix):
        if kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        matrix = np.asarray(matrix)
        if matrix.ndim != 2 or matrix.shape[0] != len(ids):
            raise ValueError("matrix must have one row per id")
        self.kind = kind
        self.ids = list(ids)
        self.index = {e: n for n, e in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise ValueError("duplicate ids in store")
        self.matrix = matrix
        self._unit = None

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, entity_id: str) -> np.ndarray:
        try:
            return self.matrix[self.index[entity_id]]
        except KeyError:
            raise KeyError(f"{self.kind} {entity_id!r} not in store") from None

    def unit_rows(self) -> np.ndarray:
        """Rows scaled to unit length (float64); zero rows are rejected."""
        if self._unit is None:
            m = self.matrix.astype(np.float64)
            norms = np.linalg.norm(m, axis=1, keepdims=True)
            if len(m) and not np.all(norms > 0):
                bad = self.ids[int(np.flatnonzero(norms[:, 0] <= 0)[0])]
                raise ValueError(f"{self.kind} {bad!r} has a zero embedding")
            self._unit = m / norms
        return self._unit

    def scaled(self, factor: float) -> "EmbeddingStore":
        return EmbeddingStore(self.kind, self.ids, self.matrix * factor)

    def save(self, path: str | Path) -> None:
        m = np.ascontiguousarray(self.matrix, dtype="<f4")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IBII", VERSION, KINDS.index(self.kind), len(self.ids), self.dim))
            for n, eid in enumerate(self.ids):
                raw = eid.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(m[n].tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingStore":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise ValueError(f"{path}: bad magic")
        version, kind, count, dim = struct.unpack_from("<IBII", data, 4)
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        off = 4 + struct.calcsize("<IBII")
        ids, rows = [], np.empty((count, dim), dtype=np.float32)
        for n in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            ids.append(data[off:off + ln].decode("utf-8"))
            off += ln
            rows[n] = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
            off += 4 * dim
        if off != len(data):
            raise ValueError(f"{path}: trailing bytes")
        return cls(KINDS[kind], ids, rows)


@dataclass
class RankedList:
    user_id: str
    items: list[str]
    scores: list[float]


SCORE_GRID = 2.0 ** 32


def score(u_row, i_row) -> float:
    """Cosine similarity of two non-zero vectors."""
    u = np.asarray(u_row, dtype=np.float64)
    v = np.asarray(i_row, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(u @ v / (nu * nv))


def tie_ranks(ids: Sequence[str]) -> np.ndarray:
    """Position of each id in ascending UTF-8 byte order."""
    order = sorted(range(len(ids)), key=lambda n: ids[n].encode("utf-8"))
    rank = np.empty(len(ids), dtype=np.int64)
    rank[order] = np.arange(len(ids))
    return rank


def exclusion_csr(user_ids: Sequence[str], item_index: Mapping[str, int],
                  exclusions: Mapping[str, Iterable[str]] | None):
    indptr = [0]
    indices: list[int] = []
    for u in user_ids:
        ex = sorted(item_index[i] for i in (exclusions or {}).get(u, ()) if i in item_index)
        indices.extend(ex)
        indptr.append(len(indices))
    return np.asarray(indptr, dtype=np.int64), np.asarray(indices, dtype=np.int64)


def score_matrix(user_rows, item_store: EmbeddingStore, scorer: str = "cosine") -> np.ndarray:
    if scorer == "cosine":
        u = np.asarray(user_rows, dtype=np.float64)
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        if not np.all(norms > 0):
            raise ValueError("zero user embedding")
        cos = (u / norms) @ item_store.unit_rows().T
        # snap to a grid far below float32 resolution so that scores equal up to
        # float64 roundoff (e.g. parallel rows) tie exactly and fall to the id order
        return np.round(cos * SCORE_GRID) / SCORE_GRID
    if scorer == "dot":
        return np.asarray(user_rows, dtype=np.float64) @ item_store.matrix.astype(np.float64).T
    raise ValueError(f"unknown scorer {scorer!r}")


def recommend(user_id: str, k: int, user_store: EmbeddingStore, item_store: EmbeddingStore,
              exclusions: Iterable[str] = (), scorer: str = "cosine") -> RankedList:
    """Exact top-k items by score, skipping ``exclusions``; ties go to the smaller item id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if user_id not in user_store.index:
        raise KeyError(f"unknown user {user_id!r}")
    return recommend_vector(user_store.row(user_id), k, item_store, exclusions, scorer, user_id)


def recommend_vector(vec, k: int, item_store: EmbeddingStore, exclusions: Iterable[str] = (),
                     scorer: str = "cosine", user_id: str = "") -> RankedList:
    scores = score_matrix(np.asarray(vec)[None], item_store, scorer)
    indptr, indices = exclusion_csr([user_id], item_store.index, {user_id: exclusions})
    top, counts = kernels.topk_excluding(scores, indptr, indices, tie_ranks(item_store.ids), k)
    sel = top[0, : counts[0]]
    return RankedList(user_id, [item_store.ids[j] for j in sel], scores[0, sel].tolist())


def embed_entities(encoder: Encoder, profile_sets: Mapping[str, ProfileSet], profile_index: int = 0,
                   kind: str = "item", ids: Sequence[str] | None = None, batch_size: int = 64) -> EmbeddingStore:
    """Encode profile ``profile_index`` of every entity in inference mode."""
    if encoder.vocab is None:
        raise ValueError("encoder has no vocabulary attached")
    ids = list(profile_sets) if ids is None else list(ids)
    texts = []
    for e in ids:
        if e not in profile_sets:
            raise KeyError(f"{kind} {e!r} has no profiles")
        ps = profile_sets[e]
        if not 0 <= profile_index < len(ps.profiles):
            raise IndexError(f"{kind} {e!r} has no profile {profile_index} (t={ps.t})")
        texts.append(ps.profiles[profile_index])
    return EmbeddingStore(kind, ids, encode_texts(encoder, texts, batch_size))


def encode_texts(encoder: Encoder, texts: Sequence[str], batch_size: int = 64) -> np.ndarray:
    out = np.zeros((len(texts), encoder.config.out_dim), dtype=np.float32)
    for start in range(0, len(texts), batch_size):
        ids, mask = tokenize_batch(texts[start:start + batch_size], encoder.vocab, encoder.config.max_len)
        out[start:start + len(ids)] = encoder.encode(ids, mask)
    return out
