"""Word-level tokenizer producing fixed-length id sequences for the encoder."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

CLS, PAD, MASK, UNK = "[CLS]", "[PAD]", "[MASK]", "[UNK]"
RESERVED = (CLS, PAD, MASK, UNK)
CLS_ID, PAD_ID, MASK_ID, UNK_ID = 0, 1, 2, 3
DEFAULT_MAX_LEN = 512

# word runs, or any single non-space non-word character as its own token
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def normalize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bijective token <-> id map with the four reserved tokens at ids 0..3."""

    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(tokens)
        if tuple(self.itos[:4]) != RESERVED:
            raise ValueError("vocab must start with the reserved tokens " + ", ".join(RESERVED))
        self.stoi: dict[str, int] = {}
        for i, tok in enumerate(self.itos):
            if tok in self.stoi:
                raise ValueError(f"duplicate token {tok!r} in vocab")
            self.stoi[tok] = i

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id_of(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1] if text.endswith("\n") else text.split("\n"))


def build_vocab(corpus_texts: Iterable[str], target_size: int) -> Vocab:
    """Reserved tokens, then the most frequent words (ties broken lexicographically)."""
    if target_size < 5:
        raise ValueError("target_size must be >= 5")
    counts: Counter[str] = Counter()
    for text in corpus_texts:
        counts.update(normalize(text))
    for tok in RESERVED:
        counts.pop(tok.lower(), None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[: target_size - len(RESERVED)]]
    return Vocab(list(RESERVED) + words)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray  # int64, length max_len
    attention_mask: np.ndarray  # int8 {0,1}
    true_len: int


def tokenize(text: str, vocab: Vocab, max_len: int = DEFAULT_MAX_LEN) -> TokenSequence:
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    words = normalize(text)[: max_len - 1]
    ids = np.full(max_len, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1 : 1 + len(words)] = [vocab.id_of(w) for w in words]
    true_len = 1 + len(words)
    mask = np.zeros(max_len, dtype=np.int8)
    mask[:true_len] = 1
    return TokenSequence(ids, mask, true_len)


def tokenize_batch(texts: Iterable[str], vocab: Vocab, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack tokenized texts into (ids, mask) arrays of shape (B, max_len)."""
    seqs = [tokenize(t, vocab, max_len) for t in texts]
    if not seqs:
        return np.zeros((0, max_len), np.int64), np.zeros((0, max_len), np.int8)
    return np.stack([s.ids for s in seqs]), np.stack([s.attention_mask for s in seqs])
