"""Pure numpy implementations of the ranking kernels.

Must stay result-identical to ``_ckernels.pyx``; tests run both.
"""

from __future__ import annotations

import math

import numpy as np


def topk_excluding(scores, excl_indptr, excl_indices, tie_rank, k):
    """Per-row top-k column indices by (score desc, tie_rank asc), skipping
    each row's excluded columns. Returns (top[U, k], counts[U]); unused slots are -1."""
    scores = np.asarray(scores, dtype=np.float64)
    U, I = scores.shape
    top = np.full((U, k), -1, dtype=np.int64)
    counts = np.zeros(U, dtype=np.int64)
    keep = np.ones(I, dtype=bool)
    for u in range(U):
        ex = excl_indices[excl_indptr[u]:excl_indptr[u + 1]]
        keep[ex] = False
        cand = np.flatnonzero(keep)
        keep[ex] = True
        s = scores[u, cand]
        if k < len(cand):
            kth = np.partition(-s, k - 1)[k - 1]
            sel = -s <= kth
            cand, s = cand[sel], s[sel]
        order = np.lexsort((tie_rank[cand], -s))[:k]
        counts[u] = len(order)
        top[u, : len(order)] = cand[order]
    return top, counts


def rank_metrics(top, counts, rel_indptr, rel_indices, ks):
    """Recall@k and NDCG@k per row for each cutoff in ``ks``."""
    U = top.shape[0]
    ks = np.asarray(ks, dtype=np.int64)
    recall = np.zeros((U, len(ks)))
    ndcg = np.zeros((U, len(ks)))
    for u in range(U):
        rel = set(rel_indices[rel_indptr[u]:rel_indptr[u + 1]].tolist())
        n_rel = len(rel)
        row = top[u, : counts[u]]
        for j, k in enumerate(ks):
            hits = 0
            dcg = 0.0
            for r, item in enumerate(row[:k].tolist(), start=1):
                if item in rel:
                    hits += 1
                    dcg += 1.0 / math.log2(r + 1)
            idcg = 0.0
            for r in range(1, min(int(k), n_rel) + 1):
                idcg += 1.0 / math.log2(r + 1)
            recall[u, j] = hits / n_rel
            ndcg[u, j] = dcg / idcg
    return recall, ndcg
