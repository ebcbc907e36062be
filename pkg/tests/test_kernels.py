import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from textrec import kernels
from conftest import BACKENDS


def topk_oracle(scores, excl, ties, k):
    out = []
    for u in range(scores.shape[0]):
        cand = [j for j in range(scores.shape[1]) if j not in excl[u]]
        cand.sort(key=lambda j: (-scores[u, j], ties[j]))
        out.append(cand[:k])
    return out


def to_csr(sets):
    indptr, idx = [0], []
    for s in sets:
        idx += sorted(s)
        indptr.append(len(idx))
    return np.array(indptr, dtype=np.int64), np.array(idx, dtype=np.int64)


def metrics_oracle(row, rel, k):
    hits = [r for r, j in enumerate(row[:k], 1) if j in rel]
    dcg = sum(1 / math.log2(r + 1) for r in hits)
    idcg = sum(1 / math.log2(r + 1) for r in range(1, min(k, len(rel)) + 1))
    return len(hits) / len(rel), dcg / idcg


@pytest.mark.parametrize("backend", BACKENDS)
@given(data=st.data())
def test_topk_and_metrics_match_oracle(backend, data):
    mod = kernels.get_backend(backend)
    U = data.draw(st.integers(1, 6))
    I = data.draw(st.integers(1, 40))
    k = data.draw(st.integers(1, 45))
    seed = data.draw(st.integers(0, 2 ** 31))
    rng = np.random.default_rng(seed)
    # coarse scores force many ties
    scores = rng.integers(0, 5, size=(U, I)).astype(np.float64)
    ties = rng.permutation(I).astype(np.int64)
    excl = [set(rng.choice(I, size=int(rng.integers(0, I)), replace=False).tolist()) for _ in range(U)]
    top, counts = mod.topk_excluding(scores, *to_csr(excl), ties, k)
    oracle = topk_oracle(scores, excl, ties, k)
    for u in range(U):
        assert top[u, : counts[u]].tolist() == oracle[u]
        assert np.all(top[u, counts[u]:] == -1)
    rel = [set(rng.choice(I, size=int(rng.integers(1, I + 1)), replace=False).tolist()) for _ in range(U)]
    ks = np.array(sorted(set(data.draw(st.lists(st.integers(1, 45), min_size=1, max_size=3)))))
    rec, ndcg = mod.rank_metrics(top, counts, *to_csr(rel), ks)
    for u in range(U):
        for j, kk in enumerate(ks):
            r_o, n_o = metrics_oracle(oracle[u], rel[u], int(kk))
            assert rec[u, j] == r_o
            assert abs(ndcg[u, j] - n_o) <= 1e-12


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_bitwise_identical():
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    rng = np.random.default_rng(0)
    for _ in range(50):
        U, I, k = int(rng.integers(1, 20)), int(rng.integers(1, 300)), int(rng.integers(1, 50))
        scores = rng.standard_normal((U, I))
        scores[:, ::3] = 0.5
        ties = rng.permutation(I).astype(np.int64)
        ex = to_csr([set(rng.choice(I, size=int(rng.integers(0, I)), replace=False).tolist()) for _ in range(U)])
        rel = to_csr([set(rng.choice(I, size=int(rng.integers(1, I + 1)), replace=False).tolist()) for _ in range(U)])
        a = py.topk_excluding(scores, *ex, ties, k)
        b = cy.topk_excluding(scores, *ex, ties, k)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        ks = np.array([1, 5, 10, 20])
        ra = py.rank_metrics(a[0], a[1], *rel, ks)
        rb = cy.rank_metrics(b[0], b[1], *rel, ks)
        assert ra[0].tobytes() == rb[0].tobytes() and ra[1].tobytes() == rb[1].tobytes()


def test_backend_selection():
    assert kernels.BACKEND in ("python", "cython")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
