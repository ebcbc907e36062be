# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ranking kernels; same contracts as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log2

cnp.import_array()


cdef inline bint _worse(double sa, long long ta, double sb, long long tb) nogil:
    # True when candidate a ranks below candidate b
    return sa < sb or (sa == sb and ta > tb)


cdef void _sift_down(double* hs, long long* ht, long long* hi, Py_ssize_t n, Py_ssize_t pos) nogil:
    cdef Py_ssize_t child, right
    cdef double s
    cdef long long t, i
    while True:
        child = 2 * pos + 1
        if child >= n:
            break
        right = child + 1
        if right < n and _worse(hs[right], ht[right], hs[child], ht[child]):
            child = right
        if _worse(hs[child], ht[child], hs[pos], ht[pos]):
            s = hs[pos]; hs[pos] = hs[child]; hs[child] = s
            t = ht[pos]; ht[pos] = ht[child]; ht[child] = t
            i = hi[pos]; hi[pos] = hi[child]; hi[child] = i
            pos = child
        else:
            break


cdef void _sift_up(double* hs, long long* ht, long long* hi, Py_ssize_t pos) nogil:
    cdef Py_ssize_t parent
    cdef double s
    cdef long long t, i
    while pos > 0:
        parent = (pos - 1) // 2
        if _worse(hs[pos], ht[pos], hs[parent], ht[parent]):
            s = hs[pos]; hs[pos] = hs[parent]; hs[parent] = s
            t = ht[pos]; ht[pos] = ht[parent]; ht[parent] = t
            i = hi[pos]; hi[pos] = hi[parent]; hi[parent] = i
            pos = parent
        else:
            break


def topk_excluding(scores, excl_indptr, excl_indices, tie_rank, Py_ssize_t k):
    cdef double[:, ::1] S = np.ascontiguousarray(scores, dtype=np.float64)
    cdef long long[::1] eptr = np.ascontiguousarray(excl_indptr, dtype=np.int64)
    cdef long long[::1] eidx = np.ascontiguousarray(excl_indices, dtype=np.int64)
    cdef long long[::1] tr = np.ascontiguousarray(tie_rank, dtype=np.int64)
    cdef Py_ssize_t U = S.shape[0], I = S.shape[1]
    top_arr = np.full((U, k), -1, dtype=np.int64)
    counts_arr = np.zeros(U, dtype=np.int64)
    cdef long long[:, ::1] top = top_arr
    cdef long long[::1] counts = counts_arr
    cdef unsigned char[::1] excluded = np.zeros(I, dtype=np.uint8)
    hs_arr = np.empty(max(k, 1), dtype=np.float64)
    ht_arr = np.empty(max(k, 1), dtype=np.int64)
    hi_arr = np.empty(max(k, 1), dtype=np.int64)
    cdef double[::1] hs = hs_arr
    cdef long long[::1] ht = ht_arr
    cdef long long[::1] hi = hi_arr
    cdef Py_ssize_t u, i, n, j, last
    cdef double s
    cdef long long t
    with nogil:
        for u in range(U):
            for j in range(eptr[u], eptr[u + 1]):
                excluded[eidx[j]] = 1
            n = 0
            for i in range(I):
                if excluded[i]:
                    continue
                s = S[u, i]
                t = tr[i]
                if n < k:
                    hs[n] = s; ht[n] = t; hi[n] = i
                    _sift_up(&hs[0], &ht[0], &hi[0], n)
                    n += 1
                elif _worse(hs[0], ht[0], s, t):
                    hs[0] = s; ht[0] = t; hi[0] = i
                    _sift_down(&hs[0], &ht[0], &hi[0], n, 0)
            for j in range(eptr[u], eptr[u + 1]):
                excluded[eidx[j]] = 0
            counts[u] = n
            # pop the worst repeatedly to fill from the back
            last = n
            while last > 0:
                top[u, last - 1] = hi[0]
                last -= 1
                hs[0] = hs[last]; ht[0] = ht[last]; hi[0] = hi[last]
                _sift_down(&hs[0], &ht[0], &hi[0], last, 0)
    return top_arr, counts_arr


def rank_metrics(top, counts, rel_indptr, rel_indices, ks):
    cdef long long[:, ::1] T = np.ascontiguousarray(top, dtype=np.int64)
    cdef long long[::1] C = np.ascontiguousarray(counts, dtype=np.int64)
    cdef long long[::1] rptr = np.ascontiguousarray(rel_indptr, dtype=np.int64)
    cdef long long[::1] ridx = np.ascontiguousarray(rel_indices, dtype=np.int64)
    cdef long long[::1] K = np.ascontiguousarray(ks, dtype=np.int64)
    cdef Py_ssize_t U = T.shape[0], nk = K.shape[0]
    cdef Py_ssize_t n_items = 0
    if T.shape[0] and T.shape[1]:
        n_items = max(int(np.max(top)) + 1, 0)
    if ridx.shape[0]:
        n_items = max(n_items, int(np.max(rel_indices)) + 1)
    recall_arr = np.zeros((U, nk), dtype=np.float64)
    ndcg_arr = np.zeros((U, nk), dtype=np.float64)
    cdef double[:, ::1] recall = recall_arr
    cdef double[:, ::1] ndcg = ndcg_arr
    cdef unsigned char[::1] is_rel = np.zeros(max(n_items, 1), dtype=np.uint8)
    cdef Py_ssize_t u, j, r, kk, n_rel, lim
    cdef long long hits, item
    cdef double dcg, idcg
    with nogil:
        for u in range(U):
            for j in range(rptr[u], rptr[u + 1]):
                is_rel[ridx[j]] = 1
            n_rel = rptr[u + 1] - rptr[u]
            for j in range(nk):
                kk = K[j]
                lim = kk if kk < C[u] else C[u]
                hits = 0
                dcg = 0.0
                for r in range(lim):
                    item = T[u, r]
                    if is_rel[item]:
                        hits += 1
                        dcg = dcg + 1.0 / log2(r + 2.0)
                idcg = 0.0
                lim = kk if kk < n_rel else n_rel
                for r in range(1, lim + 1):
                    idcg = idcg + 1.0 / log2(r + 1.0)
                recall[u, j] = <double>hits / n_rel
                ndcg[u, j] = dcg / idcg
            for j in range(rptr[u], rptr[u + 1]):
                is_rel[ridx[j]] = 0
    return recall_arr, ndcg_arr
