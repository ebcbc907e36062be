"""Time the compiled and numpy ranking kernels on all-rank workloads.

    python benchmarks/bench_kernels.py [--users 2000] [--items 20000] [--k 20] [--repeat 3]
"""

import argparse
import timeit

import numpy as np

from textrec import kernels


def workload(n_users, n_items, n_excl, seed=0):
    rng = np.random.default_rng(seed)
    scores = rng.standard_normal((n_users, n_items))
    ties = rng.permutation(n_items).astype(np.int64)
    excl = [np.sort(rng.choice(n_items, size=n_excl, replace=False)) for _ in range(n_users)]
    indptr = np.concatenate([[0], np.cumsum([len(e) for e in excl])]).astype(np.int64)
    indices = np.concatenate(excl).astype(np.int64)
    rel = [np.sort(rng.choice(n_items, size=5, replace=False)) for _ in range(n_users)]
    rptr = np.concatenate([[0], np.cumsum([len(r) for r in rel])]).astype(np.int64)
    ridx = np.concatenate(rel).astype(np.int64)
    return scores, indptr, indices, ties, rptr, ridx


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--items", type=int, default=20000)
    ap.add_argument("--excluded", type=int, default=50)
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    scores, indptr, indices, ties, rptr, ridx = workload(args.users, args.items, args.excluded)
    ks = np.array([10, args.k])
    names = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(names) == 1:
        print("compiled kernels not built; timing the numpy fallback only")
    results = {}
    for name in names:
        mod = kernels.get_backend(name)
        top, counts = mod.topk_excluding(scores, indptr, indices, ties, args.k)
        t_top = min(timeit.repeat(lambda: mod.topk_excluding(scores, indptr, indices, ties, args.k),
                                  number=1, repeat=args.repeat))
        t_met = min(timeit.repeat(lambda: mod.rank_metrics(top, counts, rptr, ridx, ks),
                                  number=1, repeat=args.repeat))
        results[name] = (t_top, t_met, top)
        print(f"{name:7s} topk_excluding {t_top * 1e3:9.1f} ms   rank_metrics {t_met * 1e3:8.2f} ms")
    if len(names) == 2:
        same = np.array_equal(results["python"][2], results["cython"][2])
        print(f"speedup topk {results['python'][0] / results['cython'][0]:.2f}x, "
              f"metrics {results['python'][1] / results['cython'][1]:.2f}x, identical output: {same}")


if __name__ == "__main__":
    main()
