"""Compiled kernels vs. the numpy/scipy fallback.

    python benchmarks/bench_kernels.py [--users 300 --items 300 --per-user 40] [--data u.data --T 50]

Times the propagation kernel alone and an end-to-end PPR solve (one user and
a block of 16) on a full preference graph, once per available backend, and
checks that both backends agree.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from grank import kernels
from grank.ingest import RatingTable, SplitSpec, parse_ratings, ratings_to_observations, split
from grank.ppr import PprConfig, TransitionModel, personalized_pagerank, personalized_pagerank_many
from grank.tpg import build_tpg


def synthetic(m, n, per_user, seed):
    rng = np.random.default_rng(seed)
    users, items = [], []
    for u in range(m):
        chosen = rng.choice(n, per_user, replace=False)
        users += [u] * per_user
        items += chosen.tolist()
    ratings = rng.integers(1, 6, len(users)).astype(float)
    return RatingTable(np.array(users), np.array(items), ratings, None, n_users=m, n_items=n)


def timed(fn, repeats):
    runs = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=300)
    ap.add_argument("--items", type=int, default=300)
    ap.add_argument("--per-user", type=int, default=40)
    ap.add_argument("--data", help="ratings file; overrides the synthetic graph")
    ap.add_argument("--T", type=int, default=50)
    ap.add_argument("--factored", action="store_true", help="use the factored full-graph operator")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    if args.data:
        ds = split(parse_ratings(args.data), SplitSpec(args.T, variants=1, rng_seed=args.seed))[0]
        train, m, n = ds.train, ds.n_users, ds.n_items
    else:
        train = synthetic(args.users, args.items, args.per_user, args.seed)
        m, n = args.users, args.items
    tpg = build_tpg(m, n, ratings_to_observations(train))
    targets = [int(u) for u in np.unique(train.user)[:16]]
    cfg = PprConfig()
    print(f"graph: {tpg.vertex_count} vertices, {tpg.edge_count} edges; "
          f"operator: {'factored' if args.factored else 'explicit CSR'}")
    print(f"{'backend':<8} {'spmm B=1':>10} {'spmm B=16':>10} {'ppr x1':>10} {'ppr x16':>10}")

    results = {}
    for impl in kernels.available():
        model = TransitionModel.from_tpg(tpg, factored=args.factored, impl=impl)
        op = model._walk
        z1 = np.random.default_rng(1).random((op.n_cols, 1))
        z16 = np.random.default_rng(1).random((op.n_cols, 16))
        row = [
            timed(lambda: op(z1), args.repeats),
            timed(lambda: op(z16), args.repeats),
            timed(lambda: personalized_pagerank(model, targets[0], cfg), max(1, args.repeats // 2)),
            timed(lambda: personalized_pagerank_many(model, targets, cfg), 1),
        ]
        results[impl.NAME] = personalized_pagerank(model, targets[0], cfg).values
        print(f"{impl.NAME:<8} " + " ".join(f"{t * 1e3:>8.2f}ms" for t in row))

    if len(results) == 2:
        a, b = results.values()
        print(f"max |cython - python| on one PPR vector: {np.abs(a - b).max():.3e}")


if __name__ == "__main__":
    main()
