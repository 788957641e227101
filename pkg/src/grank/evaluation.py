"""Experiment harness: NDCG@K over test items, paired t-tests, scalability timing."""
from __future__ import annotations

import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import stats

from .baselines import BipartiteRanker, EigenRank
from .ingest import Dataset, ObservationSet, ratings_to_observations
from .ppr import PprConfig, TransitionModel
from .scoring import ColdStartError, GRank, gr_scores, order_items
from .ppr import personalized_pagerank
from .tpg import build_tpg

_log = logging.getLogger(__name__)

ALGORITHMS = ("grank", "bgr", "wbgr", "eigenrank")
PAPER_KS = (1, 3, 5, 10)


@dataclass(frozen=True)
class NdcgResult:
    user: int | None
    k: int
    value: float


def dcg(gains: np.ndarray, k: int) -> float:
    g = np.asarray(gains, dtype=np.float64)[:k]
    return float(np.sum((2.0 ** g - 1.0) / np.log2(np.arange(2, len(g) + 2))))


def ndcg_at_k(order: Sequence[int], ratings: Mapping[int, float], k: int, user: int | None = None) -> NdcgResult:
    """NDCG@k of a predicted ordering of the user's test items.

    Gains are ``2**rating - 1`` with a log2(position + 1) discount; an ideal
    DCG of zero (every test rating at gain 0) scores 1.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    got = np.array([ratings[i] for i in order], dtype=np.float64)
    ideal = np.sort(np.fromiter(ratings.values(), dtype=np.float64))[::-1]
    idcg = dcg(ideal, k)
    value = 1.0 if idcg == 0 else dcg(got, k) / idcg
    return NdcgResult(user, k, value)


@dataclass(eq=False)
class EvalReport:
    algorithm: str
    dataset: str
    variant: int
    T: int | None
    ks: tuple
    users: np.ndarray
    ndcg: dict  # k -> per-user values aligned with ``users``
    skipped: list = field(default_factory=list)

    def mean_ndcg(self, k: int) -> float:
        v = self.ndcg[k]
        return float(np.mean(v)) if len(v) else math.nan

    @property
    def n_users(self) -> int:
        return len(self.users)


@dataclass(frozen=True)
class TTestResult:
    a: str
    b: str
    n: int
    mean_diff: float
    std_diff: float
    t: float
    p: float
    degenerate: bool = False

    def significant(self, threshold: float = 0.01) -> bool:
        return self.p < threshold


def paired_ttest(a_values, b_values, a: str = "a", b: str = "b") -> TTestResult:
    """Two-tailed paired t-test on ``a - b``, sample standard deviation (ddof=1)."""
    av = np.asarray(a_values, dtype=np.float64)
    bv = np.asarray(b_values, dtype=np.float64)
    if av.shape != bv.shape:
        raise ValueError("paired samples must have equal length")
    n = len(av)
    if n < 2:
        raise ValueError("paired t-test needs at least two pairs")
    d = av - bv
    mu = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0:
        if mu == 0:
            return TTestResult(a, b, n, mu, sd, 0.0, 1.0)
        _log.warning("paired t-test %s vs %s: zero-variance differences", a, b)
        return TTestResult(a, b, n, mu, sd, math.copysign(math.inf, mu), 0.0, degenerate=True)
    t = mu / (sd / math.sqrt(n))
    p = float(2 * stats.t.sf(abs(t), n - 1))
    return TTestResult(a, b, n, mu, sd, t, min(1.0, p))


def pooled_ttest(reports_a: Sequence[EvalReport], reports_b: Sequence[EvalReport], k: int) -> TTestResult:
    """Pair per-user NDCG@k over every (variant, user) evaluated by both algorithms."""
    av, bv = [], []
    for ra, rb in zip(sorted(reports_a, key=lambda r: r.variant), sorted(reports_b, key=lambda r: r.variant)):
        if ra.variant != rb.variant:
            raise ValueError("reports cover different variants")
        common, ia, ib = np.intersect1d(ra.users, rb.users, return_indices=True)
        av.append(ra.ndcg[k][ia])
        bv.append(rb.ndcg[k][ib])
    name_a = reports_a[0].algorithm if reports_a else "a"
    name_b = reports_b[0].algorithm if reports_b else "b"
    return paired_ttest(np.concatenate(av), np.concatenate(bv), name_a, name_b)


class ScoreRanker:
    """Orders candidates by a per-item score matrix computed in user blocks."""

    def __init__(self, scorer, is_cold: Callable[[int], bool]):
        self.scorer = scorer
        self.is_cold = is_cold

    def rank_many(self, users, candidates):
        warm = [u for u in users if not self.is_cold(u)]
        out = {u: ColdStartError(f"user {u}") for u in users if self.is_cold(u)}
        if warm:
            S = self.scorer.scores(warm)
            S = S[0] if isinstance(S, tuple) else S
            for row, u in enumerate(warm):
                items = candidates[u]
                out[u] = order_items(items, S[row, items])
        return [out[u] for u in users]


class CandidateRanker:
    def __init__(self, model):
        self.model = model

    def rank_many(self, users, candidates):
        out = []
        for u in users:
            try:
                out.append(self.model.rank(u, candidates[u]))
            except ColdStartError as e:
                out.append(e)
        return out


def make_ranker(algorithm: str, ds: Dataset, cfg: PprConfig = PprConfig(), *, pruned: bool = False,
                block: int = 16, neighborhood_size: int = 100, epsilon: float = 0.85,
                observations: ObservationSet | None = None):
    if algorithm == "grank":
        g = GRank.fit(ds.train, ds.n_users, ds.n_items, pruned=pruned, cfg=cfg, block=block,
                      observations=observations)
        return ScoreRanker(g, lambda u: g.tpg.degrees[u] == 0)
    if algorithm in ("bgr", "wbgr"):
        r = BipartiteRanker.fit(ds.train, ds.n_users, ds.n_items, weighted=algorithm == "wbgr",
                                cfg=cfg, block=block)
        return ScoreRanker(r, lambda u: r.graph.degree(u) == 0)
    if algorithm == "eigenrank":
        return CandidateRanker(EigenRank(ds.train, ds.n_users, ds.n_items, neighborhood_size, epsilon))
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def evaluate_variant(ds: Dataset, ranker, name: str, ks=PAPER_KS, dataset_name: str = "",
                     threads: int = 1, block: int = 16) -> EvalReport:
    users = [int(u) for u in ds.users]
    groups = ds.test.by_user()
    candidates = {u: ds.test.item[groups[u]] for u in users}
    ratings = {u: dict(zip(ds.test.item[groups[u]].tolist(), ds.test.rating[groups[u]].tolist())) for u in users}
    chunks = [users[s:s + block] for s in range(0, len(users), block)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            ranked = list(ex.map(lambda c: ranker.rank_many(c, candidates), chunks))
    else:
        ranked = [ranker.rank_many(c, candidates) for c in chunks]

    kept, skipped = [], []
    values = {k: [] for k in ks}
    for chunk, res in zip(chunks, ranked):
        for u, order in zip(chunk, res):
            if isinstance(order, ColdStartError):
                skipped.append(u)
                continue
            kept.append(u)
            for k in ks:
                values[k].append(ndcg_at_k(order.tolist(), ratings[u], k).value)
    if skipped:
        _log.warning("%s variant %d: %d cold-start users skipped", name, ds.variant, len(skipped))
    T = ds.spec.train_per_user if ds.spec else None
    return EvalReport(name, dataset_name, ds.variant, T, tuple(ks), np.array(kept, dtype=np.int64),
                      {k: np.array(v) for k, v in values.items()}, skipped)


def run_experiment(datasets: Sequence[Dataset], algorithm, ks=PAPER_KS, cfg: PprConfig = PprConfig(), *,
                   dataset_name: str = "", pruned: bool = False, threads: int = 1, block: int = 16,
                   **ranker_kw) -> list[EvalReport]:
    """Evaluate one algorithm on every split variant.

    ``algorithm`` is a name from :data:`ALGORITHMS` or a callable
    ``(dataset) -> ranker`` exposing ``rank_many(users, candidates)``.
    """
    reports = []
    for ds in datasets:
        if callable(algorithm):
            ranker, name = algorithm(ds), getattr(algorithm, "__name__", "custom")
        else:
            ranker = make_ranker(algorithm, ds, cfg, pruned=pruned, block=block, **ranker_kw)
            name = algorithm
        t0 = time.monotonic()
        rep = evaluate_variant(ds, ranker, name, ks, dataset_name, threads, block)
        _log.info("%s variant %d: %d users, NDCG@%d=%.4f (%.1fs)", name, ds.variant, rep.n_users,
                  ks[-1], rep.mean_ndcg(ks[-1]), time.monotonic() - t0)
        reports.append(rep)
    return reports


def write_report_csv(reports: Sequence[EvalReport], path, per_variant: bool = False) -> None:
    """One row per (algorithm, dataset, T, K), averaged over variants (``variant`` = all).

    With ``per_variant`` every variant gets its own row instead.
    """
    groups: dict = {}
    for r in reports:
        groups.setdefault((r.algorithm, r.dataset, r.T), []).append(r)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("algorithm,dataset,variant,T,K,mean_ndcg,n_users\n")
        for (alg, name, T), reps in groups.items():
            for k in reps[0].ks:
                if per_variant:
                    for r in reps:
                        f.write(f"{alg},{name},{r.variant},{T},{k},{r.mean_ndcg(k)!r},{r.n_users}\n")
                else:
                    mean = float(np.mean([r.mean_ndcg(k) for r in reps]))
                    f.write(f"{alg},{name},all,{T},{k},{mean!r},{sum(r.n_users for r in reps)}\n")


def write_ttest_csv(rows: Sequence[tuple[int, int, TTestResult]], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("T,K,algorithm_vs,p_value\n")
        for T, k, res in rows:
            f.write(f"{T},{k},{res.a}_vs_{res.b},{float(res.p)!r}\n")


# -- scalability ---------------------------------------------------------------

FACTORS = ("M", "N", "S")
DEFAULT_LEVELS = (0.2, 0.4, 0.6, 0.8, 1.0)


@dataclass(frozen=True)
class ScalabilityPoint:
    factor: str
    level: float
    size: int
    mean_seconds: float
    std_seconds: float


def _subsample(obs: np.ndarray, n_users: int, n_items: int, factor: str, level: float,
               rng: np.random.Generator) -> tuple[np.ndarray, int, int]:
    if factor == "S":
        keep = np.sort(rng.choice(len(obs), int(round(level * len(obs))), replace=False))
        return obs[keep], n_users, n_items
    if factor == "M":
        users = np.unique(obs[:, 0])
        chosen = rng.choice(users, int(round(level * len(users))), replace=False)
        return obs[np.isin(obs[:, 0], chosen)], n_users, n_items
    if factor == "N":
        chosen = np.sort(rng.choice(n_items, int(round(level * n_items)), replace=False))
        remap = np.full(n_items, -1)
        remap[chosen] = np.arange(len(chosen))
        sub = obs[(remap[obs[:, 1]] >= 0) & (remap[obs[:, 2]] >= 0)].copy()
        sub[:, 1:] = remap[sub[:, 1:]]
        return sub, n_users, len(chosen)
    raise ValueError(f"factor must be one of {FACTORS}")


def scalability_run(ds: Dataset, factor: str, levels=DEFAULT_LEVELS, cfg: PprConfig = PprConfig(), *,
                    batch: int = 3, repeats: int = 5, seed: int = 0, factored: bool = False,
                    base_items: int | None = None,
                    observations: ObservationSet | None = None) -> list[ScalabilityPoint]:
    """Time recommendations while one of users (M), items (N) or preferences (S) varies.

    The two factors held fixed keep their full-data value, except that when M
    or N varies the preference count is trimmed at every level to the count
    available at the smallest level, so S stays constant across the sweep.
    ``base_items`` first restricts the data to a random item subset. Graphs
    for all levels are held in memory at once.
    """
    if factor not in FACTORS:
        raise ValueError(f"factor must be one of {FACTORS}")
    obs = (observations or ratings_to_observations(ds.train)).array
    n_items = ds.n_items
    if base_items is not None and base_items < n_items:
        # same item subsample for every factor, so the three sweeps share a base
        obs, _, n_items = _subsample(obs, ds.n_users, n_items, "N", base_items / n_items,
                                     np.random.default_rng([seed, len(FACTORS)]))
    rng = np.random.default_rng([seed, FACTORS.index(factor)])
    subs = [_subsample(obs, ds.n_users, n_items, factor, lv, rng) for lv in levels]
    sizes = [{"M": len(np.unique(o[:, 0])), "N": n, "S": len(o)}[factor] for o, _, n in subs]
    if factor in ("M", "N"):
        s_fixed = min((len(o) for o, _, _ in subs if len(o)), default=0)
        subs = [(o[np.sort(rng.choice(len(o), s_fixed, replace=False))] if len(o) else o, m, n)
                for o, m, n in subs]

    built = []
    for lv, size, (o, m, n) in zip(levels, sizes, subs):
        if len(o) == 0:
            _log.warning("scalability %s level %.2f: empty subsample, skipped", factor, lv)
            continue
        tpg = build_tpg(m, n, ObservationSet(o))
        built.append((lv, size, tpg, TransitionModel.from_tpg(tpg, factored=factored), np.unique(o[:, 0])))
    if not built:
        return []

    # same targets at every level where possible, so iteration counts stay comparable
    common = built[0][4]
    for *_, users in built[1:]:
        common = np.intersect1d(common, users)
    shared = rng.choice(common, min(batch, len(common)), replace=False) if len(common) else None
    targets = [shared if shared is not None and len(shared) == min(batch, len(users))
               else rng.choice(users, min(batch, len(users)), replace=False) for *_, users in built]

    # rounds interleave the levels so slow drift in machine speed hits every level alike
    runs = [[] for _ in built]
    for _ in range(repeats):
        for k, (lv, size, tpg, model, _) in enumerate(built):
            t0 = time.perf_counter()
            for u in targets[k]:
                gr_scores(tpg, personalized_pagerank(model, int(u), cfg))
            runs[k].append((time.perf_counter() - t0) / len(targets[k]))

    points = []
    for (lv, size, *_), r in zip(built, runs):
        points.append(ScalabilityPoint(factor, lv, size, statistics.median(r),
                                       statistics.pstdev(r) if len(r) > 1 else 0.0))
        _log.info("scalability %s=%d: %.4fs per recommendation", factor, size, points[-1].mean_seconds)
    return points


@dataclass(frozen=True)
class TrendFit:
    linear_residual: float
    quadratic_residual: float
    normalized_slope: float


def fit_trend(points: Sequence[ScalabilityPoint]) -> TrendFit | None:
    """Least-squares linear and quadratic fits of time against factor size."""
    if len(points) < 2:
        return None
    x = np.array([p.size for p in points], dtype=np.float64)
    y = np.array([p.mean_seconds for p in points])
    lin = np.polyfit(x, y, 1)
    r1 = float(np.sum((np.polyval(lin, x) - y) ** 2))
    r2 = math.nan
    if len(points) >= 3:
        r2 = float(np.sum((np.polyval(np.polyfit(x, y, 2), x) - y) ** 2))
    slope = abs(lin[0]) * (x.max() - x.min()) / y.mean()
    return TrendFit(r1, r2, float(slope))


def write_scalability_csv(points: Sequence[ScalabilityPoint], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("factor,level,mean_seconds,std_seconds,size\n")
        for p in points:
            f.write(f"{p.factor},{p.level:g},{p.mean_seconds:.6g},{p.std_seconds:.3g},{p.size}\n")
