"""Comparison recommenders: bipartite random walk with restart and EigenRank."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import RatingTable
from .ppr import PprConfig, TransitionModel, personalized_pagerank, personalized_pagerank_many
from .scoring import ColdStartError, GrScore, RecommendationList, order_items
from .tpg import symmetric_csr

_log = logging.getLogger(__name__)


@dataclass(eq=False)
class BipartiteGraph:
    """Users ``[0, m)`` and items ``[m, m + n)``; weighted edges carry the rating."""

    m: int
    n: int
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray | None

    @classmethod
    def from_ratings(cls, train: RatingTable, n_users: int, n_items: int, weighted: bool) -> BipartiteGraph:
        nodes = n_users + n_items
        if weighted:
            indptr, indices, weights = symmetric_csr(nodes, train.user, n_users + train.item, train.rating)
        else:
            indptr, indices = symmetric_csr(nodes, train.user, n_users + train.item)
            weights = None
        return cls(n_users, n_items, indptr, indices, weights)

    @property
    def weighted(self) -> bool:
        return self.weights is not None

    def transition_model(self) -> TransitionModel:
        return TransitionModel(self.indptr, self.indices, self.weights)

    def degree(self, user: int) -> int:
        return int(self.indptr[user + 1] - self.indptr[user])


def _bgr_list(user, ppr_items, exclude, k):
    items = np.arange(len(ppr_items))
    keep = ~np.isin(items, np.asarray(list(exclude), dtype=np.int64))
    items, vals = items[keep], ppr_items[keep]
    order = order_items(items, vals)
    if k is not None:
        order = order[:k]
    return RecommendationList(user, [GrScore(int(i), float(ppr_items[i]), math.nan, math.nan) for i in order], k)


def bgr_recommend(graph: BipartiteGraph, user: int, k: int | None, cfg: PprConfig = PprConfig(),
                  weighted: bool | None = None, train_profile=None, model=None) -> RecommendationList:
    """Items ranked by PPR mass from ``user``; the ``gr`` field holds that mass."""
    if weighted is not None and weighted != graph.weighted:
        raise ValueError("graph weighting does not match the requested mode")
    if graph.degree(user) == 0:
        raise ColdStartError(f"user {user} has no training ratings")
    model = model or graph.transition_model()
    ppr = personalized_pagerank(model, user, cfg)
    if train_profile is None:
        train_profile = graph.indices[graph.indptr[user]:graph.indptr[user + 1]] - graph.m
    return _bgr_list(user, ppr.values[graph.m:], train_profile, k)


@dataclass(eq=False)
class BipartiteRanker:
    graph: BipartiteGraph
    cfg: PprConfig = PprConfig()
    block: int = 16
    model: TransitionModel = field(init=False, repr=False)

    def __post_init__(self):
        self.model = self.graph.transition_model()

    @classmethod
    def fit(cls, train: RatingTable, n_users: int, n_items: int, weighted: bool, **kw) -> BipartiteRanker:
        return cls(BipartiteGraph.from_ratings(train, n_users, n_items, weighted), **kw)

    def scores(self, users) -> np.ndarray:
        users = list(users)
        for u in users:
            if self.graph.degree(u) == 0:
                raise ColdStartError(f"user {u} has no training ratings")
        pprs = personalized_pagerank_many(self.model, users, self.cfg, block=self.block)
        item_nodes = self.graph.m + np.arange(self.graph.n)
        return np.vstack([p.at(item_nodes) for p in pprs]) if pprs else np.empty((0, self.graph.n))

    def recommend(self, user, k, train_profile=None):
        return bgr_recommend(self.graph, user, k, self.cfg, train_profile=train_profile, model=self.model)


@dataclass(frozen=True)
class KendallSimilarity:
    u: int
    v: int
    tau: float  # nan without common comparable pairs
    common_pairs: int
    concordant: int
    discordant: int

    @property
    def defined(self) -> bool:
        return self.common_pairs > 0


def _kendall_counts(ru: np.ndarray, rv: np.ndarray) -> tuple[int, int]:
    su = np.sign(ru[:, None] - ru[None, :])
    sv = np.sign(rv[:, None] - rv[None, :])
    prod = np.triu(su * sv, 1)
    return int((prod > 0).sum()), int((prod < 0).sum())


def kendall_similarity(u: int, v: int, train: RatingTable) -> KendallSimilarity:
    """Kendall agreement over item pairs both users rated, each strictly ordered by both."""
    ru = dict(zip(train.item[train.user == u].tolist(), train.rating[train.user == u].tolist()))
    rv = dict(zip(train.item[train.user == v].tolist(), train.rating[train.user == v].tolist()))
    common = sorted(set(ru) & set(rv))
    c, d = _kendall_counts(np.array([ru[i] for i in common]), np.array([rv[i] for i in common]))
    tau = (c - d) / (c + d) if c + d else math.nan
    return KendallSimilarity(u, v, tau, c + d, c, d)


@dataclass
class PreferenceMatrix:
    user: int
    items: np.ndarray
    values: np.ndarray  # values[a, b] > 0: items[a] preferred over items[b]


class EigenRank:
    """Neighborhood collaborative ranking with a random-walk aggregation step.

    Choices where the short description leaves room:

    * neighbors: the ``neighborhood_size`` users with the largest defined
      Kendall tau (negative values allowed), ties by user id;
    * preference of a over b: sum of tau_v * (r_va - r_vb) over neighbors who
      rated both, divided by the sum of |tau_v| over the same neighbors;
    * walk: from item a move to b with probability proportional to
      exp(psi(b, a)) (self included), damped toward uniform by ``epsilon``;
      items are ranked by the stationary distribution.
    """

    def __init__(self, train: RatingTable, n_users: int, n_items: int,
                 neighborhood_size: int = 100, epsilon: float = 0.85):
        self.n_users, self.n_items = n_users, n_items
        self.neighborhood_size = neighborhood_size
        self.epsilon = epsilon
        R = np.zeros((n_users, n_items))
        R[train.user, train.item] = train.rating
        self.R = R
        self.rated = R != 0

    @classmethod
    def fit(cls, train, n_users, n_items, **kw) -> EigenRank:
        return cls(train, n_users, n_items, **kw)

    def similarities(self, user: int) -> np.ndarray:
        """Kendall tau of ``user`` against every user (nan where undefined)."""
        items = np.flatnonzero(self.rated[user])
        ru = self.R[user, items]
        su = np.sign(ru[:, None] - ru[None, :])
        c = np.zeros(self.n_users)
        d = np.zeros(self.n_users)
        step = max(1, 4_000_000 // max(1, len(items) ** 2))
        for lo in range(0, self.n_users, step):
            Rv = self.R[lo:lo + step][:, items]
            both = self.rated[lo:lo + step][:, items]
            sv = np.sign(Rv[:, :, None] - Rv[:, None, :])
            prod = su[None] * sv * (both[:, :, None] & both[:, None, :])
            c[lo:lo + step] = (prod > 0).sum(axis=(1, 2)) / 2
            d[lo:lo + step] = (prod < 0).sum(axis=(1, 2)) / 2
        with np.errstate(invalid="ignore", divide="ignore"):
            tau = (c - d) / (c + d)
        tau[user] = np.nan
        return tau

    def neighbors(self, user: int) -> tuple[np.ndarray, np.ndarray]:
        tau = self.similarities(user)
        ok = np.flatnonzero(~np.isnan(tau))
        order = ok[np.lexsort((ok, -tau[ok]))][: self.neighborhood_size]
        if len(order) == 0:
            raise ColdStartError(f"user {user} has no neighbor with a defined similarity")
        return order, tau[order]

    def preference_matrix(self, user: int, items) -> PreferenceMatrix:
        items = np.asarray(items, dtype=np.int64)
        nb, s = self.neighbors(user)
        Rn = self.R[np.ix_(nb, items)]
        Mn = self.rated[np.ix_(nb, items)].astype(np.float64)
        sR = s[:, None] * Rn
        num = sR.T @ Mn - Mn.T @ sR
        den = (np.abs(s)[:, None] * Mn).T @ Mn
        psi = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        return PreferenceMatrix(user, items, psi)

    def stationary(self, psi: np.ndarray, tol: float = 1e-13, max_iter: int = 10_000) -> np.ndarray:
        n = len(psi)
        W = np.exp(psi)  # W[b, a] = exp(psi(b, a)): weight of stepping a -> b
        P = W / W.sum(axis=0, keepdims=True)
        pi = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            nxt = self.epsilon * (P @ pi) + (1 - self.epsilon) / n
            if np.abs(nxt - pi).sum() < tol:
                return nxt
            pi = nxt
        return pi

    def scores_for(self, user: int, items) -> np.ndarray:
        pm = self.preference_matrix(user, items)
        if len(pm.items) == 0:
            return np.empty(0)
        # rounding keeps exact ties (e.g. an all-zero matrix) tied
        return np.round(self.stationary(pm.values), 14)

    def rank(self, user: int, items) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        return order_items(items, self.scores_for(user, items))

    def recommend(self, user: int, k: int) -> RecommendationList:
        cand = np.flatnonzero(~self.rated[user])
        sc = self.scores_for(user, cand)
        lookup = dict(zip(cand.tolist(), sc.tolist()))
        order = order_items(cand, sc)[:k]
        return RecommendationList(user, [GrScore(int(i), lookup[int(i)], math.nan, math.nan) for i in order], k)


def eigenrank_recommend(train: RatingTable, user: int, k: int, neighborhood_size: int = 100,
                        epsilon: float = 0.85, n_users=None, n_items=None) -> RecommendationList:
    n_users = train.n_users if n_users is None else n_users
    n_items = train.n_items if n_items is None else n_items
    return EigenRank(train, n_users, n_items, neighborhood_size, epsilon).recommend(user, k)
