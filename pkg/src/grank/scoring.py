"""Item goodness from representative PPR mass, and top-k lists."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ingest import ObservationSet, RatingTable, ratings_to_observations
from .ppr import PprConfig, PprVector, TransitionModel, personalized_pagerank, personalized_pagerank_many
from .tpg import Tpg, build_tpg


class ColdStartError(LookupError):
    """The user has nothing to walk from."""


@dataclass(frozen=True)
class GrScore:
    item: int
    gr: float  # nan when both representatives are unreached
    ppr_desirable: float
    ppr_undesirable: float

    @property
    def defined(self) -> bool:
        return not math.isnan(self.gr)


@dataclass
class RecommendationList:
    user: int
    entries: list[GrScore]
    k: int | None = None

    @property
    def items(self) -> list[int]:
        return [e.item for e in self.entries]

    def __len__(self):
        return len(self.entries)

    def to_csv_rows(self, user_label=None, item_labels=None):
        user = self.user if user_label is None else user_label
        for rank, e in enumerate(self.entries, 1):
            item = e.item if item_labels is None else item_labels[e.item]
            yield f"{user},{rank},{item},{e.gr:.17g}"


def gr_values(ppr_d: np.ndarray, ppr_u: np.ndarray) -> np.ndarray:
    denom = ppr_d + ppr_u
    out = np.full(len(denom), np.nan)
    ok = denom > 0
    out[ok] = ppr_d[ok] / denom[ok]
    return out


def gr_scores(tpg: Tpg, ppr: PprVector) -> list[GrScore]:
    d_nodes, u_nodes = tpg.representative_nodes()
    pd = ppr.at(d_nodes)
    pu = ppr.at(u_nodes)
    gr = gr_values(pd, pu)
    return [GrScore(i, float(gr[i]), float(pd[i]), float(pu[i])) for i in range(tpg.n)]


def order_items(items: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Items by score descending, ties by ascending id, nan scores last."""
    items = np.asarray(items)
    scores = np.asarray(scores, dtype=np.float64)
    undefined = np.isnan(scores)
    key = np.where(undefined, 0.0, -scores)
    return items[np.lexsort((items, key, undefined))]


def _ranked(user, scores: list[GrScore], exclude, k) -> RecommendationList:
    excluded = set(int(i) for i in exclude)
    eligible = [s for s in scores if s.item not in excluded]
    items = np.array([s.item for s in eligible], dtype=np.int64)
    gr = np.array([s.gr for s in eligible])
    by_item = {s.item: s for s in eligible}
    order = order_items(items, gr) if len(items) else items
    if k is not None:
        order = order[:k]
    return RecommendationList(user, [by_item[int(i)] for i in order], k)


def _check_user(tpg: Tpg, user: int):
    if not 0 <= user < tpg.m:
        raise KeyError(f"unknown user {user}")
    if tpg.degrees[user] == 0:
        raise ColdStartError(f"user {user} has no training observations")


def recommend(tpg: Tpg, user: int, k: int, cfg: PprConfig = PprConfig(), train_profile=(),
              model=None) -> RecommendationList:
    """Top-``k`` unseen items for ``user`` by GR score."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return _rank(tpg, user, k, cfg, train_profile, model)


def rank_all(tpg: Tpg, user: int, cfg: PprConfig = PprConfig(), train_profile=(), model=None) -> RecommendationList:
    return _rank(tpg, user, None, cfg, train_profile, model)


def _rank(tpg, user, k, cfg, train_profile, model):
    _check_user(tpg, user)
    model = model or TransitionModel.from_tpg(tpg)
    ppr = personalized_pagerank(model, tpg.user_node(user), cfg)
    return _ranked(user, gr_scores(tpg, ppr), train_profile, k)


@dataclass(eq=False)
class GRank:
    """Fitted recommender over one training partition."""

    tpg: Tpg
    cfg: PprConfig = PprConfig()
    factored: bool | None = None
    block: int = 16
    model: object = field(init=False, repr=False)

    def __post_init__(self):
        self.model = TransitionModel.from_tpg(self.tpg, factored=self.factored)

    @classmethod
    def fit(cls, train: RatingTable, n_users: int, n_items: int, *, pruned: bool = False,
            observations: ObservationSet | None = None, **kw) -> GRank:
        obs = ratings_to_observations(train) if observations is None else observations
        return cls(build_tpg(n_users, n_items, obs, pruned=pruned), **kw)

    def scores(self, users) -> tuple[np.ndarray, list[PprVector]]:
        """GR matrix (len(users) x N) for users that have observations."""
        users = list(users)
        for u in users:
            _check_user(self.tpg, u)
        pprs = personalized_pagerank_many(self.model, users, self.cfg, block=self.block)
        d_nodes, u_nodes = self.tpg.representative_nodes()
        out = np.empty((len(users), self.tpg.n))
        for r, p in enumerate(pprs):
            out[r] = gr_values(p.at(d_nodes), p.at(u_nodes))
        return out, pprs

    def recommend(self, user: int, k: int, train_profile=()) -> RecommendationList:
        return recommend(self.tpg, user, k, self.cfg, train_profile, model=self.model)

    def rank_all(self, user: int, train_profile=()) -> RecommendationList:
        return rank_all(self.tpg, user, self.cfg, train_profile, model=self.model)
