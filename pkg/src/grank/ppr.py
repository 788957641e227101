"""Personalized PageRank by damped power iteration with restart at a target node.

Mass leaves node ``i`` split evenly (or by edge weight) over its neighbors,
i.e. the column-stochastic reading of the transition matrix. Mass sitting on
a degree-0 node is sent back to the target.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .kernels import CsrOperator
from .tpg import Tpg, preference_pairs, symmetric_csr

_log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class PprConfig:
    alpha: float = 0.85
    tolerance: float = 1e-8
    max_iterations: int = 200

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass(frozen=True)
class PersonalizationVector:
    target: int
    size: int

    def dense(self) -> np.ndarray:
        pv = np.zeros(self.size)
        pv[self.target] = 1.0
        return pv


@dataclass(eq=False)
class PprVector:
    target: int
    iterations_used: int
    converged: bool
    state: np.ndarray = field(repr=False)
    model: object = field(repr=False)
    history: list = field(default_factory=list, repr=False)

    @cached_property
    def values(self) -> np.ndarray:
        return self.model.materialize(self.state)

    def at(self, nodes) -> np.ndarray:
        """Values at the given global nodes without materializing the full vector."""
        return self.model.values_at(self.state, np.asarray(nodes, dtype=np.int64))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write("node,value\n")
            for i, v in enumerate(self.values.tolist()):
                f.write(f"{i},{v!r}\n")


class TransitionModel:
    """Random-walk operator on an undirected graph in CSR form."""

    def __init__(self, indptr, indices, weights=None, *, literal: bool = False, impl=None):
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int32)
        self.n_nodes = len(self.indptr) - 1
        self.weights = None if weights is None else np.asarray(weights, dtype=np.float64)
        if self.weights is None:
            strength = np.diff(self.indptr).astype(np.float64)
        else:
            if np.any(self.weights <= 0):
                raise ValueError("edge weights must be positive")
            rows = np.repeat(np.arange(self.n_nodes), np.diff(self.indptr))
            strength = np.bincount(rows, weights=self.weights, minlength=self.n_nodes)
        self.dangling = strength == 0
        self.inv_strength = np.divide(1.0, strength, out=np.zeros_like(strength), where=~self.dangling)
        # test-only: row-normalized reading of the transition matrix (not mass-conserving)
        self.literal = literal
        if literal:
            self._op = CsrOperator(self.indptr, self.indices, self.n_nodes, self.weights, impl=impl)
        # degree normalization folded into per-edge weights: one pass per step
        w = self.inv_strength[self.indices]
        if self.weights is not None:
            w = w * self.weights
        self._walk = CsrOperator(self.indptr, self.indices, self.n_nodes, w, impl=impl)

    @property
    def n_state(self) -> int:
        return self.n_nodes

    @classmethod
    def from_dense(cls, adjacency, **kw) -> TransitionModel:
        A = np.asarray(adjacency, dtype=np.float64)
        if not np.allclose(A, A.T):
            raise ValueError("adjacency must be symmetric")
        rows, cols = np.nonzero(A)
        indptr = np.zeros(len(A) + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=len(A)), out=indptr[1:])
        weighted = not np.all(A[rows, cols] == 1.0)
        return cls(indptr, cols, A[rows, cols] if weighted else None, **kw)

    @classmethod
    def from_tpg(cls, tpg: Tpg, factored: bool | None = None, impl=None):
        """Walk operator for a TPG; full graphs use the factored operator by default."""
        if factored is None:
            factored = not tpg.pruned
        if factored:
            if tpg.pruned:
                raise ValueError("the factored operator needs a full-mode graph")
            return FactoredTpgTransition(tpg, impl=impl)
        return cls(tpg.indptr, tpg.indices, impl=impl)

    def _as_block(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (x[:, None] if x.ndim == 1 else x), x.ndim == 1

    def apply(self, x, target: int | None = None) -> np.ndarray:
        """One walk step on a distribution; dangling mass goes to ``target`` (or stays put)."""
        X, flat = self._as_block(x)
        Y = self._walk(X)
        dang = X[self.dangling]
        if target is None:
            Y[self.dangling] += dang
        else:
            Y[target] += dang.sum(axis=0)
        return Y[:, 0] if flat else Y

    def initial_state(self, targets, rng=None) -> np.ndarray:
        X = np.zeros((self.n_nodes, len(targets)))
        if rng is None:
            X[targets, np.arange(len(targets))] = 1.0
        else:
            X[...] = rng.random(X.shape)
            X /= X.sum(axis=0)
        return X

    def step(self, X, alpha, targets):
        """Returns the next block and the per-column L1 change."""
        cols = np.arange(X.shape[1])
        if self.literal:
            Y = self._op(X) * self.inv_strength[:, None]
            Y *= alpha
            Y[targets, cols] += 1 - alpha
        else:
            Y = self._walk(X)
            dang = X[self.dangling].sum(axis=0)
            Y *= alpha
            Y[targets, cols] += alpha * dang + (1 - alpha)
        return Y, kernels.backend.abs_diff_colsum(Y, X)

    def mass(self, X) -> np.ndarray:
        return kernels.backend.colsum(np.ascontiguousarray(X))

    def state_index(self, node: int) -> int:
        if not 0 <= node < self.n_nodes:
            raise IndexError(node)
        return node

    def materialize(self, col) -> np.ndarray:
        return np.array(col)

    def values_at(self, col, nodes) -> np.ndarray:
        return col[nodes]


class FactoredTpgTransition:
    """Exact walk on a full-mode TPG without storing its N(N-1) preference nodes.

    A preference node nobody states has degree 2 and receives mass only from
    its two representatives, so after one step its value is ``a[i] + b[j]``
    with ``a``/``b`` the damped per-edge outflow of the desirable/undesirable
    representatives on the previous step. The state keeps the stated
    ("held") part of the graph explicitly and the unheld preferences through
    ``a`` and ``b``; all sums over the N^2 unheld nodes reduce to O(N log N)
    closed forms. Iterates equal those of the explicit graph up to rounding.
    """

    def __init__(self, tpg: Tpg, impl=None):
        if tpg.pruned:
            raise ValueError("factored operator needs a full-mode graph")
        m, n = tpg.m, tpg.n
        self.tpg = tpg
        h = len(tpg.held)
        self.m, self.n, self.h = m, n, h
        self.n_core = m + h + 2 * n
        self.n_state = self.n_core + 2 * n
        self.rep_base = m + h
        hd, hu = tpg.held_pairs
        self.hd, self.hu = np.ascontiguousarray(hd), np.ascontiguousarray(hu)

        held_nodes = m + np.arange(h)
        src = np.concatenate([tpg.up_user, held_nodes, held_nodes])
        dst = np.concatenate([m + tpg.up_held, self.rep_base + 2 * hd, self.rep_base + 2 * hu + 1])
        indptr, indices = symmetric_csr(self.n_core, src, dst)

        deg = np.empty(self.n_core)
        deg[:m] = np.bincount(tpg.up_user, minlength=m)
        deg[m:self.rep_base] = 2 + tpg.holder_counts
        deg[self.rep_base:] = n - 1
        self.dangling = deg == 0
        self.inv_strength = np.divide(1.0, deg, out=np.zeros_like(deg), where=~self.dangling)
        self._walk = CsrOperator(indptr, indices, self.n_core, self.inv_strength[indices], impl=impl)

        self.rep_d = self.rep_base + 2 * np.arange(n)
        self.rep_u = self.rep_d + 1
        self.unheld_d = (n - 1 - np.bincount(hd, minlength=n)).astype(np.float64)
        self.unheld_u = (n - 1 - np.bincount(hu, minlength=n)).astype(np.float64)
        # held-pair incidence: row i lists j for every held "i > j", and its transpose
        hp, hi = symmetric_csr(2 * n, hd, n + hu)
        self._held_fwd = CsrOperator(hp[:n + 1], hi[:hp[n]] - n, n, impl=impl)
        self._held_bwd = CsrOperator(hp[n:] - hp[n], hi[hp[n]:], n, impl=impl)

    def state_index(self, node: int) -> int:
        tpg = self.tpg
        if 0 <= node < tpg.m:
            return node
        if tpg.m <= node < tpg.rep_base:
            o = node - tpg.m
            k = int(np.searchsorted(tpg.held, o))
            if k < self.h and tpg.held[k] == o:
                return self.m + k
            raise ValueError(f"node {node} is an unstated preference; not a valid restart target")
        if tpg.rep_base <= node < tpg.vertex_count:
            return self.rep_base + (node - tpg.rep_base)
        raise IndexError(node)

    def _split(self, X):
        c, n = self.n_core, self.n
        return X[:c], X[c:c + n], X[c + n:]

    def initial_state(self, targets, rng=None) -> np.ndarray:
        X = np.zeros((self.n_state, len(targets)))
        if rng is None:
            X[targets, np.arange(len(targets))] = 1.0
        else:
            X[...] = rng.random(X.shape)
            X /= self.mass(X)
        return X

    def _unheld_abs(self, c, d) -> np.ndarray:
        """Per column: sum of |c_i + d_j| over unheld ordered pairs i != j."""
        n = self.n
        # all ordered pairs via sorted prefix sums, then drop i == j and held pairs
        ds = np.sort(d, axis=0)
        pref = np.zeros((n + 1, d.shape[1]))
        np.cumsum(ds, axis=0, out=pref[1:])
        out = np.empty(c.shape[1])
        for b in range(c.shape[1]):
            k = np.searchsorted(ds[:, b], -c[:, b], side="left")
            neg = k * c[:, b] + pref[k, b]
            pos = (n - k) * c[:, b] + (pref[n, b] - pref[k, b])
            out[b] = np.sum(pos - neg)
        out -= np.abs(c + d).sum(axis=0)
        out -= kernels.backend.pair_abs_sum(self.hd, self.hu, np.ascontiguousarray(c), np.ascontiguousarray(d))
        return np.maximum(out, 0.0)

    def step(self, X, alpha, targets):
        core, a, b = self._split(X)
        Y = np.empty_like(X)
        ycore, ya, yb = self._split(Y)
        self._walk(core, ycore)
        # outflow of unheld preferences (value a_i + b_j, degree 2)
        asum, bsum = a.sum(axis=0), b.sum(axis=0)
        ycore[self.rep_d] += 0.5 * (self.unheld_d[:, None] * a + bsum - b - self._held_fwd(b))
        ycore[self.rep_u] += 0.5 * (self.unheld_u[:, None] * b + asum - a - self._held_bwd(a))
        dang = core[self.dangling].sum(axis=0)
        ycore *= alpha
        ycore[targets, np.arange(X.shape[1])] += alpha * dang + (1 - alpha)
        ya[...] = alpha * (core[self.rep_d] * self.inv_strength[self.rep_d, None])
        yb[...] = alpha * (core[self.rep_u] * self.inv_strength[self.rep_u, None])
        diff = kernels.backend.abs_diff_colsum(np.ascontiguousarray(ycore), np.ascontiguousarray(core))
        diff += self._unheld_abs(ya - a, yb - b)
        return Y, diff

    def mass(self, X) -> np.ndarray:
        core, a, b = self._split(X)
        return core.sum(axis=0) + self.unheld_d @ a + self.unheld_u @ b

    def materialize(self, col) -> np.ndarray:
        tpg = self.tpg
        core, a, b = col[:self.n_core], col[self.n_core:self.n_core + self.n], col[self.n_core + self.n:]
        out = np.empty(tpg.vertex_count)
        out[:tpg.m] = core[:tpg.m]
        if tpg.preference_count:
            d, u = preference_pairs(np.arange(tpg.preference_count), self.n)
            prefs = a[d] + b[u]
            prefs[tpg.held] = core[self.m:self.rep_base]
            out[tpg.m:tpg.rep_base] = prefs
        out[tpg.rep_base:] = core[self.rep_base:]
        return out

    def values_at(self, col, nodes) -> np.ndarray:
        tpg = self.tpg
        nodes = np.asarray(nodes, dtype=np.int64)
        out = np.empty(len(nodes))
        user = nodes < tpg.m
        rep = nodes >= tpg.rep_base
        pref = ~user & ~rep
        out[user] = col[nodes[user]]
        out[rep] = col[self.rep_base + nodes[rep] - tpg.rep_base]
        if pref.any():
            o = nodes[pref] - tpg.m
            k = np.searchsorted(tpg.held, o).clip(max=max(self.h - 1, 0))
            is_held = (self.h > 0) & (tpg.held[k] == o) if self.h else np.zeros(len(o), bool)
            d, u = preference_pairs(o, self.n)
            a = col[self.n_core:self.n_core + self.n]
            b = col[self.n_core + self.n:]
            vals = a[d] + b[u]
            vals[is_held] = col[self.m + k[is_held]]
            out[pref] = vals
        return out


def _solve_block(model, targets, cfg: PprConfig, rng=None, trace=False) -> list[PprVector]:
    sidx = np.array([model.state_index(t) for t in targets], dtype=np.int64)
    X = model.initial_state(sidx, rng)
    B = len(sidx)
    done = np.zeros(B, dtype=bool)
    iters = np.full(B, cfg.max_iterations)
    results: list = [None] * B
    histories = [[] for _ in range(B)]
    for it in range(1, cfg.max_iterations + 1):
        X, diff = model.step(X, cfg.alpha, sidx)
        if trace:
            mass = model.mass(X)
            for b in np.flatnonzero(~done):
                histories[b].append((float(diff[b]), float(mass[b])))
        for b in np.flatnonzero(~done & (diff < cfg.tolerance)):
            done[b] = True
            iters[b] = it
            results[b] = X[:, b].copy()
        if done.all():
            break
    out = []
    for b in range(B):
        state = results[b] if done[b] else X[:, b].copy()
        if not done[b]:
            _log.warning("PPR for node %d did not converge in %d iterations", targets[b], cfg.max_iterations)
        out.append(PprVector(int(targets[b]), int(iters[b]), bool(done[b]), state, model, histories[b]))
    return out


def personalized_pagerank(model, target: int, cfg: PprConfig = PprConfig(), *,
                          seed: int | None = None, trace: bool = False) -> PprVector:
    """PPR restarted at global node ``target``.

    Starts from the personalization vector unless ``seed`` is given, in which
    case the start is a random normalized vector drawn from that seed.
    """
    rng = None if seed is None else np.random.default_rng(seed)
    return _solve_block(model, [target], cfg, rng, trace)[0]


def personalized_pagerank_many(model, targets, cfg: PprConfig = PprConfig(), block: int = 16) -> list[PprVector]:
    """Solve several targets in column blocks; each result equals its solo solve."""
    targets = list(targets)
    out = []
    for s in range(0, len(targets), block):
        out.extend(_solve_block(model, targets[s:s + block], cfg))
    return out


def transition_apply(model: TransitionModel, x, target: int | None = None) -> np.ndarray:
    return model.apply(x, target)


def solve_dense_oracle(adjacency, target: int, alpha: float) -> np.ndarray:
    """Direct solve of ``(I - alpha T) x = (1 - alpha) e_target`` on a small dense graph."""
    A = np.asarray(adjacency, dtype=np.float64)
    n = len(A)
    if n > 200:
        raise ValueError("dense oracle is limited to 200 nodes")
    strength = A.sum(axis=0)
    T = np.zeros((n, n))
    for i in range(n):
        if strength[i] > 0:
            T[:, i] = A[i, :] / strength[i]
        else:
            T[target, i] = 1.0
    rhs = np.zeros(n)
    rhs[target] = 1 - alpha
    try:
        return np.linalg.solve(np.eye(n) - alpha * T, rhs)
    except np.linalg.LinAlgError as e:
        raise OracleError(str(e)) from e
