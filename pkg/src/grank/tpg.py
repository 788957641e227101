"""Tripartite preference graph: users, pairwise-preference nodes, item representatives.

Global node layout::

    [0, M)                 users
    [M, M + P)             preference nodes, row-major by (desirable, undesirable)
    [M + P, M + P + 2N)    representatives, item i -> i_d at 2i, i_u at 2i + 1

In full mode P = N(N - 1) and preference ordinals follow
:func:`preference_index`; in pruned mode only preferences stated by at least
one user are kept, in ascending full-ordinal order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .ingest import ObservationSet

MAGIC = b"TPG1"


class TpgBuildError(ValueError):
    pass


class Layer(IntEnum):
    USER = 0
    PREFERENCE = 1
    REPRESENTATIVE = 2


class Side(IntEnum):
    DESIRABLE = 0
    UNDESIRABLE = 1


class PreferencePair(NamedTuple):
    desirable: int
    undesirable: int


class Representative(NamedTuple):
    item: int
    side: Side


class NodeIndex(NamedTuple):
    layer: Layer
    ordinal: int
    node: int


def preference_index(desirable: int, undesirable: int, n: int) -> int:
    """Ordinal of the preference "desirable > undesirable" among all N(N-1) pairs."""
    if desirable == undesirable:
        raise ValueError(f"preference needs two distinct items, got {desirable} twice")
    if not (0 <= desirable < n and 0 <= undesirable < n):
        raise ValueError(f"items ({desirable}, {undesirable}) out of range for n={n}")
    return desirable * (n - 1) + (undesirable if undesirable < desirable else undesirable - 1)


def preference_ordinals(desirable, undesirable, n: int) -> np.ndarray:
    d = np.asarray(desirable, dtype=np.int64)
    u = np.asarray(undesirable, dtype=np.int64)
    return d * (n - 1) + np.where(u < d, u, u - 1)


def preference_pairs(ordinals, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`preference_ordinals`."""
    o = np.asarray(ordinals, dtype=np.int64)
    d = o // (n - 1)
    c = o % (n - 1)
    return d, np.where(c < d, c, c + 1)


def agreement(user: int, pref: PreferencePair, observations: ObservationSet) -> int:
    return int((user, pref.desirable, pref.undesirable) in observations)


def support(pref: PreferencePair, rep: Representative) -> int:
    if rep.side == Side.DESIRABLE:
        return int(rep.item == pref.desirable)
    return int(rep.item == pref.undesirable)


def symmetric_csr(n_nodes: int, src, dst, weights=None):
    """Undirected CSR (indptr, indices[, weights]) with each row's neighbors ascending."""
    a = np.concatenate([src, dst]).astype(np.int64)
    b = np.concatenate([dst, src]).astype(np.int64)
    counts = np.bincount(a, minlength=n_nodes)
    indptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    key = a * n_nodes + b
    if weights is None:
        key.sort()
        return indptr, (key - (key // n_nodes) * n_nodes).astype(np.int32)
    order = np.argsort(key, kind="stable")
    w = np.concatenate([weights, weights]).astype(np.float64)[order]
    return indptr, b[order].astype(np.int32), w


@dataclass(frozen=True, eq=False)
class Tpg:
    m: int
    n: int
    preference_count: int
    pruned: bool
    indptr: np.ndarray
    indices: np.ndarray
    held: np.ndarray
    up_user: np.ndarray
    up_held: np.ndarray

    @property
    def vertex_count(self) -> int:
        return self.m + self.preference_count + 2 * self.n

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    @property
    def rep_base(self) -> int:
        return self.m + self.preference_count

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @cached_property
    def held_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return preference_pairs(self.held, self.n)

    @cached_property
    def holder_counts(self) -> np.ndarray:
        return np.bincount(self.up_held, minlength=len(self.held))

    def user_node(self, user: int) -> int:
        if not 0 <= user < self.m:
            raise KeyError(user)
        return user

    def preference_node(self, desirable: int, undesirable: int) -> int:
        o = preference_index(desirable, undesirable, self.n)
        if not self.pruned:
            return self.m + o
        k = int(np.searchsorted(self.held, o))
        if k == len(self.held) or self.held[k] != o:
            raise KeyError(PreferencePair(desirable, undesirable))
        return self.m + k

    def preference_of(self, node: int) -> PreferencePair:
        k = node - self.m
        if not 0 <= k < self.preference_count:
            raise KeyError(node)
        o = self.held[k] if self.pruned else k
        d, u = preference_pairs(o, self.n)
        return PreferencePair(int(d), int(u))

    def desirable_node(self, item: int) -> int:
        return self.rep_base + 2 * item

    def undesirable_node(self, item: int) -> int:
        return self.rep_base + 2 * item + 1

    def representative_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        base = self.rep_base + 2 * np.arange(self.n)
        return base, base + 1

    def node_index(self, node: int) -> NodeIndex:
        if 0 <= node < self.m:
            return NodeIndex(Layer.USER, node, node)
        if node < self.rep_base:
            return NodeIndex(Layer.PREFERENCE, node - self.m, node)
        if node < self.vertex_count:
            return NodeIndex(Layer.REPRESENTATIVE, node - self.rep_base, node)
        raise KeyError(node)

    def global_node(self, layer: Layer, ordinal: int) -> int:
        base = {Layer.USER: 0, Layer.PREFERENCE: self.m, Layer.REPRESENTATIVE: self.rep_base}[layer]
        size = {Layer.USER: self.m, Layer.PREFERENCE: self.preference_count,
                Layer.REPRESENTATIVE: 2 * self.n}[layer]
        if not 0 <= ordinal < size:
            raise KeyError((layer, ordinal))
        return base + ordinal

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def user_preferences(self, user: int) -> np.ndarray:
        """Global preference nodes linked to ``user``."""
        return self.neighbors(user)

    def save(self, path) -> None:
        """Binary snapshot: magic, u64 header, u64 offsets, u32 neighbors."""
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<5Q", self.m, self.n, self.preference_count,
                                self.edge_count, int(self.pruned)))
            f.write(self.indptr.astype("<u8").tobytes())
            f.write(self.indices.astype("<u4").tobytes())

    @classmethod
    def load(cls, path) -> Tpg:
        with open(path, "rb") as f:
            if f.read(4) != MAGIC:
                raise TpgBuildError(f"{path}: not a TPG1 snapshot")
            m, n, p, e, pruned = struct.unpack("<5Q", f.read(40))
            v = m + p + 2 * n
            indptr = np.frombuffer(f.read(8 * (v + 1)), dtype="<u8").astype(np.int64)
            indices = np.frombuffer(f.read(4 * 2 * e), dtype="<u4").astype(np.int32)
        if len(indices) != 2 * e or indptr[-1] != 2 * e:
            raise TpgBuildError(f"{path}: truncated snapshot")
        # user rows list their preference nodes; recover E_UP from them
        up_user = np.repeat(np.arange(m), np.diff(indptr[:m + 1]))
        up_pref = indices[:indptr[m]].astype(np.int64) - m
        if pruned:
            # each pruned preference row ends with its two representatives
            ends = indptr[m + 1:m + p + 1]
            r1 = indices[ends - 2].astype(np.int64) - (m + p)
            r2 = indices[ends - 1].astype(np.int64) - (m + p)
            rd = np.where(r1 % 2 == 0, r1, r2)
            ru = np.where(r1 % 2 == 0, r2, r1)
            d, u = rd // 2, ru // 2
            held = preference_ordinals(d, u, n) if p else np.empty(0, np.int64)
            up_held = up_pref
        else:
            held, up_held = np.unique(up_pref, return_inverse=True)
        return cls(int(m), int(n), int(p), bool(pruned), indptr, indices,
                   held.astype(np.int64), up_user.astype(np.int64), up_held.astype(np.int64))

    def dump(self, path) -> None:
        """Plain-text adjacency, one ``node: neighbors...`` line per node."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for v in range(self.vertex_count):
                nb = " ".join(map(str, self.neighbors(v).tolist()))
                f.write(f"{v}: {nb}\n")


def _universe_size(x) -> int:
    return int(x) if np.isscalar(x) else len(x)


def build_tpg(users, items, observations, pruned: bool = False) -> Tpg:
    """Build the graph; ``users``/``items`` are universe sizes or sequences of ids."""
    m, n = _universe_size(users), _universe_size(items)
    if not isinstance(observations, ObservationSet):
        observations = ObservationSet(list(observations))
    obs = observations.array
    if len(obs):
        if obs[:, 0].min() < 0 or obs[:, 0].max() >= m:
            raise TpgBuildError(f"observation user out of range [0, {m})")
        if obs[:, 1:].min() < 0 or obs[:, 1:].max() >= n:
            raise TpgBuildError(f"observation item out of range [0, {n})")

    ords = preference_ordinals(obs[:, 1], obs[:, 2], n) if len(obs) else np.empty(0, np.int64)
    up = np.unique(np.column_stack([obs[:, 0], ords]), axis=0) if len(obs) else np.empty((0, 2), np.int64)
    held, up_held = np.unique(up[:, 1], return_inverse=True)
    up_held = up_held.ravel()

    if pruned:
        p = len(held)
        pref_nodes_ord = held
        up_pref_node = m + up_held
    else:
        p = n * (n - 1)
        pref_nodes_ord = np.arange(p, dtype=np.int64)
        up_pref_node = m + up[:, 1]
    rep_base = m + p
    pd, pu = preference_pairs(pref_nodes_ord, n) if p else (np.empty(0, np.int64),) * 2
    pref_nodes = m + np.arange(p, dtype=np.int64)

    src = np.concatenate([up[:, 0], pref_nodes, pref_nodes])
    dst = np.concatenate([up_pref_node, rep_base + 2 * pd, rep_base + 2 * pu + 1])
    indptr, indices = symmetric_csr(m + p + 2 * n, src, dst)
    return Tpg(m, n, p, pruned, indptr, indices, held.astype(np.int64),
               up[:, 0].astype(np.int64), up_held.astype(np.int64))
