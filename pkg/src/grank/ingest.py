"""Raw feedback parsing, preference-observation rules and train/test splits."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

_log = logging.getLogger(__name__)

FORMATS = ("ml-100k", "ml-1m", "auto")


class ParseError(ValueError):
    """A malformed line in a ratings file."""

    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class ValidationError(ValueError):
    pass


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RatingRecord:
    user: int
    item: int
    rating: float
    timestamp: int | None = None


class Observation(NamedTuple):
    """User ``user`` preferred ``desirable`` over ``undesirable``."""

    user: int
    desirable: int
    undesirable: int


@dataclass(frozen=True)
class Session:
    user: int
    bought: frozenset
    clicked_not_bought: frozenset

    def __post_init__(self):
        object.__setattr__(self, "bought", frozenset(self.bought))
        object.__setattr__(self, "clicked_not_bought", frozenset(self.clicked_not_bought))
        if self.bought & self.clicked_not_bought:
            raise ValidationError("session bought/clicked sets overlap")


@dataclass(frozen=True)
class SplitSpec:
    train_per_user: int
    min_test_items: int = 10
    variants: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.train_per_user < 1 or self.min_test_items < 1 or self.variants < 1:
            raise ValidationError(f"invalid split spec {self}")


class IdMap:
    """Bidirectional raw-id <-> dense 0-based id mapping."""

    def __init__(self, raw_ids: Sequence[str]):
        self.raw = list(raw_ids)
        self._dense = {r: i for i, r in enumerate(self.raw)}

    @classmethod
    def from_raw(cls, values: Iterable[str]) -> IdMap:
        uniq = set(values)
        try:
            ordered = sorted(uniq, key=int)
        except ValueError:
            ordered = sorted(uniq)
        return cls(ordered)

    def __len__(self):
        return len(self.raw)

    def dense(self, raw) -> int:
        return self._dense[str(raw)]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, r in enumerate(self.raw):
                f.write(f"{r}\t{i}\n")

    @classmethod
    def load(cls, path) -> IdMap:
        pairs = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise ParseError(path, lineno, "expected 'raw<TAB>dense'")
                pairs.append((int(parts[1]), parts[0]))
        pairs.sort()
        if [d for d, _ in pairs] != list(range(len(pairs))):
            raise ValidationError(f"{path}: dense ids are not contiguous")
        return cls([r for _, r in pairs])


@dataclass(eq=False)
class RatingTable(Sequence):
    """Columnar rating records; indexing yields :class:`RatingRecord`."""

    user: np.ndarray
    item: np.ndarray
    rating: np.ndarray
    timestamp: np.ndarray | None = None
    n_users: int | None = None
    n_items: int | None = None
    user_ids: IdMap | None = field(default=None, repr=False)
    item_ids: IdMap | None = field(default=None, repr=False)

    def __post_init__(self):
        self.user = np.asarray(self.user, dtype=np.int64)
        self.item = np.asarray(self.item, dtype=np.int64)
        self.rating = np.asarray(self.rating, dtype=np.float64)
        if self.timestamp is not None:
            self.timestamp = np.asarray(self.timestamp, dtype=np.int64)
        if self.n_users is None:
            self.n_users = int(self.user.max()) + 1 if len(self.user) else 0
        if self.n_items is None:
            self.n_items = int(self.item.max()) + 1 if len(self.item) else 0

    @classmethod
    def from_records(cls, records: Iterable[RatingRecord], n_users=None, n_items=None) -> RatingTable:
        if isinstance(records, RatingTable):
            return records
        recs = list(records)
        ts = None
        if recs and all(r.timestamp is not None for r in recs):
            ts = [r.timestamp for r in recs]
        return cls(
            [r.user for r in recs],
            [r.item for r in recs],
            [r.rating for r in recs],
            ts,
            n_users=n_users,
            n_items=n_items,
        )

    def __len__(self):
        return len(self.user)

    def __getitem__(self, idx):
        if isinstance(idx, slice) or isinstance(idx, np.ndarray):
            return self.subset(np.arange(len(self))[idx] if isinstance(idx, slice) else idx)
        ts = None if self.timestamp is None else int(self.timestamp[idx])
        return RatingRecord(int(self.user[idx]), int(self.item[idx]), float(self.rating[idx]), ts)

    def subset(self, idx) -> RatingTable:
        return RatingTable(
            self.user[idx],
            self.item[idx],
            self.rating[idx],
            None if self.timestamp is None else self.timestamp[idx],
            n_users=self.n_users,
            n_items=self.n_items,
            user_ids=self.user_ids,
            item_ids=self.item_ids,
        )

    def sorted(self) -> RatingTable:
        return self.subset(np.lexsort((self.item, self.user)))

    def by_user(self) -> dict[int, np.ndarray]:
        """Row indices grouped per user, each group sorted by item id."""
        order = np.lexsort((self.item, self.user))
        users, starts = np.unique(self.user[order], return_index=True)
        bounds = list(starts[1:]) + [len(order)]
        return {int(u): order[s:e] for u, s, e in zip(users, starts, bounds)}

    def items_of(self, user: int) -> np.ndarray:
        return np.sort(self.item[self.user == user])


def _detect_format(first_line: str) -> str:
    return "ml-1m" if "::" in first_line else "ml-100k"


def parse_ratings(path, format: str = "auto", scale: tuple[float, float] = (1, 5)) -> RatingTable:
    """Read a MovieLens ratings file (``u.data`` or ``ratings.dat``).

    Raw user/item ids are remapped to dense indices in ascending raw-id order;
    the maps are attached as ``user_ids`` and ``item_ids``.
    """
    if format not in FORMATS:
        raise ValidationError(f"unknown format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    raw_rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            if format == "auto":
                format = _detect_format(line)
            parts = line.split("::") if format == "ml-1m" else line.split("\t")
            if len(parts) not in (3, 4):
                raise ParseError(path, lineno, f"expected 3 or 4 fields, got {len(parts)}")
            try:
                rating = float(parts[2])
                ts = int(parts[3]) if len(parts) == 4 else None
            except ValueError as e:
                raise ParseError(path, lineno, str(e)) from None
            if not scale[0] <= rating <= scale[1]:
                raise ValidationError(f"{path}:{lineno}: rating {rating} outside scale {scale}")
            raw_rows.append((parts[0].strip(), parts[1].strip(), rating, ts))

    user_ids = IdMap.from_raw(r[0] for r in raw_rows)
    item_ids = IdMap.from_raw(r[1] for r in raw_rows)
    users = np.fromiter((user_ids.dense(r[0]) for r in raw_rows), np.int64, len(raw_rows))
    items = np.fromiter((item_ids.dense(r[1]) for r in raw_rows), np.int64, len(raw_rows))
    ratings = np.fromiter((r[2] for r in raw_rows), np.float64, len(raw_rows))
    ts = None
    if raw_rows and all(r[3] is not None for r in raw_rows):
        ts = np.fromiter((r[3] for r in raw_rows), np.int64, len(raw_rows))

    if len(users):
        keys = users * len(item_ids) + items
        if len(np.unique(keys)) != len(keys):
            raise ValidationError(f"{path}: duplicate (user, item) ratings")
    return RatingTable(
        users, items, ratings, ts,
        n_users=len(user_ids), n_items=len(item_ids),
        user_ids=user_ids, item_ids=item_ids,
    )


class ObservationSet:
    """An immutable set of preference triples backed by a sorted ``(S, 3)`` array."""

    def __init__(self, triples=()):
        arr = np.asarray(triples, dtype=np.int64)
        if arr.size == 0:
            arr = np.empty((0, 3), dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != 3:
            raise ValidationError("observations must be (user, desirable, undesirable) triples")
        if np.any(arr[:, 1] == arr[:, 2]):
            raise ValidationError("observation with desirable == undesirable")
        arr = np.unique(arr, axis=0)
        arr.setflags(write=False)
        self._arr = arr
        self._members = None

    @property
    def array(self) -> np.ndarray:
        return self._arr

    @property
    def users(self) -> np.ndarray:
        return self._arr[:, 0]

    @property
    def desirable(self) -> np.ndarray:
        return self._arr[:, 1]

    @property
    def undesirable(self) -> np.ndarray:
        return self._arr[:, 2]

    def __len__(self):
        return len(self._arr)

    def __iter__(self) -> Iterator[Observation]:
        for u, i, j in self._arr.tolist():
            yield Observation(u, i, j)

    def __contains__(self, obs) -> bool:
        if self._members is None:
            self._members = frozenset(map(tuple, self._arr.tolist()))
        return tuple(int(x) for x in obs) in self._members

    def __eq__(self, other):
        if isinstance(other, ObservationSet):
            return np.array_equal(self._arr, other._arr)
        if isinstance(other, (set, frozenset)):
            return set(self) == other
        return NotImplemented

    def __repr__(self):
        return f"ObservationSet({len(self)} triples)"

    def union(self, other: ObservationSet) -> ObservationSet:
        return ObservationSet(np.vstack([self._arr, other._arr]))

    def for_user(self, user: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.users, [user, user + 1])
        return self._arr[lo:hi]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for u, i, j in self._arr.tolist():
                f.write(f"{u}\t{i}\t{j}\n")

    @classmethod
    def load(cls, path) -> ObservationSet:
        rows = []
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != 3:
                    raise ParseError(path, lineno, "expected 3 tab-separated ids")
                try:
                    rows.append([int(p) for p in parts])
                except ValueError as e:
                    raise ParseError(path, lineno, str(e)) from None
        return cls(rows)


def _pairs_for_user(items: np.ndarray, ratings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    better = ratings[:, None] > ratings[None, :]
    di, ui = np.nonzero(better)
    return items[di], items[ui]


def ratings_to_observations(records) -> ObservationSet:
    """Every strictly ordered pair of items rated by the same user (ties dropped)."""
    table = RatingTable.from_records(records)
    if len(table) == 0:
        return ObservationSet()
    chunks = []
    for user, rows in table.by_user().items():
        nz = rows[table.rating[rows] != 0]
        d, u = _pairs_for_user(table.item[nz], table.rating[nz])
        if len(d):
            chunks.append(np.column_stack([np.full(len(d), user), d, u]))
    return ObservationSet(np.vstack(chunks) if chunks else ())


def feedback_to_observations(likes, dislikes) -> ObservationSet:
    """Cross every liked item with every disliked item of the same user.

    ``likes`` and ``dislikes`` are user x item matrices (dense or scipy sparse);
    non-zero entries mark feedback.
    """
    import scipy.sparse as sp

    L = sp.csr_matrix(likes)
    D = sp.csr_matrix(dislikes)
    if L.shape != D.shape:
        raise ValidationError(f"like/dislike shapes differ: {L.shape} vs {D.shape}")
    L.eliminate_zeros()
    D.eliminate_zeros()
    chunks = []
    for u in range(L.shape[0]):
        liked = L.indices[L.indptr[u]:L.indptr[u + 1]]
        disliked = D.indices[D.indptr[u]:D.indptr[u + 1]]
        if len(liked) == 0 or len(disliked) == 0:
            continue
        both = np.intersect1d(liked, disliked)
        if len(both):
            _log.warning("user %d both likes and dislikes items %s", u, both.tolist())
        d, n = np.meshgrid(liked, disliked, indexing="ij")
        d, n = d.ravel(), n.ravel()
        keep = d != n
        chunks.append(np.column_stack([np.full(keep.sum(), u), d[keep], n[keep]]))
    return ObservationSet(np.vstack(chunks) if chunks else ())


def sessions_to_observations(sessions: Iterable[Session]) -> ObservationSet:
    rows = [
        (s.user, i, j)
        for s in sessions
        for i in sorted(s.bought)
        for j in sorted(s.clicked_not_bought)
    ]
    return ObservationSet(rows)


@dataclass(eq=False)
class Dataset:
    n_users: int
    n_items: int
    train: RatingTable
    test: RatingTable
    variant: int = 0
    spec: SplitSpec | None = None

    @property
    def users(self) -> np.ndarray:
        """Retained (test) users, ascending."""
        return np.unique(self.test.user)

    def train_observations(self) -> ObservationSet:
        return ratings_to_observations(self.train)

    def train_profile(self) -> dict[int, np.ndarray]:
        return {u: self.train.item[rows] for u, rows in self.train.by_user().items()}


def _user_rng(seed: int, variant: int, user: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed, variant, user])
    return np.random.Generator(np.random.Philox(ss))


def split(records, spec: SplitSpec) -> list[Dataset]:
    """Per-user random train/test splits, one :class:`Dataset` per variant.

    Users with fewer than ``train_per_user + min_test_items`` ratings are
    dropped from both partitions.
    """
    table = RatingTable.from_records(records)
    groups = table.by_user()
    need = spec.train_per_user + spec.min_test_items
    kept = {u: rows for u, rows in groups.items() if len(rows) >= need}
    if not kept:
        raise EmptyDatasetError(f"no user has at least {need} ratings")

    out = []
    for v in range(spec.variants):
        train_idx, test_idx = [], []
        for u, rows in kept.items():
            pick = _user_rng(spec.rng_seed, v, u).permutation(len(rows))
            train_idx.append(np.sort(rows[pick[:spec.train_per_user]]))
            test_idx.append(np.sort(rows[pick[spec.train_per_user:]]))
        out.append(Dataset(
            table.n_users, table.n_items,
            table.subset(np.concatenate(train_idx)),
            table.subset(np.concatenate(test_idx)),
            variant=v, spec=spec,
        ))
    _log.info("split: %d of %d users kept (T=%d), %d variants",
              len(kept), len(groups), spec.train_per_user, spec.variants)
    return out


def write_ratings(table: RatingTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for k in range(len(table)):
            r = table.rating[k]
            rs = str(int(r)) if float(r).is_integer() else repr(float(r))
            ts = "" if table.timestamp is None else f"\t{table.timestamp[k]}"
            f.write(f"{table.user[k]}\t{table.item[k]}\t{rs}{ts}\n")
