from pathlib import Path

import numpy as np
import pytest

from grank.ingest import ObservationSet, RatingTable

ROOT = Path(__file__).resolve().parents[1]
ML100K = ROOT / "data" / "ml-100k" / "u.data"

A, B, C, D = range(4)

# Four items A..D, five users; u1, u2 and u5 state one preference each.
FIG3_OBSERVATIONS = [
    (0, A, B),
    (1, D, B),
    (4, D, C),
    (2, A, B), (2, D, C), (2, A, C),
    (3, A, B), (3, D, C), (3, B, C),
]


@pytest.fixture
def fig3():
    return ObservationSet(FIG3_OBSERVATIONS)


@pytest.fixture(scope="session")
def ml100k_path():
    if not ML100K.is_file():
        pytest.skip(f"{ML100K} missing; run scripts/fetch_ml100k.py")
    return ML100K


def random_ratings(rng, m, n, per_user, scale=5) -> RatingTable:
    users, items = [], []
    for u in range(m):
        k = min(n, per_user if np.isscalar(per_user) else int(rng.integers(*per_user)))
        items += rng.choice(n, k, replace=False).tolist()
        users += [u] * k
    ratings = rng.integers(1, scale + 1, len(users)).astype(float)
    return RatingTable(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64), ratings,
                       n_users=m, n_items=n)


def random_adjacency(rng, n, p=0.15, weighted=False):
    A = np.triu(rng.random((n, n)) < p, 1).astype(float)
    if weighted:
        A *= rng.integers(1, 6, A.shape)
    return A + A.T


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one verdict line per acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(ACCEPTANCE, {})

    def record(number: int, ok: bool, detail: str):
        lines[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
