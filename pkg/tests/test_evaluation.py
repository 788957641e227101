import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from conftest import random_ratings
from grank.evaluation import (EvalReport, ScalabilityPoint, fit_trend, ndcg_at_k, paired_ttest, pooled_ttest,
                              run_experiment, scalability_run, write_report_csv, write_scalability_csv,
                              write_ttest_csv)
from grank.ingest import SplitSpec, split
from grank.scoring import ColdStartError


class TestNdcg:
    def test_ideal_is_one(self):
        r = {1: 5, 2: 3, 3: 4, 4: 1}
        assert ndcg_at_k([1, 3, 2, 4], r, 3).value == 1.0

    def test_worked_example(self):
        got = ndcg_at_k([2, 1], {1: 5, 2: 1}, 2).value
        dcg = 1 + 31 / math.log2(3)
        idcg = 31 + 1 / math.log2(3)
        assert got == pytest.approx(dcg / idcg, abs=1e-12)
        assert got == pytest.approx(0.6499595, abs=1e-7)

    def test_single_item(self):
        assert ndcg_at_k([7], {7: 2}, 1).value == 1.0

    def test_zero_ideal_gain(self):
        assert ndcg_at_k([1, 2], {1: 0, 2: 0}, 2).value == 1.0

    def test_invariant_beyond_k(self):
        r = {i: (i * 3) % 5 + 1 for i in range(10)}
        a = ndcg_at_k([0, 1, 2, 3, 4, 5, 6, 7, 8, 9], r, 4).value
        b = ndcg_at_k([0, 1, 2, 3, 9, 8, 7, 6, 5, 4], r, 4).value
        assert a == b

    def test_bad_k(self):
        with pytest.raises(ValueError):
            ndcg_at_k([1], {1: 3}, 0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 5), min_size=2, max_size=15), st.integers(1, 15), st.data())
    def test_adjacent_swap_monotone(self, ratings, k, data):
        r = dict(enumerate(ratings))
        order = data.draw(st.permutations(list(r)))
        pos = data.draw(st.integers(0, len(order) - 2))
        a, b = order[pos], order[pos + 1]
        if r[b] <= r[a]:
            return
        swapped = list(order)
        swapped[pos], swapped[pos + 1] = b, a
        before, after = ndcg_at_k(order, r, k).value, ndcg_at_k(swapped, r, k).value
        assert after >= before - 1e-15
        assert 0 <= before <= 1 + 1e-15


class TestTTest:
    def test_equal_samples(self):
        res = paired_ttest([0.1, 0.5, 0.3], [0.1, 0.5, 0.3])
        assert (res.mean_diff, res.t, res.p, res.degenerate) == (0, 0, 1, False)

    def test_degenerate(self):
        res = paired_ttest([2, 2, 2, 2], [1, 1, 1, 1])
        assert res.degenerate and res.p == 0 and res.mean_diff == 1

    def test_worked_example_against_scipy(self):
        d = np.array([0.02, 0.01, 0.03, 0.00, 0.02])
        res = paired_ttest(d, np.zeros(5))
        ref = stats.ttest_rel(d, np.zeros(5))
        assert res.t == pytest.approx(ref.statistic, rel=1e-12)
        assert res.p == pytest.approx(ref.pvalue, rel=1e-10)
        assert res.t == pytest.approx(d.mean() / (d.std(ddof=1) / math.sqrt(5)), rel=1e-12)

    def test_antisymmetry(self):
        rng = np.random.default_rng(0)
        a, b = rng.random(30), rng.random(30)
        x, y = paired_ttest(a, b), paired_ttest(b, a)
        assert x.t == -y.t and x.p == y.p

    @pytest.mark.parametrize("a,b", [([1.0], [2.0]), ([1, 2], [1])])
    def test_invalid(self, a, b):
        with pytest.raises(ValueError):
            paired_ttest(a, b)


@pytest.fixture(scope="module")
def datasets():
    t = random_ratings(np.random.default_rng(5), 30, 40, 30)
    return split(t, SplitSpec(15, min_test_items=10, variants=2, rng_seed=1))


class _Oracle:
    """Ranks candidates by their true test rating (ideal) or by a seeded shuffle."""

    def __init__(self, ds, ideal, seed=0):
        self.lookup = dict(zip(zip(ds.test.user.tolist(), ds.test.item.tolist()), ds.test.rating.tolist()))
        self.ideal, self.seed = ideal, seed

    def rank_many(self, users, candidates):
        out = []
        for u in users:
            items = np.asarray(candidates[u])
            if self.ideal:
                key = [-self.lookup[(u, int(i))] for i in items]
                out.append(items[np.lexsort((items, key))])
            else:
                out.append(np.random.default_rng([self.seed, u]).permutation(items))
        return out


class TestRunExperiment:
    def test_ideal_beats_random(self, datasets):
        def ideal(ds):
            return _Oracle(ds, True)

        def shuffled(ds):
            return _Oracle(ds, False)

        a = run_experiment(datasets, ideal)
        b = run_experiment(datasets, shuffled)
        for ra, rb in zip(a, b):
            assert ra.mean_ndcg(10) == 1.0
            assert ra.mean_ndcg(10) > rb.mean_ndcg(10)

    def test_identical_rankers_identical_reports(self, datasets, tmp_path):
        r1 = run_experiment(datasets, "bgr", ks=(1, 5))
        r2 = run_experiment(datasets, "bgr", ks=(1, 5), threads=3)
        write_report_csv(r1, tmp_path / "a.csv")
        write_report_csv(r2, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        for r in r1:
            assert r.mean_ndcg(5) == pytest.approx(float(np.mean(r.ndcg[5])))
            assert r.n_users == len(datasets[0].users)

    @pytest.mark.parametrize("alg", ["grank", "wbgr", "eigenrank"])
    def test_algorithms_run(self, datasets, alg):
        reps = run_experiment(datasets[:1], alg, ks=(3,), pruned=alg == "grank")
        assert 0 < reps[0].mean_ndcg(3) <= 1

    def test_cold_start_users_skipped(self, datasets):
        class Picky:
            def rank_many(self, users, candidates):
                return [ColdStartError("x") if u % 2 else np.asarray(candidates[u]) for u in users]

        rep = run_experiment(datasets[:1], lambda ds: Picky())[0]
        assert rep.skipped and all(u % 2 for u in rep.skipped)
        assert all(u % 2 == 0 for u in rep.users)

    def test_pooled_ttest_pairs_users(self, datasets):
        a = run_experiment(datasets, "wbgr", ks=(10,))
        b = run_experiment(datasets, "bgr", ks=(10,))
        res = pooled_ttest(a, b, 10)
        assert res.n == sum(r.n_users for r in a)
        assert 0 <= res.p <= 1


def test_ttest_csv(tmp_path):
    res = paired_ttest([0.3, 0.4, 0.5], [0.1, 0.4, 0.2], "grank", "bgr")
    write_ttest_csv([(50, 10, res)], tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "T,K,algorithm_vs,p_value"
    assert lines[1].startswith("50,10,grank_vs_bgr,")
    assert float(lines[1].rsplit(",", 1)[1]) == res.p


@pytest.fixture(scope="module")
def ds():
    t = random_ratings(np.random.default_rng(8), 25, 30, 12)
    return split(t, SplitSpec(10, min_test_items=2, variants=1))[0]


class TestScalability:
    @pytest.mark.parametrize("factor", ["M", "N", "S"])
    def test_points(self, ds, factor, tmp_path):
        pts = scalability_run(ds, factor, (0.5, 1.0), batch=1, repeats=2)
        assert [p.level for p in pts] == [0.5, 1.0]
        assert all(p.mean_seconds > 0 for p in pts)
        assert pts[0].size < pts[1].size
        write_scalability_csv(pts, tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().startswith("factor,level,mean_seconds,std_seconds,size\n")

    def test_single_level_no_fit(self, ds):
        pts = scalability_run(ds, "S", (1.0,), batch=1, repeats=1)
        assert len(pts) == 1 and fit_trend(pts) is None

    def test_empty_level_skipped(self, ds, caplog):
        pts = scalability_run(ds, "N", (0.01, 1.0), batch=1, repeats=1)
        assert [p.level for p in pts] == [1.0]
        assert "empty subsample" in caplog.text

    def test_bad_factor(self, ds):
        with pytest.raises(ValueError):
            scalability_run(ds, "Q")


def test_fit_trend_shapes():
    quad = [ScalabilityPoint("N", x / 5, x, 0.01 * x * x, 0) for x in range(1, 6)]
    flat = [ScalabilityPoint("M", x / 5, x * 100, 1.0 + 0.001 * (-1) ** x, 0) for x in range(1, 6)]
    q = fit_trend(quad)
    assert q.quadratic_residual < q.linear_residual
    assert fit_trend(flat).normalized_slope < 0.2


def test_report_mean_is_average():
    rep = EvalReport("x", "d", 0, 20, (1,), np.array([0, 1]), {1: np.array([0.25, 0.75])})
    assert rep.mean_ndcg(1) == 0.5
