import numpy as np
import pytest

from conftest import random_adjacency, random_ratings
from grank import kernels
from grank.ingest import ratings_to_observations
from grank.ppr import (FactoredTpgTransition, PersonalizationVector, PprConfig, TransitionModel,
                       personalized_pagerank, personalized_pagerank_many, solve_dense_oracle,
                       transition_apply)
from grank.tpg import build_tpg

TIGHT = PprConfig(tolerance=1e-12, max_iterations=1000)


def line(n):
    A = np.zeros((n, n))
    for i in range(n - 1):
        A[i, i + 1] = A[i + 1, i] = 1
    return A


class TestConfig:
    @pytest.mark.parametrize("kw", [{"alpha": 0}, {"alpha": 1}, {"tolerance": -1}, {"max_iterations": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PprConfig(**kw)

    def test_personalization_vector(self):
        pv = PersonalizationVector(2, 4).dense()
        assert pv.sum() == 1 and pv[2] == 1 and np.count_nonzero(pv) == 1


class TestApply:
    def test_single_edge(self):
        m = TransitionModel.from_dense(line(2))
        assert transition_apply(m, [1, 0]).tolist() == [0, 1]

    def test_triangle_uniform_stationary(self):
        m = TransitionModel.from_dense(np.ones((3, 3)) - np.eye(3))
        np.testing.assert_allclose(transition_apply(m, np.full(3, 1 / 3)), 1 / 3)

    def test_path(self):
        m = TransitionModel.from_dense(line(3))
        assert transition_apply(m, [1, 0, 0]).tolist() == [0, 1, 0]

    def test_columns_stochastic(self):
        A = random_adjacency(np.random.default_rng(0), 30, weighted=True)
        m = TransitionModel.from_dense(A)
        T = np.column_stack([transition_apply(m, e) for e in np.eye(30)])
        np.testing.assert_allclose(T.sum(axis=0), 1.0, atol=1e-14)

    def test_dangling_mass_goes_to_target(self):
        A = line(2)
        A = np.pad(A, ((0, 1), (0, 1)))  # node 2 isolated
        m = TransitionModel.from_dense(A)
        assert transition_apply(m, [0, 0, 1.0], target=0).tolist() == [1.0, 0, 0]


class TestSolve:
    def test_alpha_near_zero(self):
        m = TransitionModel.from_dense(line(4))
        p = personalized_pagerank(m, 1, PprConfig(alpha=1e-12))
        assert p.values[1] == pytest.approx(1.0, abs=1e-11)

    def test_two_nodes_closed_form(self):
        a = 0.85
        p = personalized_pagerank(TransitionModel.from_dense(line(2)), 0, TIGHT)
        x0 = (1 - a) / (1 - a * a)
        np.testing.assert_allclose(p.values, [x0, 1 - x0], atol=1e-12)
        assert p.values[0] > p.values[1]

    def test_disconnected_component(self):
        A = np.zeros((5, 5))
        A[0, 1] = A[1, 0] = A[2, 3] = A[3, 2] = A[3, 4] = A[4, 3] = 1
        p = personalized_pagerank(TransitionModel.from_dense(A), 0, TIGHT)
        assert p.values[:2].sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(p.values[2:] <= 1e-15)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_oracle(self, seed):
        rng = np.random.default_rng(seed)
        A = random_adjacency(rng, int(rng.integers(5, 50)), weighted=seed % 2 == 1)
        t = int(rng.integers(len(A)))
        p = personalized_pagerank(TransitionModel.from_dense(A), t, TIGHT)
        assert np.abs(p.values - solve_dense_oracle(A, t, 0.85)).sum() < 1e-9

    def test_conservation_and_monotone_change(self):
        rng = np.random.default_rng(4)
        A = random_adjacency(rng, 40, p=0.2)
        p = personalized_pagerank(TransitionModel.from_dense(A), 3, TIGHT, seed=11, trace=True)
        diffs = np.array([d for d, _ in p.history])
        masses = np.array([s for _, s in p.history])
        assert np.all(np.abs(masses - 1) <= 1e-9)
        assert np.all(diffs[2:] <= diffs[1:-1] * (1 + 1e-9) + 1e-15)

    def test_initialization_independence(self):
        A = random_adjacency(np.random.default_rng(5), 40, p=0.2)
        m = TransitionModel.from_dense(A)
        cfg = PprConfig(tolerance=1e-10, max_iterations=1000)
        a = personalized_pagerank(m, 0, cfg, seed=1).values
        b = personalized_pagerank(m, 0, cfg, seed=2).values
        assert np.abs(a - b).sum() <= 10 * cfg.tolerance / (1 - cfg.alpha)

    def test_non_convergence_reported(self):
        p = personalized_pagerank(TransitionModel.from_dense(line(6)), 0, PprConfig(max_iterations=2))
        assert not p.converged and p.iterations_used == 2

    def test_block_equals_solo(self):
        A = random_adjacency(np.random.default_rng(6), 45, p=0.2)
        m = TransitionModel.from_dense(A)
        many = personalized_pagerank_many(m, range(10), block=4)
        for t, p in enumerate(many):
            solo = personalized_pagerank(m, t)
            assert np.array_equal(p.values, solo.values)
            assert p.iterations_used == solo.iterations_used

    def test_csv(self, tmp_path):
        p = personalized_pagerank(TransitionModel.from_dense(line(3)), 0)
        p.to_csv(tmp_path / "p.csv")
        lines = (tmp_path / "p.csv").read_text().splitlines()
        assert lines[0] == "node,value" and len(lines) == 4
        assert float(lines[1].split(",")[1]) == p.values[0]


def test_literal_reading_leaks_mass():
    # row-normalized reading: mass is not conserved on irregular graphs
    m = TransitionModel.from_dense(line(3), literal=True)
    p = personalized_pagerank(m, 0, PprConfig(max_iterations=50), trace=True)
    assert abs(p.history[-1][1] - 1) > 1e-3


def _small_tpg(seed, m=6, n=7, pruned=False):
    rng = np.random.default_rng(seed)
    obs = ratings_to_observations(random_ratings(rng, m, n, (2, 6)))
    return build_tpg(m, n, obs, pruned=pruned)


class TestFactored:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_explicit_graph(self, seed):
        g = _small_tpg(seed)
        explicit = TransitionModel.from_tpg(g, factored=False)
        factored = TransitionModel.from_tpg(g)
        assert isinstance(factored, FactoredTpgTransition)
        for u in range(g.m):
            if g.degrees[u] == 0:
                continue
            a = personalized_pagerank(explicit, u, TIGHT)
            b = personalized_pagerank(factored, u, TIGHT, trace=True)
            assert np.abs(a.values - b.values).sum() < 1e-10
            assert all(abs(s - 1) < 1e-9 for _, s in b.history)

    def test_matches_dense_oracle(self):
        g = _small_tpg(9, m=4, n=5)
        A = np.zeros((g.vertex_count,) * 2)
        rows = np.repeat(np.arange(g.vertex_count), g.degrees)
        A[rows, g.indices] = 1
        p = personalized_pagerank(TransitionModel.from_tpg(g), 0, TIGHT)
        assert np.abs(p.values - solve_dense_oracle(A, 0, 0.85)).sum() < 1e-9

    def test_same_iteration_counts(self):
        g = _small_tpg(2)
        cfg = PprConfig(tolerance=1e-6)
        a = personalized_pagerank(TransitionModel.from_tpg(g, factored=False), 0, cfg)
        b = personalized_pagerank(TransitionModel.from_tpg(g), 0, cfg)
        assert a.iterations_used == b.iterations_used

    def test_values_at(self):
        g = _small_tpg(1)
        p = personalized_pagerank(TransitionModel.from_tpg(g), 0)
        nodes = np.arange(g.vertex_count)
        np.testing.assert_array_equal(p.at(nodes), p.values)

    def test_rejects_pruned(self):
        with pytest.raises(ValueError):
            FactoredTpgTransition(_small_tpg(0, pruned=True))

    def test_unstated_preference_is_not_a_target(self):
        g = build_tpg(1, 3, [(0, 0, 1)])
        with pytest.raises(ValueError):
            personalized_pagerank(TransitionModel.from_tpg(g), g.preference_node(2, 1))


@pytest.mark.skipif(len(kernels.available()) < 2, reason="compiled kernels not built")
class TestBackends:
    def test_spmm_parity(self):
        rng = np.random.default_rng(0)
        A = random_adjacency(rng, 60, weighted=True)
        m = TransitionModel.from_dense(A)
        Z = rng.random((60, 5))
        outs = []
        for impl in kernels.available():
            op = kernels.CsrOperator(m.indptr, m.indices, 60, m.weights, impl=impl)
            outs.append(op(Z))
            outs.append(op(Z[:, :1]))
        np.testing.assert_allclose(outs[0], outs[2], rtol=1e-14)
        np.testing.assert_allclose(outs[1], outs[3], rtol=1e-14)

    def test_ppr_parity(self):
        g = _small_tpg(3)
        vals = [personalized_pagerank(TransitionModel.from_tpg(g, impl=impl), 0, TIGHT).values
                for impl in kernels.available()]
        np.testing.assert_allclose(vals[0], vals[1], atol=1e-14)

    def test_compiled_is_selected(self):
        assert kernels.BACKEND == "cython"
