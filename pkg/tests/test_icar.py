import math

import numpy as np
import pytest
from helpers import grid_moments, random_connected_graph

from arealbayes.errors import ValidationError
from arealbayes.graph import build_graph
from arealbayes.icar import (
    IcarField,
    center_by_component,
    gibbs_sweep_values,
    icar_conditional,
    icar_logdensity_unnormalized,
    precision_matrix,
    project_sum_to_zero,
    quad_form_and_rank,
    sample_icar_gibbs_sweep,
)
from arealbayes.simulate import make_lattice


class TestConditional:
    def test_two_node_antithetic(self):
        g = build_graph([(0, 1, 1.0)])
        field = IcarField(g, np.array([0.7, -0.7]), variance=2.0)
        mean, var = icar_conditional(field, 0)
        assert mean == -0.7
        assert var == 2.0

    def test_interior_lattice_node_constant_neighbourhood(self):
        g = make_lattice(3, 3)
        values = np.full(9, 3.5)
        field = IcarField(g, values, variance=1.0)
        mean, var = icar_conditional(field, 4)  # center node, degree 4
        assert mean == pytest.approx(3.5)
        assert var == pytest.approx(0.25)

    def test_matches_quadratic_form_completion_on_random_graph(self):
        # completing the square in x_i for exp(-x'Qx / (2 s2)) gives
        # mean -Q_ij x_j / Q_ii and variance s2 / Q_ii
        rng = np.random.default_rng(42)
        g = build_graph(random_connected_graph(rng, 6, extra_edges=4), n_areas=6)
        x = rng.standard_normal(6)
        s2 = 1.7
        field = IcarField(g, x, variance=s2)
        q = precision_matrix(g)
        for i in range(6):
            mean, var = icar_conditional(field, i)
            oracle_mean = -(q[i] @ x - q[i, i] * x[i]) / q[i, i]
            oracle_var = s2 / q[i, i]
            assert abs(mean - oracle_mean) < 1e-10
            assert abs(var - oracle_var) < 1e-10

    def test_island_rejected(self):
        g = build_graph([(0, 1)], n_areas=3)
        field = IcarField(g, np.zeros(3))
        with pytest.raises(ValidationError, match="island"):
            icar_conditional(field, 2)


class TestLogDensity:
    def test_constant_field(self):
        g = make_lattice(2, 3)
        sigma2 = 0.3
        field = IcarField(g, np.full(6, 9.9), variance=sigma2)
        assert icar_logdensity_unnormalized(field) == pytest.approx(
            -6 * math.log(math.sqrt(sigma2))
        )

    def test_per_component_shift_invariance(self):
        g = build_graph([(0, 1), (1, 2), (3, 4)], n_areas=5)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(5)
        field = IcarField(g, x)
        shifted = x.copy()
        shifted[:3] += 17.0
        shifted[3:] -= 4.0
        assert icar_logdensity_unnormalized(
            IcarField(g, shifted)
        ) == pytest.approx(icar_logdensity_unnormalized(field), abs=1e-9)

    def test_pairwise_sum_equals_quadratic_form(self):
        rng = np.random.default_rng(7)
        for trial in range(10):
            n = int(rng.integers(5, 15))
            g = build_graph(random_connected_graph(rng, n), n_areas=n)
            x = rng.standard_normal(n)
            s2 = float(rng.uniform(0.2, 3.0))
            field = IcarField(g, x, variance=s2)
            q = precision_matrix(g)
            oracle = -n * math.log(math.sqrt(s2)) - (x @ q @ x) / (2 * s2)
            assert abs(icar_logdensity_unnormalized(field) - oracle) < 1e-10


class TestProjection:
    def test_single_component(self):
        g = build_graph([(0, 1), (1, 2)], n_areas=3)
        out = project_sum_to_zero(IcarField(g, np.array([1.0, 2.0, 3.0])))
        assert out.values.tolist() == [-1.0, 0.0, 1.0]

    def test_per_component_centering(self):
        g = build_graph([(0, 1)], n_areas=3)
        out = project_sum_to_zero(IcarField(g, np.array([4.0, 6.0, 9.0])))
        assert out.values.tolist() == [-1.0, 1.0, 0.0]

    def test_idempotent_bitwise(self):
        rng = np.random.default_rng(1)
        g = build_graph([(0, 1), (1, 2), (3, 4), (4, 5)], n_areas=6)
        field = IcarField(g, rng.standard_normal(6))
        once = project_sum_to_zero(field)
        twice = project_sum_to_zero(once)
        assert np.array_equal(once.values, twice.values)


class TestGibbsSweep:
    def test_prior_dominated_limit_collapses_to_zero(self):
        g = make_lattice(3, 3)
        rng = np.random.default_rng(2)
        field = IcarField(g, rng.standard_normal(9), variance=1e-12)
        zeros = np.zeros(9)
        for _ in range(60):
            field = sample_icar_gibbs_sweep(field, zeros, zeros, rng)
        assert np.max(np.abs(field.values)) < 1e-3

    def test_data_dominated_limit_equals_centered_targets(self):
        g = make_lattice(3, 3)
        rng = np.random.default_rng(3)
        targets = rng.standard_normal(9)
        prec = np.full(9, 1e14)
        field = IcarField(g, np.zeros(9), variance=1.0)
        field = sample_icar_gibbs_sweep(field, prec, prec * targets, rng)
        assert np.allclose(field.values, targets - targets.mean(), atol=1e-5)

    def test_site_conditionals_match_grid_integration(self):
        # pin all other sites with a near-degenerate likelihood so each
        # sweep redraws site i from its conditional at a fixed state,
        # then compare 200k draws against grid quadrature moments
        g = build_graph([(i, i + 1) for i in range(4)], n_areas=5)
        rng = np.random.default_rng(8)
        state = rng.standard_normal(5)
        lik_prec = np.array([2.0, 0.5, 1.0, 3.0, 0.0])
        lik_mean = np.array([0.4, -1.0, 0.2, 1.5, 0.0])
        sigma2 = 0.8
        n_draws = 200_000
        pin = 1e16
        for i in range(5):
            prec = np.full(5, pin)
            pwm = pin * state
            prec[i] = lik_prec[i]
            pwm[i] = lik_prec[i] * lik_mean[i]
            draws = np.empty(n_draws)
            values = state.tolist()
            normals_all = rng.standard_normal((n_draws, 5))
            prec_l, pwm_l = prec.tolist(), pwm.tolist()
            for s in range(n_draws):
                gibbs_sweep_values(values, g, sigma2, prec_l, pwm_l, normals_all[s].tolist())
                draws[s] = values[i]

            wplus = g.weight_sums[i]
            nb_sum = sum(state[j] for j in g.neighbor_lists[i])

            def logpdf(x, i=i, wplus=wplus, nb_sum=nb_sum):
                prior = -wplus / (2 * sigma2) * (x - nb_sum / wplus) ** 2
                lik = -lik_prec[i] / 2 * (x - lik_mean[i]) ** 2
                return prior + lik

            lo, hi = state[i] - 8, state[i] + 8
            mean, var = grid_moments(logpdf, lo - 5, hi + 5)
            se_mean = math.sqrt(var / n_draws)
            se_var = var * math.sqrt(2.0 / (n_draws - 1))
            assert abs(draws.mean() - mean) < 3 * se_mean
            assert abs(draws.var(ddof=1) - var) < 3 * se_var

    def test_component_sums_vanish_after_sweep(self):
        rng = np.random.default_rng(9)
        edges = random_connected_graph(rng, 7) + [(8, 9, 1.0)]
        g = build_graph(edges, n_areas=10)
        field = IcarField(g, rng.standard_normal(10))
        prec = rng.uniform(0.0, 2.0, 10)
        field = sample_icar_gibbs_sweep(field, prec, prec * rng.standard_normal(10), rng)
        assert np.max(np.abs(field.component_sums())) < 1e-8

    def test_negative_precision_rejected(self):
        g = build_graph([(0, 1)])
        field = IcarField(g, np.zeros(2))
        with pytest.raises(ValidationError, match="nonnegative"):
            sample_icar_gibbs_sweep(field, np.array([-1.0, 0.0]), np.zeros(2), np.random.default_rng(0))


class TestPrecisionMatrix:
    def test_psd_with_component_indicator_nullspace(self):
        rng = np.random.default_rng(12)
        for trial in range(5):
            n = int(rng.integers(6, 50))
            edges = random_connected_graph(rng, n - 2)
            edges.append((n - 2, n - 1, 1.0))
            g = build_graph(edges, n_areas=n)
            q = precision_matrix(g)
            assert np.allclose(q, q.T)
            eigvals, eigvecs = np.linalg.eigh(q)
            assert eigvals.min() > -1e-10
            null_dim = int(np.sum(np.abs(eigvals) < 1e-9))
            assert null_dim == g.n_components
            null_basis = eigvecs[:, np.abs(eigvals) < 1e-9]
            for idx in g.components():
                indicator = np.zeros(n)
                indicator[idx] = 1.0
                proj = null_basis @ (null_basis.T @ indicator)
                assert np.allclose(proj, indicator, atol=1e-8)

    def test_island_proper_diagonal(self):
        g = build_graph([(0, 1)], n_areas=3)
        q = precision_matrix(g, island_proper=True)
        assert q[2, 2] == 1.0
        assert precision_matrix(g)[2, 2] == 0.0


class TestQuadFormAndRank:
    def test_no_islands(self):
        g = build_graph([(0, 1, 2.0), (1, 2, 1.0)], n_areas=3)
        x = np.array([1.0, 0.0, -2.0])
        quad, rank = quad_form_and_rank(g, x)
        assert quad == pytest.approx(2.0 * 1.0 + 1.0 * 4.0)
        assert rank == 2

    def test_islands_add_proper_terms(self):
        g = build_graph([(0, 1)], n_areas=4)  # two islands
        x = np.array([1.0, -1.0, 3.0, 0.5])
        quad, rank = quad_form_and_rank(g, x)
        assert quad == pytest.approx(4.0 + 9.0 + 0.25)
        # n - components + islands = 4 - 3 + 2
        assert rank == 3

    def test_center_by_component_returns_shifts(self):
        g = build_graph([(0, 1)], n_areas=3)
        centered, shifts = center_by_component(np.array([1.0, 3.0, 5.0]), g)
        assert centered.tolist() == [-1.0, 1.0, 0.0]
        assert shifts.tolist() == [2.0, 5.0]
