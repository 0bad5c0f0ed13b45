import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import central_difference, explicit_design, random_problem, smooth_loss
from stepgam.data import Dataset, build_bins
from stepgam.optimizer import (BlockState, FitConfig, block_gradient, block_scores, fit_cbcd, fit_gbcd,
                               objective, recompute_residual, select_block_bgs, steepest_directions,
                               update_block)


def fresh(ds, bins, lam):
    return BlockState.zeros(ds, bins, lam)


class TestConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            FitConfig(-1.0)
        with pytest.raises(ValueError):
            FitConfig(1.0, max_bins=1)
        with pytest.raises(ValueError):
            FitConfig(1.0, selection_rule="random")
        with pytest.raises(ValueError):
            FitConfig(1.0, stationarity_tol=-1)

    def test_defaults(self):
        c = FitConfig(1.0)
        assert c.update_cap(7) == 700
        y = np.array([0.0, 2.0])
        assert c.absolute_tol(y) == pytest.approx(1e-10 * 2 * 1.0)


class TestObjective:
    def test_null_model(self, small_problem):
        ds, bins = small_problem
        state = fresh(ds, bins, 3.0)
        yc = ds.target - ds.target.mean()
        assert state.objective == pytest.approx(0.5 * yc @ yc, rel=1e-14)

    def test_exact_single_feature_fit(self):
        ds = Dataset.from_arrays(np.arange(6.0)[:, None], [3.0, 1, 4, 1, 5, 9])
        state = fit_gbcd(ds, FitConfig(0.0))
        assert 0.5 * state.residual @ state.residual < 1e-20

    def test_matches_recomputation(self, small_problem):
        ds, bins = small_problem
        state = fit_gbcd(ds, FitConfig(2.0), bins)
        r = recompute_residual(state, ds, bins)
        tv = sum(np.abs(np.diff(b)).sum() for b in state.beta)
        assert state.objective == pytest.approx(0.5 * r @ r + 2.0 * tv, rel=1e-10)

    def test_gauge_invariance(self, small_problem):
        ds, bins = small_problem
        state = fit_gbcd(ds, FitConfig(2.0), bins)
        before = objective(state)
        shifted = state.copy()
        shifted.block(0)[:] += 0.7
        shifted.block(2)[:] -= 0.7
        shifted.residual = recompute_residual(shifted, ds, bins)
        assert objective(shifted) == pytest.approx(before, rel=1e-10, abs=1e-10)


class TestGradient:
    def test_worked_example(self):
        # y=[3,1,2], sorted singleton bins, beta=0
        ds = Dataset.from_arrays(np.array([[0.0], [1.0], [2.0]]), [3.0, 1.0, 2.0])
        bins = build_bins(ds)
        g = block_gradient(np.array([3.0, 1.0, 2.0]), 0, bins)
        fd = central_difference(lambda t: smooth_loss(np.array([3.0, 1, 2]), bins[0].row_to_bin, t), np.zeros(2))
        assert_allclose(g, [-3.0, -2.0])
        assert_allclose(fd, [-3.0, -2.0], atol=1e-9)

    def test_zero_residual(self, small_problem):
        ds, bins = small_problem
        assert np.all(block_gradient(np.zeros(ds.n), 1, bins) == 0)

    def test_constant_feature_is_never_selected(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.ones(50), rng.normal(size=50)])
        ds = Dataset.from_arrays(X, rng.normal(size=50))
        bins = build_bins(ds)
        assert block_gradient(ds.target, 0, bins).size == 0
        state = fit_gbcd(ds, FitConfig(0.5), bins)
        assert 0 not in {r.feature for r in state.trace}

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_explicit_design(self, seed):
        ds, bins = random_problem(seed, n=60, max_bins=8)
        r = np.random.default_rng(seed).normal(size=ds.n)
        for j, fb in enumerate(bins.features):
            A = explicit_design(fb.row_to_bin, fb.n_bins)
            assert_allclose(block_gradient(r, j, bins), -A.T @ r, atol=1e-12)


class TestSteepestDirections:
    def test_zero_theta_zero_lambda(self):
        g = np.array([-3.0, 2.0, 0.5])
        assert_allclose(steepest_directions(g, np.zeros(3), 0.0), np.abs(g))

    def test_soft_threshold_annihilates(self):
        assert np.all(steepest_directions([0.5, -0.9], [0.0, 0.0], 1.0) == 0)

    def test_nonzero_theta(self):
        assert steepest_directions([-5.0], [2.0], 1.0)[0] == 4.0
        assert steepest_directions([5.0], [-2.0], 1.0)[0] == 4.0

    def test_kernel_matches_reference(self, small_problem):
        ds, bins = small_problem
        state = fit_gbcd(ds, FitConfig(3.0, max_block_updates=3), bins)
        scores, _ = block_scores(state, bins)
        for j in range(ds.p):
            d = steepest_directions(block_gradient(state.residual, j, bins), np.diff(state.block(j)), 3.0)
            assert scores[j] == pytest.approx(d @ d, rel=1e-10, abs=1e-12)


class TestSelection:
    def test_duplicate_tie_goes_to_lowest_index(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=40)
        ds = Dataset.from_arrays(np.column_stack([rng.normal(size=40), x, x]), np.sin(x))
        bins = build_bins(ds)
        scores, _ = block_scores(fresh(ds, bins, 0.1), bins)
        assert scores[1] == scores[2]
        k, _ = select_block_bgs(fresh(ds, bins, 0.1), bins)
        assert k == 1

    def test_explaining_feature_selected_first(self):
        # 5 rows: y is a step in feature 1, feature 0 is unrelated
        X = np.array([[0.3, 1], [0.1, 2], [0.5, 3], [0.2, 4], [0.4, 5]], dtype=float)
        y = np.array([0.0, 0.0, 0.0, 4.0, 4.0])
        ds = Dataset.from_arrays(X, y)
        bins = build_bins(ds)
        state = fresh(ds, bins, 0.5)
        oracle = []
        for fb in bins.features:
            A = explicit_design(fb.row_to_bin, fb.n_bins)
            g = -A.T @ state.residual
            d = np.abs(np.sign(g) * np.maximum(np.abs(g) - 0.5, 0))
            oracle.append(d @ d)
        # frozen from the explicit-design oracle; by hand for feature 1:
        # tails of r=[-1.6]*3+[2.4]*2 give d=[1.1, 2.7, 4.3, 1.9]
        assert_allclose(oracle, [2.6, 30.6], atol=1e-12)
        k, score = select_block_bgs(state, bins)
        assert k == 1 and score == pytest.approx(oracle[1])

    def test_optimum_is_stationary(self, small_problem):
        ds, bins = small_problem
        config = FitConfig(1.0)
        state = fit_gbcd(ds, config, bins)
        _, score = select_block_bgs(state, bins)
        assert state.converged and score <= config.absolute_tol(ds.target)


class TestUpdateBlock:
    def test_idempotent_at_block_optimum(self, small_problem):
        ds, bins = small_problem
        state = fresh(ds, bins, 1.0)
        update_block(state, 0, bins)
        before = state.copy()
        update_block(state, 0, bins)
        assert_allclose(state.block(0), before.block(0), atol=1e-13)
        assert state.objective == pytest.approx(before.objective, abs=1e-12 * before.objective)

    def test_single_feature_one_update_solves(self):
        rng = np.random.default_rng(1)
        ds = Dataset.from_arrays(rng.normal(size=(100, 1)), rng.normal(size=100))
        bins = build_bins(ds, max_bins=20)
        state = fresh(ds, bins, 2.0)
        update_block(state, 0, bins)
        first = state.objective
        for _ in range(3):
            update_block(state, 0, bins)
        assert state.objective == pytest.approx(first, rel=1e-13)
        g = fit_gbcd(ds, FitConfig(2.0, max_bins=20), bins)
        assert g.update_count == 1

    def test_objective_matches_recomputation(self, small_problem):
        ds, bins = small_problem
        state = fresh(ds, bins, 1.5)
        for k in [0, 1, 2, 3, 1, 0]:
            update_block(state, k, bins)
            r = recompute_residual(state, ds, bins)
            assert_allclose(state.residual, r, atol=1e-9)
            tv = sum(np.abs(np.diff(b)).sum() for b in state.beta)
            assert state.objective == pytest.approx(0.5 * r @ r + 1.5 * tv, rel=1e-10)


class TestFitting:
    def test_huge_penalty_gives_null_model(self, small_problem):
        ds, bins = small_problem
        state = fit_gbcd(ds, FitConfig(1e9), bins)
        assert state.update_count == 0 and state.converged
        assert not state.support

    def test_trace_non_increasing(self, small_problem):
        ds, bins = small_problem
        for solver in (fit_gbcd, fit_cbcd):
            objs = [r.objective for r in solver(ds, FitConfig(1.0), bins).trace]
            assert np.all(np.diff(objs) <= 1e-12)

    def test_greedy_matches_cyclic(self):
        from stepgam.synthetic import additive
        ds = additive(200, 5, seed=1)
        bins = build_bins(ds)
        g = fit_gbcd(ds, FitConfig(1.0), bins)
        c = fit_cbcd(ds, FitConfig(1.0), bins)
        assert g.converged and c.converged
        assert abs(g.objective - c.objective) / c.objective < 1e-6

    def test_single_feature_rules_agree(self):
        rng = np.random.default_rng(2)
        ds = Dataset.from_arrays(rng.normal(size=(80, 1)), rng.normal(size=80))
        g = fit_gbcd(ds, FitConfig(1.0))
        c = fit_cbcd(ds, FitConfig(1.0))
        assert_allclose(g.block(0), c.block(0), rtol=0, atol=1e-12)

    def test_exactly_additive_data_zero_residual(self):
        rng = np.random.default_rng(3)
        X = rng.integers(0, 6, size=(300, 2)).astype(float)
        y = np.array([0, 2, -1, 3, 0.5, 1])[X[:, 0].astype(int)] + np.cos(X[:, 1])
        state = fit_cbcd(Dataset.from_arrays(X, y), FitConfig(0.0, sweep_tol=1e-14))
        assert np.linalg.norm(state.residual) < 1e-6

    def test_update_cap_reports_non_convergence(self, small_problem):
        ds, bins = small_problem
        state = fit_gbcd(ds, FitConfig(0.1, max_block_updates=2), bins)
        assert state.update_count == 2 and not state.converged
        state = fit_cbcd(ds, FitConfig(0.1, max_block_updates=3), bins)
        assert state.update_count == 3 and not state.converged

    def test_stationarity_certificate(self, small_problem):
        ds, bins = small_problem
        config = FitConfig(1.0)
        state = fit_gbcd(ds, config, bins)
        tol = config.absolute_tol(ds.target)
        for j in range(ds.p):
            d = steepest_directions(block_gradient(state.residual, j, bins), np.diff(state.block(j)), 1.0)
            assert np.all(d <= np.sqrt(tol))
