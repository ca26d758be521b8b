import numpy as np
import pytest

from iquant.dp import dp_direct, dp_indirect_threshold
from iquant.lloyd import (
    STOP_MAX_ITER,
    STOP_MSE_DELTA,
    initial_thresholds,
    lloyd_indirect,
    lloyd_max,
    solve_threshold,
)
from iquant.model import Grid1D
from iquant.quantizer import Quantizer, centroids_for, check_boundary_condition, evaluate_mse
from iquant.csvio import read_csv


def bisect_root(fun, lo, hi, iters=200):
    flo = fun(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = fun(mid)
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


class TestSolveThreshold:
    def test_direct_model_root_is_target(self, gauss3):
        assert solve_threshold(gauss3, 1.234, (-5, 5), 0.0) == pytest.approx(1.234, abs=1e-12)

    def test_against_bisection(self, mixture):
        target = 1.52
        lo, hi = 0.5, 8.0
        ref = bisect_root(lambda t: mixture.g(t) - target, lo, hi)
        got = solve_threshold(mixture, target, (lo, hi), 2.0)
        assert got == pytest.approx(ref, abs=1e-10)

    def test_no_root_is_flagged(self, mixture):
        # g stays below 1.9 on a short bracket; fallback is the best grid point
        lo, hi = 2.0, 3.0
        t, stalled = solve_threshold(mixture, 1.9, (lo, hi), 2.5, full_output=True)
        assert stalled
        scan = np.linspace(lo, hi, 20001)[1:-1]
        assert np.min(np.abs(mixture.g(scan) - 1.9)) <= abs(mixture.g(t) - 1.9) + 1e-3

    def test_descent_never_raises_objective(self, mixture):
        from iquant.quantizer import threshold_objective

        a, b = 1.45, 1.6
        for prev in (-6.0, -1.0, 0.3, 2.0, 6.5):
            t = solve_threshold(mixture, 0.5 * (a + b), (-15, 15), prev, slope_sign=1.0)
            assert threshold_objective(mixture, t, a, b) <= threshold_objective(mixture, prev, a, b) + 1e-15

    def test_empty_bracket(self, mixture):
        with pytest.raises(ValueError):
            solve_threshold(mixture, 1.5, (1.0, 1.0), 1.0)


class TestInit:
    def test_policies(self, gauss3):
        q = initial_thresholds(gauss3, 3)
        np.testing.assert_allclose(q, [-3 * 0.6744897501960817, 0, 3 * 0.6744897501960817], atol=2e-3)
        u = initial_thresholds(gauss3, 3, "uniform")
        np.testing.assert_allclose(np.diff(u), np.diff(u)[0])
        r1 = initial_thresholds(gauss3, 3, "random", seed=4)
        r2 = initial_thresholds(gauss3, 3, "random", seed=4)
        np.testing.assert_array_equal(r1, r2)

    def test_errors(self, gauss3):
        with pytest.raises(ValueError):
            initial_thresholds(gauss3, 2, "median")
        with pytest.raises(ValueError):
            initial_thresholds(gauss3, 2, [1.0, 0.0])
        with pytest.raises(ValueError):
            initial_thresholds(gauss3, 2, [0.0])


class TestLloydMax:
    def test_gaussian_one_threshold(self, gauss3):
        q, trace = lloyd_max(gauss3, 1)
        assert q.thresholds[0] == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(q.recon, [-3 * np.sqrt(2 / np.pi), 3 * np.sqrt(2 / np.pi)], atol=1e-4)

    def test_gaussian_symmetry_and_monotone(self, gauss3):
        q, trace = lloyd_max(gauss3, 4, xtol=1e-9)
        np.testing.assert_allclose(q.thresholds, -q.thresholds[::-1], atol=1e-7)
        assert trace.mse_non_increasing()
        assert trace.stop_reason == STOP_MSE_DELTA and trace.converged

    def test_close_to_dp(self, gauss3):
        grid = np.linspace(-12, 12, 801)
        q, _ = lloyd_max(gauss3, 3)
        qd, mse = dp_direct(gauss3, grid, 3)
        assert np.max(np.abs(q.thresholds - qd.thresholds)) <= grid[1] - grid[0]
        assert evaluate_mse(gauss3, q) <= mse + 1e-12

    def test_random_inits_agree(self, gauss3):
        # log-concave source: a single fixed point
        ref, _ = lloyd_max(gauss3, 3, xtol=1e-10)
        for seed in range(10):
            q, _ = lloyd_max(gauss3, 3, init="random", seed=seed, xtol=1e-10, max_iter=2000)
            assert np.max(np.abs(q.thresholds - ref.thresholds)) < 1e-4

    def test_needs_direct(self, mixture):
        with pytest.raises(TypeError):
            lloyd_max(mixture, 1)


class TestIndirect:
    @pytest.mark.parametrize("T", [1, 2, 4])
    def test_stationary(self, mixture, T):
        q, trace = lloyd_indirect(mixture, T, xtol=1e-10, eps=1e-15)
        assert trace.mse_non_increasing()
        assert np.all(np.diff(q.thresholds) > 0)
        resid = check_boundary_condition(mixture, q)
        assert np.max(np.abs(resid)) < 1e-5
        np.testing.assert_allclose(q.recon, centroids_for(mixture, q.thresholds), atol=1e-15)

    def test_finite_difference_stationarity(self, mixture):
        q, _ = lloyd_indirect(mixture, 2, xtol=1e-10, eps=1e-15)
        h = 1e-4
        for k in range(2):
            vals = []
            for d in (-h, h):
                t = q.thresholds.copy()
                t[k] += d
                vals.append(evaluate_mse(mixture, Quantizer(t, centroids_for(mixture, t))))
            assert abs(vals[1] - vals[0]) / (2 * h) / mixture.var < 1e-4

    def test_max_iter_reason(self, mixture):
        _, trace = lloyd_indirect(mixture, 3, max_iter=1, eps=0.0)
        assert trace.stop_reason == STOP_MAX_ITER and not trace.converged
        assert trace.iteration_count == 1

    def test_grid_mode(self, mixture):
        grid = np.linspace(-15, 15, 401)
        q, trace = lloyd_indirect(mixture, 3, grid=grid)
        assert np.all(np.isin(q.thresholds, grid))
        assert trace.mse_non_increasing(0.0)
        _, dp = dp_indirect_threshold(mixture, grid, 3)
        assert dp <= evaluate_mse(mixture, q) + 1e-15

    def test_grid_object(self, mixture):
        q1, _ = lloyd_indirect(mixture, 2, grid=Grid1D.linspace(-15, 15, 201))
        q2, _ = lloyd_indirect(mixture, 2, grid=np.linspace(-15, 15, 201))
        np.testing.assert_array_equal(q1.thresholds, q2.thresholds)

    def test_trace_csv(self, tmp_path, mixture):
        _, trace = lloyd_indirect(mixture, 2, max_iter=5)
        path = trace.to_csv(tmp_path / "trace.csv")
        cols, rows = read_csv(path)
        assert cols == ["iter", "mse", "t_1", "t_2"]
        assert len(rows) == trace.iteration_count + 1
        assert float(rows[-1][1]) == trace.mse[-1]

    def test_bad_T(self, mixture):
        with pytest.raises(ValueError):
            lloyd_indirect(mixture, 0)
