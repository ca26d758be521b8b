import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iquant.dp import (
    brute_force,
    dp_direct,
    dp_indirect_rate,
    dp_indirect_threshold,
    grid_prefix,
    metric_matrix,
    naive_two_step,
    solve_partition,
)
from iquant.exceptions import BudgetExceededError
from iquant.model import Grid1D, JointModel, transform_to_u
from iquant.quantizer import CellMap, evaluate_mse


def labeling_oracle(model, grid, levels):
    """Least MSE over every assignment of the X atoms to ``levels`` outputs."""
    edges = np.concatenate([[-np.inf], grid, [np.inf]])
    P, M1, M2 = (np.diff(a) for a in model.moments_at(edges))
    best = np.inf
    for labels in itertools.product(range(levels), repeat=P.size):
        lab = np.array(labels)
        total = 0.0
        for k in range(levels):
            m = lab == k
            p = P[m].sum()
            if p > 0:
                total += M2[m].sum() - M1[m].sum() ** 2 / p
        best = min(best, total)
    return best


def random_joint(seed, ns=4, nx=7):
    rng = np.random.default_rng(seed)
    dens = rng.uniform(0.0, 1.0, (ns, nx)) ** 3
    return JointModel(Grid1D.linspace(0, 1, ns), Grid1D.linspace(-1, 1, nx), dens, normalize=True)


class TestPartition:
    def test_metric_lower_triangle(self, mixture):
        P, M1, M2 = grid_prefix(mixture, np.linspace(-5, 5, 6))
        m = metric_matrix(P, M1, M2)
        assert np.all(np.isinf(m[np.tril_indices(8)]))
        assert np.all(m[np.triu_indices(8, 1)] >= -1e-15)

    def test_zero_thresholds_gives_variance(self, mixture):
        q, mse = dp_indirect_threshold(mixture, np.linspace(-5, 5, 11), 0)
        assert mse == pytest.approx(mixture.var, abs=1e-15)
        assert q.n_levels == 1

    def test_too_many_thresholds(self, mixture):
        with pytest.raises(ValueError):
            dp_indirect_threshold(mixture, [0.0, 1.0], 3)

    def test_direct_needs_direct_model(self, mixture):
        with pytest.raises(TypeError):
            dp_direct(mixture, [0.0], 1)

    def test_table_shapes(self, gauss3):
        table = solve_partition(*grid_prefix(gauss3, np.linspace(-6, 6, 9)), 3)
        assert len(table.stages) == 3 and len(table.cuts) == 3
        assert table.metric_cache.shape == (11, 11)


class TestAgainstBruteForce:
    @pytest.mark.parametrize("K", [8, 11])
    @pytest.mark.parametrize("T", [1, 2, 3])
    def test_direct(self, gauss3, K, T):
        grid = np.linspace(-8, 8, K)
        q, mse = dp_direct(gauss3, grid, T)
        qb, mb = brute_force(gauss3, grid, T)
        np.testing.assert_array_equal(q.thresholds, qb.thresholds)
        assert abs(mse - mb) <= 1e-12

    @pytest.mark.parametrize("T", [1, 2, 3, 4])
    def test_indirect(self, mixture, T):
        grid = np.linspace(-12, 12, 13)
        q, mse = dp_indirect_threshold(mixture, grid, T)
        qb, mb = brute_force(mixture, grid, T)
        np.testing.assert_array_equal(q.thresholds, qb.thresholds)
        assert abs(mse - mb) <= 1e-12
        assert evaluate_mse(mixture, q) == pytest.approx(mse, abs=1e-13)

    @pytest.mark.parametrize("T", [1, 2, 3])
    def test_rate(self, mixture, T):
        tm = transform_to_u(mixture, np.linspace(-12, 12, 15))
        q, cells, mse = dp_indirect_rate(tm, T)
        qb, mb = brute_force(tm, None, T)
        np.testing.assert_array_equal(q.thresholds, qb.thresholds)
        assert abs(mse - mb) <= 1e-12
        assert evaluate_mse(mixture, cells) == pytest.approx(mse, abs=1e-13)

    def test_budget(self, mixture):
        with pytest.raises(BudgetExceededError):
            brute_force(mixture, np.linspace(-10, 10, 200), 4)

    def test_tie_rule_symmetric(self, mixture):
        # symmetric model: mirror-image solutions tie or nearly tie; both
        # methods must pick the same one
        grid = np.linspace(-9, 9, 10)
        for T in (1, 3):
            q, _ = dp_indirect_threshold(mixture, grid, T)
            qb, _ = brute_force(mixture, grid, T)
            np.testing.assert_array_equal(q.thresholds, qb.thresholds)

    def test_exact_tie_takes_smallest_last_threshold(self, uniform01):
        # thresholds outside the support create exactly equal-cost options
        grid = np.array([-2.0, -1.0, 0.5, 2.0, 3.0])
        q, mse = dp_direct(uniform01, grid, 2)
        qb, mb = brute_force(uniform01, grid, 2)
        np.testing.assert_array_equal(q.thresholds, qb.thresholds)
        assert q.thresholds[-1] == 0.5


class TestRate:
    @pytest.mark.parametrize("T", [1, 2])
    def test_labeling_oracle(self, mixture, T):
        grid = np.linspace(-9, 9, 6)
        tm = transform_to_u(mixture, grid)
        _, cells, mse = dp_indirect_rate(tm, T)
        assert mse == pytest.approx(labeling_oracle(mixture, grid, T + 1), abs=1e-14)
        assert evaluate_mse(mixture, cells) == pytest.approx(mse, abs=1e-14)

    def test_dominates_threshold(self, mixture):
        grid = np.linspace(-15, 15, 101)
        tm = transform_to_u(mixture, grid)
        for T in (1, 2, 4):
            _, _, rate = dp_indirect_rate(tm, T)
            _, thr = dp_indirect_threshold(mixture, grid, T)
            assert rate <= thr + 1e-15

    def test_cells_cover_line(self, mixture):
        tm = transform_to_u(mixture, np.linspace(-15, 15, 31))
        _, cells, _ = dp_indirect_rate(tm, 2)
        assert isinstance(cells, CellMap)
        x = np.linspace(-20, 20, 1001)
        assert np.all(cells.encode(x) >= 0)


class TestNaive:
    def test_no_better_than_optimum(self, mixture):
        grid = np.linspace(-15, 15, 121)
        for T in (1, 2, 3, 5):
            _, naive = naive_two_step(mixture, grid, T)
            _, opt = dp_indirect_threshold(mixture, grid, T)
            assert opt <= naive + 1e-15

    def test_direct_model_coincides(self, gauss3):
        grid = np.linspace(-9, 9, 61)
        q1, m1 = naive_two_step(gauss3, grid, 3)
        q2, m2 = dp_direct(gauss3, grid, 3)
        np.testing.assert_array_equal(q1.thresholds, q2.thresholds)
        assert m1 == pytest.approx(m2, abs=1e-14)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(1, 3))
def test_random_models_match_brute_force(seed, T):
    model = random_joint(seed)
    grid = np.linspace(-0.9, 0.9, 8)
    q, mse = dp_indirect_threshold(model, grid, T)
    qb, mb = brute_force(model, grid, T)
    np.testing.assert_array_equal(q.thresholds, qb.thresholds)
    assert abs(mse - mb) <= 1e-12
    tm = transform_to_u(model, grid)
    if tm.u_values.size > T:
        _, _, rate = dp_indirect_rate(tm, T)
        assert rate <= mse + 1e-14
        assert rate >= model.mmse_floor() - 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_more_thresholds_never_hurt(seed):
    model = random_joint(seed, 5, 9)
    grid = np.linspace(-0.95, 0.95, 12)
    values = [dp_indirect_threshold(model, grid, T)[1] for T in range(5)]
    assert np.all(np.diff(values) <= 1e-15)
