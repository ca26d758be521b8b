import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from iquant.model import transform_to_u
from iquant.quantizer import (
    CellMap,
    Quantizer,
    boundary_derivative,
    centroids_for,
    check_boundary_condition,
    check_fine_cells,
    check_vq_conditions,
    evaluate_mse,
    partial_mse,
    threshold_objective,
)


class TestQuantizer:
    def test_validation(self):
        with pytest.raises(ValueError):
            Quantizer([1.0, 0.0], [0, 1, 2])
        with pytest.raises(ValueError):
            Quantizer([0.0], [1.0])
        with pytest.raises(ValueError):
            Quantizer([0.0], [1.0, 2.0], domain="y")

    def test_encode_left_closed(self):
        q = Quantizer([0.0, 1.0], [-1, 0.5, 2])
        np.testing.assert_array_equal(q.encode([-0.1, 0.0, 0.99, 1.0, 5]), [0, 1, 1, 2, 2])
        np.testing.assert_array_equal(q.decode([0, 2]), [-1, 2])

    def test_record_round_trip(self):
        q = Quantizer([-0.1 / 3, 2.0 ** 0.5], [np.pi, -np.e, 1e-300], domain="u")
        back = Quantizer.from_record(q.to_record())
        np.testing.assert_array_equal(back.thresholds, q.thresholds)
        np.testing.assert_array_equal(back.recon, q.recon)
        assert back.domain == "u"

    def test_record_errors(self):
        with pytest.raises(ValueError):
            Quantizer.from_record("version 2\ndomain_tag x\nthresholds\nrecon 1\n")
        with pytest.raises(ValueError):
            Quantizer.from_record("version 1\nthresholds 0\n")

    def test_zero_thresholds_record(self):
        q = Quantizer([], [1.5])
        assert Quantizer.from_record(q.to_record()).n_levels == 1


class TestCellMap:
    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            CellMap((((0, 2),), ((1, 3),)), [0, 1])

    def test_encode_unions(self):
        cm = CellMap((((-np.inf, -1), (1, np.inf)), ((-1, 1),)), [5, 0])
        np.testing.assert_array_equal(cm.encode([-3, 0, 3]), [0, 1, 0])


class TestMse:
    def test_gaussian_two_level_analytic(self, gauss3):
        q = Quantizer([0.0], centroids_for(gauss3, [0.0]))
        assert evaluate_mse(gauss3, q) == pytest.approx(9 * (1 - 2 / np.pi), abs=1e-4)

    def test_matches_quadrature(self, gauss3):
        q = Quantizer([-2.0, 1.0], [-3.5, -0.2, 2.7])

        def err(x):
            return (x - q.decode(q.encode(x))) ** 2 * norm.pdf(x, 0, 3)

        ref = sum(integrate.quad(err, a, b)[0] for a, b in [(-30, -2), (-2, 1), (1, 30)])
        assert evaluate_mse(gauss3, q) == pytest.approx(ref, abs=1e-4)

    def test_cellmap_equals_quantizer(self, mixture):
        q = Quantizer([-2.0, 3.0], [1.4, 1.6, 1.5])
        assert evaluate_mse(mixture, CellMap.from_quantizer(q)) == pytest.approx(
            evaluate_mse(mixture, q), abs=1e-15)

    def test_centroids_minimize(self, mixture):
        t = [-4.0, 0.5, 6.0]
        r = centroids_for(mixture, t)
        base = evaluate_mse(mixture, Quantizer(t, r))
        for k in range(4):
            for d in (-1e-3, 1e-3):
                rr = r.copy()
                rr[k] += d
                assert evaluate_mse(mixture, Quantizer(t, rr)) > base

    def test_partial_mse_sums(self, mixture):
        t = [-1.0, 2.0]
        q = Quantizer(t, centroids_for(mixture, t))
        parts = partial_mse(mixture, -np.inf, -1) + partial_mse(mixture, -1, 2) + partial_mse(mixture, 2, np.inf)
        assert parts == pytest.approx(evaluate_mse(mixture, q), abs=1e-15)

    def test_u_domain_rejected(self, mixture):
        with pytest.raises(ValueError):
            evaluate_mse(mixture, Quantizer([0.0], [1, 2], domain="u"))

    def test_empty_cell_uses_reconstruction(self, uniform01):
        # the cell below 0 is empty; its reconstruction must not matter
        q1 = Quantizer([-1.0, 0.5], [7.0, 0.25, 0.75])
        q2 = Quantizer([-1.0, 0.5], [-3.0, 0.25, 0.75])
        assert evaluate_mse(uniform01, q1) == evaluate_mse(uniform01, q2)


class TestConditions:
    def test_boundary_derivative_matches_fd(self, mixture):
        t = np.array([-3.0, 1.0, 4.0])
        r = np.array([1.45, 1.55, 1.5, 1.62])
        analytic = boundary_derivative(mixture, Quantizer(t, r))
        h = 1e-6
        for k in range(3):
            tp, tm = t.copy(), t.copy()
            tp[k] += h
            tm[k] -= h
            fd = (evaluate_mse(mixture, Quantizer(tp, r)) - evaluate_mse(mixture, Quantizer(tm, r))) / (2 * h)
            assert fd == pytest.approx(analytic[k], rel=1e-5, abs=1e-12)

    def test_threshold_objective_tracks_mse(self, mixture):
        t0, r = 1.0, (1.45, 1.62)
        base = evaluate_mse(mixture, Quantizer([t0], r))
        for t in (-2.0, 0.3, 4.0):
            d_obj = threshold_objective(mixture, t, *r) - threshold_objective(mixture, t0, *r)
            d_mse = evaluate_mse(mixture, Quantizer([t], r)) - base
            assert d_obj == pytest.approx(d_mse, abs=1e-14)

    def test_boundary_residual_zero_at_symmetric_fixed_point(self, gauss3):
        q = Quantizer([0.0], centroids_for(gauss3, [0.0]))
        assert abs(check_boundary_condition(gauss3, q)[0]) < 1e-10

    def test_vq_conditions(self):
        pts = np.array([0.0, 1.0, 4.0, 5.0])
        w = np.full(4, 0.25)
        ok, resid = check_vq_conditions(pts, w, [0, 0, 1, 1], [0.5, 4.5])
        assert ok and resid < 1e-15
        ok, _ = check_vq_conditions(pts, w, [0, 1, 1, 1], [0.5, 4.5])
        assert not ok

    def test_fine_cells_on_rate_design(self, mixture):
        from iquant.dp import dp_indirect_rate

        tm = transform_to_u(mixture, np.linspace(-15, 15, 61))
        q, _, _ = dp_indirect_rate(tm, 3)
        assert check_fine_cells(tm, q)
        bad = Quantizer(q.thresholds, q.recon[::-1], domain="u")
        assert not check_fine_cells(tm, bad)
