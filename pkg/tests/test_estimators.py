import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from iquant.estimators import ThresholdQuantizer, TypeQuantizer


def test_params_round_trip():
    est = ThresholdQuantizer(n_thresholds=3, designer="dp-indirect-threshold", grid_size=101)
    params = est.get_params()
    assert params["n_thresholds"] == 3 and params["grid_size"] == 101
    twin = clone(est).set_params(n_thresholds=2)
    assert twin.n_thresholds == 2 and est.n_thresholds == 3


def test_fit_transform_predict(mixture):
    est = ThresholdQuantizer(n_thresholds=2).fit(mixture)
    X = np.array([-9.0, 0.0, 9.0])
    idx = est.transform(X)
    assert idx.dtype.kind == "i"
    np.testing.assert_array_equal(est.predict(X), est.recon_[idx])
    np.testing.assert_array_equal(est.inverse_transform(idx), est.predict(X))
    assert est.mse_ == pytest.approx(est.trace_.mse[-1])


def test_dp_designers(mixture, gauss3):
    a = ThresholdQuantizer(2, "dp-indirect-threshold", grid_size=121, grid_range=(-15, 15)).fit(mixture)
    b = ThresholdQuantizer(2, "naive-two-step", grid_size=121, grid_range=(-15, 15)).fit(mixture)
    assert a.mse_ <= b.mse_
    c = ThresholdQuantizer(2, "dp-direct").fit(gauss3)
    assert c.trace_ is None and c.thresholds_.size == 2


def test_errors(mixture):
    with pytest.raises(NotFittedError):
        ThresholdQuantizer().transform([0.0])
    with pytest.raises(ValueError):
        ThresholdQuantizer(designer="kmeans").fit(mixture)
    with pytest.raises(TypeError):
        ThresholdQuantizer().fit(np.zeros((3, 2)))
    est = ThresholdQuantizer(1).fit(mixture)
    with pytest.raises(ValueError):
        est.inverse_transform([2])


def test_type_quantizer(small_mixture):
    est = TypeQuantizer(n_observations=3, n_thresholds=1).fit(small_mixture)
    X = np.array([[-6.0, 6.0, 6.0], [-6.0, -6.0, 6.0]])
    types = est.transform(X)
    assert types.shape == (2, 2) and np.all(types.sum(axis=1) == 3)
    assert est.predict(X).shape == (2,)
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 2)))
    with pytest.raises(NotFittedError):
        TypeQuantizer().predict(X)
    assert clone(est).get_params() == est.get_params()
