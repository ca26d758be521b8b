"""scikit-learn style wrappers around the designers.

The estimators are fitted on a statistical model rather than on samples:
``fit(model)`` designs the quantizer, after which ``transform`` maps
observations to cell indices and ``predict`` to reconstructions of S.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dp import dp_direct, dp_indirect_threshold, naive_two_step
from .lloyd import lloyd_indirect
from .model import Grid1D, ScalarModel
from .vector import design_vector_iterative

_SCALAR = ("iterative", "dp-direct", "dp-indirect-threshold", "naive-two-step")


def _check_model(model) -> ScalarModel:
    if not isinstance(model, ScalarModel):
        raise TypeError(f"fit expects a ScalarModel, got {type(model).__name__}")
    return model


def _observations(X) -> np.ndarray:
    """Accept a 1-D array of observations or an (m, 1) column."""
    X = check_array(X, ensure_2d=False, dtype=float)
    if X.ndim == 2:
        if X.shape[1] != 1:
            raise ValueError(f"expected one feature, got {X.shape[1]}")
        X = X[:, 0]
    return X


class ThresholdQuantizer(TransformerMixin, BaseEstimator):
    """Contiguous-cell quantizer of X designed to estimate S.

    Parameters
    ----------
    n_thresholds : int
        Number of thresholds T.
    designer : {'iterative', 'dp-indirect-threshold', 'dp-direct', 'naive-two-step'}
    grid_size, grid_range : int, (float, float) or None
        Candidate threshold grid for the DP designers (and for the iterative
        designer when ``snap_to_grid``). Without a range the central
        ``1 - 2e-6`` of the X distribution is used.
    init, eps, max_iter, seed, snap_to_grid
        Passed to :func:`lloyd_indirect`.

    Attributes
    ----------
    quantizer_ : Quantizer
    thresholds_, recon_ : ndarray
    mse_ : float
    trace_ : IterationTrace or None
    """

    def __init__(self, n_thresholds=1, designer="iterative", grid_size=401, grid_range=None,
                 init="quantile", eps=1e-10, max_iter=500, seed=None, snap_to_grid=False):
        self.n_thresholds = n_thresholds
        self.designer = designer
        self.grid_size = grid_size
        self.grid_range = grid_range
        self.init = init
        self.eps = eps
        self.max_iter = max_iter
        self.seed = seed
        self.snap_to_grid = snap_to_grid

    def _grid(self, model):
        if self.grid_range is None:
            lo, hi = model.quantile(1e-6), model.quantile(1 - 1e-6)
        else:
            lo, hi = self.grid_range
        return Grid1D.linspace(lo, hi, self.grid_size)

    def fit(self, model, y=None):
        model = _check_model(model)
        if self.designer not in _SCALAR:
            raise ValueError(f"designer must be one of {_SCALAR}, got {self.designer!r}")
        T = int(self.n_thresholds)
        self.trace_ = None
        if self.designer == "iterative":
            grid = self._grid(model) if self.snap_to_grid else None
            q, self.trace_ = lloyd_indirect(model, T, self.init, self.eps, self.max_iter,
                                            grid=grid, seed=self.seed)
            mse = self.trace_.mse[-1]
        else:
            fn = {"dp-direct": dp_direct, "dp-indirect-threshold": dp_indirect_threshold,
                  "naive-two-step": naive_two_step}[self.designer]
            q, mse = fn(model, self._grid(model), T)
        self.quantizer_ = q
        self.thresholds_ = q.thresholds
        self.recon_ = q.recon
        self.mse_ = float(mse)
        return self

    def transform(self, X):
        """Cell index of every observation."""
        check_is_fitted(self, "quantizer_")
        return self.quantizer_.encode(_observations(X))

    def predict(self, X):
        """Reconstruction of S for every observation."""
        return self.quantizer_.decode(self.transform(X))

    def inverse_transform(self, indices):
        check_is_fitted(self, "quantizer_")
        idx = np.asarray(indices, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= self.quantizer_.n_levels):
            raise ValueError("cell index out of range")
        return self.quantizer_.decode(idx)


class TypeQuantizer(BaseEstimator):
    """Shared-threshold quantizer of n observations with type-based estimates.

    Attributes
    ----------
    design_ : VectorQuantizerDesign
    thresholds_ : ndarray
    mse_ : float
    trace_ : IterationTrace
    """

    def __init__(self, n_observations=2, n_thresholds=1, init="quantile", eps=1e-10,
                 max_iter=500, seed=None):
        self.n_observations = n_observations
        self.n_thresholds = n_thresholds
        self.init = init
        self.eps = eps
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, model, y=None):
        _check_model(model)
        self.design_, self.trace_ = design_vector_iterative(
            model, int(self.n_observations), int(self.n_thresholds), self.init, self.eps,
            self.max_iter, seed=self.seed)
        self.thresholds_ = self.design_.thresholds
        self.mse_ = self.trace_.mse[-1]
        return self

    def _check_X(self, X):
        check_is_fitted(self, "design_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.design_.n:
            raise ValueError(f"expected {self.design_.n} observations per row, got {X.shape[1]}")
        return X

    def transform(self, X):
        """Type (symbol counts) of each row of observations."""
        X = self._check_X(X)
        return self.design_.types_of(X)

    def predict(self, X):
        """Estimate of S for each row of observations."""
        X = self._check_X(X)
        return self.design_.estimate(X)
