"""Alternating (Lloyd-Max style) design of threshold quantizers for S given X.

Each iteration replaces the reconstructions by the conditional means of S
over the current cells, then moves every threshold, in order, to a point
where ``g(t) = (s_left + s_right) / 2``. Because ``g`` need not be monotone,
that equation can have several roots; the root taken is the first one met
when walking downhill from the previous threshold, which keeps the
iteration a descent method and preserves threshold order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .csvio import write_csv
from .exceptions import NumericalError
from .model import DirectModel, Grid1D, ScalarModel
from .quantizer import X_DOMAIN, Quantizer, centroids_for, evaluate_mse, threshold_objective

STOP_MSE_DELTA = "mse_delta"
STOP_MAX_ITER = "max_iter"
STOP_STALLED = "stalled_root"

INIT_POLICIES = ("quantile", "uniform", "random")

_ROOT_XTOL = 1e-14


@dataclass
class IterationTrace:
    """Per-iteration snapshots of an alternating design run.

    Entry 0 is the initial state; entry ``k`` is the state after ``k``
    updates. ``stalled[k]`` tells whether any threshold in update ``k`` had
    no root in its bracket.
    """

    thresholds: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    stalled: list = field(default_factory=list)
    converged: bool = False
    stop_reason: str = STOP_MAX_ITER
    clamped: int = 0

    @property
    def iteration_count(self) -> int:
        return max(len(self.mse) - 1, 0)

    def record(self, t, r, mse, stalled=False) -> None:
        self.thresholds.append(np.array(t, dtype=float))
        self.recon.append(np.array(r, dtype=float))
        self.mse.append(float(mse))
        self.stalled.append(bool(stalled))

    def mse_non_increasing(self, slack: float = 1e-12) -> bool:
        return bool(np.all(np.diff(self.mse) <= slack))

    def max_move(self) -> np.ndarray:
        """Largest threshold displacement of each update."""
        t = np.array(self.thresholds)
        return np.abs(np.diff(t, axis=0)).max(axis=1) if len(t) > 1 and t.shape[1] else np.zeros(0)

    def rows(self):
        for k, (t, m) in enumerate(zip(self.thresholds, self.mse)):
            yield (k, m, *t)

    def columns(self):
        T = self.thresholds[0].size if self.thresholds else 0
        return ["iter", "mse", *(f"t_{i + 1}" for i in range(T))]

    def to_csv(self, path):
        return write_csv(path, self.columns(), self.rows())


# --------------------------------------------------------------------------
# root finding


def _interior_nodes(model: ScalarModel, lo: float, hi: float) -> np.ndarray:
    x = model.x_points
    return x[(x > lo) & (x < hi)]


def _first_sign_change(fun, start: float, nodes: np.ndarray):
    """Walk from ``start`` across ``nodes`` (in walking order) to a root.

    Returns the root, or ``None`` if ``fun`` keeps the sign it has at
    ``start`` over every node.
    """
    f0 = float(fun(start))
    if f0 == 0.0:
        return start
    if nodes.size == 0:
        return None
    vals = fun(nodes)
    hit = np.flatnonzero(np.sign(vals) != np.sign(f0))
    if hit.size == 0:
        return None
    k = int(hit[0])
    if vals[k] == 0.0:
        return float(nodes[k])
    a = start if k == 0 else float(nodes[k - 1])
    b = float(nodes[k])
    lo, hi = min(a, b), max(a, b)
    return float(brentq(fun, lo, hi, xtol=_ROOT_XTOL, rtol=4 * np.finfo(float).eps))


def _stationarity(model: ScalarModel, target: float, slope_sign: float = 1.0):
    """``slope_sign * (h1(t) - target * h0(t))``; same roots as g(t) - target."""

    def fun(t):
        t = np.asarray(t, dtype=float)
        out = slope_sign * (model._h[1](t) - target * model._h[0](t))
        return out if out.ndim else float(out)

    return fun


def solve_threshold(model: ScalarModel, target: float, bracket, prev: float, *,
                    slope_sign: float = 0.0, full_output: bool = False):
    """Solve ``g(t) = target`` for a threshold inside the open ``bracket``.

    Parameters
    ----------
    model : ScalarModel
    target : float
        Midpoint of the two neighbouring reconstructions.
    bracket : (float, float)
        Neighbouring thresholds (or the ends of the X grid).
    prev : float
        Current threshold, strictly inside ``bracket``.
    slope_sign : float, default 0
        ``0`` returns the root nearest ``prev``. A non-zero value is the sign
        of ``s_right - s_left``; the search then walks from ``prev`` in the
        direction that lowers the MSE and stops at the first root, so the
        move is always a descent step.
    full_output : bool, default False
        Also return a flag that is ``True`` when no root exists.

    Returns
    -------
    t : float
        The root. Without a root, ``slope_sign=0`` falls back to the grid
        point of the bracket minimizing ``|g(t) - target|``; the descent mode
        falls back to the last grid point strictly inside the bracket along
        the descent direction.
    stalled : bool
        Only with ``full_output``.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError(f"empty bracket ({lo}, {hi})")
    prev = float(np.clip(prev, lo, hi))
    if not lo < prev < hi:
        prev = 0.5 * (lo + hi)
    nodes = _interior_nodes(model, lo, hi)
    left, right = nodes[nodes < prev][::-1], nodes[nodes > prev]
    stalled = False

    if slope_sign == 0:
        fun = _stationarity(model, target)
        roots = [r for r in (_first_sign_change(fun, prev, left),
                             _first_sign_change(fun, prev, right)) if r is not None]
        if roots:
            t = min(roots, key=lambda r: (abs(r - prev), r))
        else:
            stalled = True
            cand = np.concatenate([nodes, [prev]])
            h0 = model.fx(cand)
            resid = np.where(h0 > 0, np.abs(model.g(cand) - target), np.inf)
            t = float(cand[int(np.argmin(resid))]) if np.isfinite(resid).any() else prev
    else:
        fun = _stationarity(model, target, np.sign(slope_sign))
        f0 = fun(prev)
        if f0 == 0.0:
            t = prev
        else:
            # the MSE derivative has the sign of fun; walk against it
            path = left if f0 > 0 else right
            root = _first_sign_change(fun, prev, path)
            if root is None:
                stalled = True
                t = float(path[-1]) if path.size else prev
            else:
                t = root
    return (float(t), stalled) if full_output else float(t)


# --------------------------------------------------------------------------
# initialization


def _support(model: ScalarModel):
    x = model.x_points
    live = np.flatnonzero(model.fx(x) > 0)
    return float(x[live[0]]), float(x[live[-1]])


def initial_thresholds(model: ScalarModel, T: int, init="quantile", seed=None) -> np.ndarray:
    """Starting thresholds for a policy name or an explicit array.

    ``quantile`` puts the thresholds at the ``l / (T + 1)`` quantiles of X,
    ``uniform`` spaces them evenly across the support of f_X and ``random``
    draws the quantile levels uniformly with ``seed``.
    """
    if not isinstance(init, str):
        t = np.asarray(init, dtype=float).ravel()
        if t.size != T:
            raise ValueError(f"initial thresholds have {t.size} entries, expected {T}")
    elif init == "quantile":
        t = np.array([model.quantile((k + 1) / (T + 1)) for k in range(T)])
    elif init == "uniform":
        lo, hi = _support(model)
        t = lo + (hi - lo) * np.arange(1, T + 1) / (T + 1)
    elif init == "random":
        levels = np.sort(np.random.default_rng(seed).uniform(0.0, 1.0, T))
        t = np.array([model.quantile(q) for q in levels])
    else:
        raise ValueError(f"unknown init policy {init!r}; choose from {INIT_POLICIES} or pass an array")
    if np.any(np.diff(t) <= 0) or not np.all(np.isfinite(t)):
        raise ValueError("initial thresholds must be finite and strictly increasing")
    return t


def _snap(points: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Distinct grid points nearest to ``t``, keeping the order."""
    idx = np.clip(np.searchsorted(points, t), 1, points.size - 1)
    idx = np.where(np.abs(points[idx - 1] - t) <= np.abs(points[idx] - t), idx - 1, idx)
    for k in range(1, idx.size):
        idx[k] = max(idx[k], idx[k - 1] + 1)
    if idx.size and idx[-1] >= points.size:
        raise ValueError("threshold grid too coarse for the requested number of thresholds")
    return points[idx]


# --------------------------------------------------------------------------
# the iteration


def _mse(model, t):
    r = centroids_for(model, t)
    return r, evaluate_mse(model, Quantizer(t, r, X_DOMAIN))


def _grid_step(model, gpts, target, slope, bracket, prev, left_r, right_r):
    """Best grid point next to the continuous root; moves only on strict gain."""
    root = solve_threshold(model, target, bracket, prev, slope_sign=slope)
    j = int(np.searchsorted(gpts, root))
    cand = [p for p in gpts[max(j - 1, 0):j + 1] if bracket[0] < p < bracket[1]]
    best, best_val = prev, threshold_objective(model, prev, left_r, right_r)
    for p in cand:
        val = threshold_objective(model, p, left_r, right_r)
        if val < best_val:
            best, best_val = float(p), val
    return best


def lloyd_indirect(model: ScalarModel, T: int, init="quantile", eps: float = 1e-10,
                   max_iter: int = 500, *, grid=None, xtol: float | None = 1e-8, seed=None):
    """Iterative threshold-quantizer design for estimating S from X.

    Parameters
    ----------
    model : ScalarModel
        Joint model, or a :class:`DirectModel` for classical Lloyd-Max.
    T : int
        Number of thresholds (``T + 1`` cells).
    init : {'quantile', 'uniform', 'random'} or array_like
        Initial thresholds, see :func:`initial_thresholds`.
    eps : float
        Stop once an iteration lowers the MSE by no more than ``eps``.
    max_iter : int
    grid : Grid1D or array_like, optional
        Restrict thresholds to these points. Each threshold then moves to the
        better grid neighbour of its continuous root, and only if that
        strictly lowers the MSE.
    xtol : float, optional
        Additionally require the largest threshold move of the last
        iteration to be at most ``xtol`` before stopping.
    seed : int, optional
        Seed of the ``random`` policy.

    Returns
    -------
    quantizer : Quantizer
        Final thresholds with their centroids.
    trace : IterationTrace
    """
    if T < 1:
        raise ValueError("the iterative designer needs T >= 1")
    xp = model.x_points
    if T >= xp.size - 1:
        raise ValueError(f"T={T} exceeds the resolution of the X grid ({xp.size} points)")
    if not all(np.all(np.isfinite(h.coef)) for h in model._h):
        raise ValueError("model has non-finite moment densities")
    gpts = None
    if grid is not None:
        gpts = np.asarray(grid.points if isinstance(grid, Grid1D) else grid, dtype=float)
    t = initial_thresholds(model, T, init, seed)
    if gpts is not None:
        t = _snap(gpts, t)
    lo_end, hi_end = float(xp[0]), float(xp[-1])
    if gpts is not None:
        lo_end, hi_end = min(lo_end, gpts[0] - 1.0), max(hi_end, gpts[-1] + 1.0)

    trace = IterationTrace()
    r, mse = _mse(model, t)
    trace.record(t, r, mse)
    for _ in range(max_iter):
        old = t.copy()
        new = t.copy()
        any_stall = False
        for k in range(T):
            a, b = r[k], r[k + 1]
            lo = new[k - 1] if k > 0 else lo_end
            hi = old[k + 1] if k + 1 < T else hi_end
            if a == b:
                continue
            target = 0.5 * (a + b)
            slope = np.sign(b - a)
            if gpts is not None:
                cand = _grid_step(model, gpts, target, slope, (lo, hi), old[k], a, b)
                stalled = False
            else:
                cand, stalled = solve_threshold(model, target, (lo, hi), old[k],
                                                slope_sign=slope, full_output=True)
                if threshold_objective(model, cand, a, b) > threshold_objective(model, old[k], a, b):
                    cand = old[k]
            any_stall |= stalled
            if not lo < cand < hi:
                cand = 0.5 * (lo + hi)
                trace.clamped += 1
            new[k] = cand
        t = new
        r, mse_new = _mse(model, t)
        if not np.isfinite(mse_new):
            raise NumericalError(f"non-finite MSE after {trace.iteration_count} iterations")
        trace.record(t, r, mse_new, any_stall)
        delta = mse - mse_new
        mse = mse_new
        move = float(np.max(np.abs(t - old)))
        if delta <= eps and (xtol is None or move <= xtol):
            trace.converged = not any_stall
            trace.stop_reason = STOP_STALLED if any_stall else STOP_MSE_DELTA
            break
    return Quantizer(t, r, X_DOMAIN), trace


def lloyd_max(model: DirectModel, T: int, init="quantile", eps: float = 1e-10,
              max_iter: int = 500, **kwargs):
    """Classical Lloyd-Max design of a quantizer for a directly observed source."""
    if not isinstance(model, DirectModel):
        raise TypeError("lloyd_max needs a DirectModel; use lloyd_indirect")
    return lloyd_indirect(model, T, init, eps, max_iter, **kwargs)
