"""Statistical models of a source S and its observation X on finite grids.

Every model exposes the three moment densities

    h_k(x) = integral of s**k f(s, x) ds,   k = 0, 1, 2

along the observation axis as piecewise polynomials that are integrated
exactly. Interval probabilities and conditional moments then reduce to
differences of antiderivatives, and ``g(x) = h_1(x) / h_0(x)`` is the exact
derivative ratio of those antiderivatives, so the boundary condition of a
quantizer coincides with stationarity of its (discretized) MSE.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .exceptions import DegenerateModelError, TruncationError

#: Cells with less probability than this are treated as empty.
PROB_FLOOR = 1e-12

#: Largest tail mass a grid may truncate before a model refuses to build.
MAX_TAIL_MASS = 1e-4


@dataclass(frozen=True)
class Grid1D:
    """Strictly increasing set of coordinates on one axis."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise ValueError("a grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if np.any(np.diff(pts) <= 0):
            raise ValueError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def linspace(cls, lo: float, hi: float, num: int) -> "Grid1D":
        return cls(np.linspace(lo, hi, int(num)))

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.points)

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    def __len__(self) -> int:
        return self.points.size


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Weights w such that ``w @ f(points)`` is the trapezoid integral."""
    points = np.asarray(points, dtype=float)
    d = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


class PiecewisePoly:
    """Piecewise polynomial on ``knots``, zero outside, with exact antiderivative.

    ``coef[i, k]`` multiplies ``(x - knots[i]) ** k`` on segment ``i``.
    """

    def __init__(self, knots: np.ndarray, coef: np.ndarray):
        self.knots = np.asarray(knots, dtype=float)
        self.coef = np.asarray(coef, dtype=float)
        nseg, ncoef = self.coef.shape
        if nseg != self.knots.size - 1:
            raise ValueError("one coefficient row per segment is required")
        width = np.diff(self.knots)
        orders = np.arange(1, ncoef + 1)
        self._orders = orders
        seg_integral = (self.coef * width[:, None] ** orders / orders).sum(axis=1)
        self.cumulative = np.concatenate([[0.0], np.cumsum(seg_integral)])

    @classmethod
    def linear(cls, knots: np.ndarray, values: np.ndarray) -> "PiecewisePoly":
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        slope = np.diff(values) / np.diff(knots)
        return cls(knots, np.column_stack([values[:-1], slope]))

    @property
    def total(self) -> float:
        return float(self.cumulative[-1])

    def _locate(self, x):
        idx = np.searchsorted(self.knots, x, side="right") - 1
        idx = np.clip(idx, 0, self.knots.size - 2)
        return idx, x - self.knots[idx]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        idx, u = self._locate(np.where(np.isfinite(x), x, self.knots[0]))
        powers = u[..., None] ** np.arange(self.coef.shape[1])
        val = (self.coef[idx] * powers).sum(axis=-1)
        inside = (x >= self.knots[0]) & (x <= self.knots[-1])
        return np.where(inside, val, 0.0)

    def antiderivative(self, x):
        """Integral from -inf to x; exact at knots (prefix sums)."""
        x = np.asarray(x, dtype=float)
        idx, u = self._locate(np.where(np.isfinite(x), x, self.knots[0]))
        powers = u[..., None] ** self._orders / self._orders
        val = self.cumulative[idx] + (self.coef[idx] * powers).sum(axis=-1)
        val = np.where(u == 0.0, self.cumulative[idx], val)
        val = np.where(x <= self.knots[0], 0.0, val)
        return np.where(x >= self.knots[-1], self.cumulative[-1], val)


class IntervalStats(NamedTuple):
    prob: float
    cond_mean: float
    cond_var: float


def cell_stats(dp, dm1, dm2):
    """Probability, conditional mean and variance from moment increments.

    Vectorized; cells below ``PROB_FLOOR`` get mean ``nan`` and variance 0
    (callers substitute the empty-cell value for the mean).
    """
    dp = np.asarray(dp, dtype=float)
    safe = np.where(dp > PROB_FLOOR, dp, 1.0)
    mean = np.asarray(dm1, dtype=float) / safe
    var = np.maximum(np.asarray(dm2, dtype=float) / safe - mean * mean, 0.0)
    empty = dp <= PROB_FLOOR
    return dp, np.where(empty, np.nan, mean), np.where(empty, 0.0, var)


def partial_mse_from_moments(dp, dm1, dm2):
    """``Pr(cell) * Var(S | cell)``; the edge metric of the DP designers."""
    prob, _, var = cell_stats(dp, dm1, dm2)
    return np.where(prob > PROB_FLOOR, prob * var, 0.0)


class ScalarModel:
    """Shared behaviour of models with a scalar observation axis.

    Subclasses set ``x_grid`` and the moment densities ``_h`` (a tuple of
    three :class:`PiecewisePoly`).
    """

    x_grid: Grid1D
    _h: tuple

    @property
    def x_points(self) -> np.ndarray:
        return self.x_grid.points

    def moments_at(self, x):
        """Antiderivatives (P, M1, M2) of the moment densities at ``x``."""
        return tuple(h.antiderivative(x) for h in self._h)

    def fx(self, x):
        """Marginal density of X."""
        return self._h[0](x)

    def g(self, x):
        """Regression function E[S | X = x]."""
        h0 = self._h[0](x)
        h1 = self._h[1](x)
        safe = np.where(h0 > 0, h0, 1.0)
        return np.where(h0 > 0, h1 / safe, self.mean)

    @property
    def total_mass(self) -> float:
        return self._h[0].total

    @property
    def mean(self) -> float:
        return self._h[1].total / self._h[0].total

    @property
    def var(self) -> float:
        return self._h[2].total / self._h[0].total - self.mean**2

    @property
    def s_range(self) -> tuple[float, float]:
        raise NotImplementedError

    def interval_stats(self, lo: float, hi: float) -> IntervalStats:
        """Probability, conditional mean and variance of S given X in [lo, hi]."""
        if not lo < hi:
            raise ValueError(f"reversed or empty interval [{lo}, {hi}]")
        (p_lo, m1_lo, m2_lo), (p_hi, m1_hi, m2_hi) = (
            self.moments_at(lo),
            self.moments_at(hi),
        )
        prob, mean, var = cell_stats(p_hi - p_lo, m1_hi - m1_lo, m2_hi - m2_lo)
        if np.isnan(mean):
            mean = self.empty_cell_value(lo, hi)
        return IntervalStats(float(prob), float(mean), float(var))

    def empty_cell_value(self, lo: float, hi: float) -> float:
        """Reconstruction used for a cell carrying no probability."""
        a = max(lo, self.x_grid.lo)
        b = min(hi, self.x_grid.hi)
        if a > b:
            a = b = self.x_grid.lo if hi <= self.x_grid.lo else self.x_grid.hi
        return float(self.g(0.5 * (a + b)))

    def mmse_floor(self) -> float:
        """E[Var(S | X)]: the MSE of estimating S from the unquantized X."""
        x = self.x_points
        h0, h1, h2 = (h(x) for h in self._h)
        safe = np.where(h0 > 0, h0, 1.0)
        integrand = np.where(h0 > 0, np.maximum(h2 - h1 * h1 / safe, 0.0), 0.0)
        return float(trapezoid_weights(x) @ integrand)

    def marginal_direct(self) -> "DirectModel":
        """The model X = X' built from the marginal of X (task-ignorant view)."""
        return DirectModel(self.x_grid, self.fx(self.x_points))

    def quantile(self, q: float) -> float:
        """Inverse of the marginal CDF of X."""
        P = self._h[0]
        target = q * P.total
        knots = P.knots
        j = int(np.searchsorted(P.cumulative, target, side="left"))
        j = min(max(j, 1), knots.size - 1)
        lo, hi = knots[j - 1], knots[j]
        if P.antiderivative(hi) - target <= 0:
            return float(hi)
        return float(brentq(lambda x: P.antiderivative(x) - target, lo, hi, xtol=1e-14))


class JointModel(ScalarModel):
    """Discretized joint density f(s, x), rows indexed by s and columns by x.

    Parameters
    ----------
    s_grid, x_grid : Grid1D
    density : ndarray of shape (len(s_grid), len(x_grid))
        Values of f(s, x) at the grid nodes. Integrals use the trapezoid rule
        along s and the linear interpolant along x.
    normalize : bool
        Rescale the density to unit mass instead of checking it.
    """

    def __init__(self, s_grid: Grid1D, x_grid: Grid1D, density, *, normalize=False):
        density = np.array(density, dtype=float)
        if density.shape != (len(s_grid), len(x_grid)):
            raise ValueError(
                f"density shape {density.shape} does not match grids "
                f"({len(s_grid)}, {len(x_grid)})"
            )
        if not np.all(np.isfinite(density)) or np.any(density < 0):
            raise ValueError("density must be finite and non-negative")
        self.s_grid = s_grid
        self.x_grid = x_grid
        self.s_weights = trapezoid_weights(s_grid.points)
        mass = float(self.s_weights @ density @ trapezoid_weights(x_grid.points))
        if mass <= 0:
            raise DegenerateModelError("density has no mass")
        if normalize:
            density = density / mass
        elif abs(mass - 1.0) > 1e-6:
            raise ValueError(f"density integrates to {mass!r}, expected 1")
        density.setflags(write=False)
        self.density = density
        s = s_grid.points
        nodes = [(self.s_weights * s**k) @ density for k in range(3)]
        self._h = tuple(PiecewisePoly.linear(x_grid.points, v) for v in nodes)
        self.x_marginal = nodes[0]
        safe = np.where(nodes[0] > 0, nodes[0], 1.0)
        self.g_values = np.where(nodes[0] > 0, nodes[1] / safe, self.mean)
        # Implied prior of S: row integrals over x.
        self.s_prior = density @ trapezoid_weights(x_grid.points)
        seg = 0.5 * (density[:, :-1] + density[:, 1:]) * np.diff(x_grid.points)
        self._row_cum = np.concatenate([np.zeros((len(s_grid), 1)), np.cumsum(seg, axis=1)], axis=1)

    @property
    def s_points(self) -> np.ndarray:
        return self.s_grid.points

    @property
    def s_range(self) -> tuple[float, float]:
        return self.s_grid.lo, self.s_grid.hi

    def row_cumulative(self, x) -> np.ndarray:
        """Integral of f(s_i, x') over x' < x for every s node, shape (S, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        knots = self.x_grid.points
        d = self.density
        width = np.diff(knots)
        cum = self._row_cum
        xf = np.where(np.isfinite(x), x, knots[0])
        idx = np.clip(np.searchsorted(knots, xf, "right") - 1, 0, knots.size - 2)
        u = xf - knots[idx]
        slope = (d[:, idx + 1] - d[:, idx]) / width[idx]
        out = cum[:, idx] + d[:, idx] * u + 0.5 * slope * u * u
        out = np.where(u == 0.0, cum[:, idx], out)
        out = np.where(x <= knots[0], 0.0, out)
        return np.where(x >= knots[-1], cum[:, -1:], out)

    def density_at(self, x) -> np.ndarray:
        """f(s_i, x) for every s node (linear in x), shape (S, len(x))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        knots = self.x_grid.points
        idx = np.clip(np.searchsorted(knots, x, "right") - 1, 0, knots.size - 2)
        frac = (x - knots[idx]) / (knots[idx + 1] - knots[idx])
        d = self.density
        out = d[:, idx] * (1.0 - frac) + d[:, idx + 1] * frac
        inside = (x >= knots[0]) & (x <= knots[-1])
        return np.where(inside, out, 0.0)


class DirectModel(ScalarModel):
    """The direct problem X = S with a piecewise-linear source density.

    ``h_1 = x f(x)`` and ``h_2 = x**2 f(x)`` are kept exactly, so
    ``g(x) = x`` everywhere on the support.
    """

    def __init__(self, grid: Grid1D, pdf, *, normalize=False):
        pdf = np.array(pdf, dtype=float)
        if pdf.shape != (len(grid),):
            raise ValueError("pdf must have one value per grid point")
        if not np.all(np.isfinite(pdf)) or np.any(pdf < 0):
            raise ValueError("pdf must be finite and non-negative")
        mass = float(trapezoid_weights(grid.points) @ pdf)
        if mass <= 0:
            raise DegenerateModelError("pdf has no mass")
        if normalize:
            pdf = pdf / mass
        elif abs(mass - 1.0) > 1e-6:
            raise ValueError(f"pdf integrates to {mass!r}, expected 1")
        pdf.setflags(write=False)
        self.x_grid = grid
        self.pdf = pdf
        x0 = grid.points[:-1]
        a = pdf[:-1]
        b = np.diff(pdf) / grid.spacing
        zeros = np.zeros_like(a)
        h0 = np.column_stack([a, b, zeros, zeros])
        h1 = np.column_stack([x0 * a, a + x0 * b, b, zeros])
        h2 = np.column_stack([x0 * x0 * a, 2 * x0 * a + x0 * x0 * b, a + 2 * x0 * b, b])
        self._h = tuple(PiecewisePoly(grid.points, c) for c in (h0, h1, h2))
        self.x_marginal = pdf
        self.g_values = grid.points.copy()

    @property
    def s_grid(self) -> Grid1D:
        return self.x_grid

    @property
    def s_range(self) -> tuple[float, float]:
        return self.x_grid.lo, self.x_grid.hi

    def g(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= self.x_grid.lo) & (x <= self.x_grid.hi) & (self.fx(x) > 0)
        return np.where(inside, x, self.mean)

    def mmse_floor(self) -> float:
        return 0.0

    def marginal_direct(self) -> "DirectModel":
        return self


# --------------------------------------------------------------------------
# builders


def _check_tail(tail: float, what: str) -> None:
    if tail > MAX_TAIL_MASS:
        raise TruncationError(
            f"{what}: grid truncates {tail:.3g} of the probability mass "
            f"(limit {MAX_TAIL_MASS:g}); widen the grid"
        )


def build_gaussian_direct(sigma: float, grid: Grid1D | None = None, *, mean: float = 0.0,
                          num: int = 4097) -> DirectModel:
    """Zero-mean (by default) Gaussian source observed directly.

    The default grid spans 6 standard deviations on each side.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if grid is None:
        grid = Grid1D.linspace(mean - 6 * sigma, mean + 6 * sigma, num)
    tail = norm.cdf(grid.lo, mean, sigma) + norm.sf(grid.hi, mean, sigma)
    _check_tail(float(tail), "gaussian source")
    return DirectModel(grid, norm.pdf(grid.points, mean, sigma), normalize=True)


def build_uniform_direct(low: float = 0.0, high: float = 1.0, num: int = 1025) -> DirectModel:
    """Uniform source on [low, high] observed directly."""
    if not low < high:
        raise ValueError("need low < high")
    grid = Grid1D.linspace(low, high, num)
    return DirectModel(grid, np.full(num, 1.0 / (high - low)))


def mixture_x_grid(mu1: float, mu2: float, s_high: float, num: int = 1024,
                   n_sigma: float = 6.0) -> Grid1D:
    lo = min(mu1, mu2) - n_sigma * s_high
    hi = max(mu1, mu2) + n_sigma * s_high
    return Grid1D.linspace(lo, hi, num)


def build_mixture_model(mu1: float = -5.0, mu2: float = 5.0, s_low: float = 1.0,
                        s_high: float = 2.0, grids: tuple[Grid1D, Grid1D] | None = None,
                        *, s_num: int = 1024, x_num: int = 1024) -> JointModel:
    """Equal-weight two-component Gaussian mixture with unknown common scale.

    X | S=s ~ 0.5 N(mu1, s**2) + 0.5 N(mu2, s**2) and S ~ Uniform[s_low, s_high].
    Each density row is renormalized to the prior after the truncation check.
    """
    if not s_low > 0:
        raise ValueError("s_low must be positive (S is a standard deviation)")
    if not s_low < s_high:
        raise ValueError("need s_low < s_high")
    if grids is None:
        grids = (Grid1D.linspace(s_low, s_high, s_num), mixture_x_grid(mu1, mu2, s_high, x_num))
    s_grid, x_grid = grids
    if s_grid.lo < s_low - 1e-12 or s_grid.hi > s_high + 1e-12:
        raise ValueError("s grid must lie inside [s_low, s_high]")
    s = s_grid.points[:, None]
    x = x_grid.points[None, :]
    kernel = 0.5 * (norm.pdf(x, mu1, s) + norm.pdf(x, mu2, s))
    covered = 0.5 * sum(norm.cdf(x_grid.hi, mu, s[:, 0]) - norm.cdf(x_grid.lo, mu, s[:, 0])
                        for mu in (mu1, mu2))
    _check_tail(float(1.0 - covered.min()), "gaussian mixture")
    kernel /= (kernel @ trapezoid_weights(x_grid.points))[:, None]
    prior = np.full(len(s_grid), 1.0 / (s_grid.hi - s_grid.lo))
    return JointModel(s_grid, x_grid, prior[:, None] * kernel, normalize=True)


# --------------------------------------------------------------------------
# density files


def load_density_file(path) -> JointModel:
    """Read a raw density matrix.

    Line 1 lists the s coordinates, line 2 the x coordinates, and each
    following line is one row f(s_i, x_0 ... x_{m-1}). The density is
    normalized to unit mass on load.
    """
    with open(path, encoding="ascii") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if len(lines) < 3:
        raise ValueError(f"{path}: expected two header lines and density rows")
    s_pts = np.array(lines[0].split(), dtype=float)
    x_pts = np.array(lines[1].split(), dtype=float)
    rows = np.array([ln.split() for ln in lines[2:]], dtype=float)
    return JointModel(Grid1D(s_pts), Grid1D(x_pts), rows, normalize=True)


def save_density_file(model: JointModel, path) -> None:
    fmt = lambda arr: " ".join(format(float(v), ".17g") for v in arr)  # noqa: E731
    with open(path, "w", encoding="ascii") as fh:
        fh.write(fmt(model.s_points) + "\n")
        fh.write(fmt(model.x_points) + "\n")
        for row in model.density:
            fh.write(fmt(row) + "\n")


# --------------------------------------------------------------------------
# change of variables U = g(X)


@dataclass
class TransformedModel:
    """The observation axis re-ordered by the regression value U = g(X).

    The X axis is cut at the candidate thresholds into atoms; each atom is
    summarized by its probability and first two S-moments, and atoms are
    sorted by their conditional mean of S (the discrete image of U). Atoms
    whose U values coincide are merged into one U-cell.

    Attributes
    ----------
    u_values : ndarray
        Increasing U value of every U-cell.
    prob, m1, m2 : ndarray
        Per U-cell mass and S-moments.
    u_to_x_map : list of list of (lo, hi)
        Maximal contiguous X intervals composing each U-cell.
    """

    model: ScalarModel
    x_thresholds: np.ndarray
    u_values: np.ndarray
    prob: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    u_to_x_map: list = field(repr=False)

    @property
    def u_grid(self) -> Grid1D:
        return Grid1D(self.u_values)

    @property
    def candidate_thresholds(self) -> np.ndarray:
        """U thresholds separating consecutive U-cells (midpoints)."""
        return 0.5 * (self.u_values[:-1] + self.u_values[1:])

    @property
    def degenerate(self) -> bool:
        return self.u_values.size < 2

    def prefix(self):
        """Prefix sums of (P, M1, M2) over U-cells, with a leading zero."""
        z = np.zeros(1)
        return tuple(np.concatenate([z, np.cumsum(a)]) for a in (self.prob, self.m1, self.m2))


def _merge_runs(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and out[-1][1] == lo:
            out[-1] = (out[-1][0], hi)
        else:
            out.append((lo, hi))
    return out


def transform_to_u(model: ScalarModel, grid, *, tol: float = 1e-12) -> TransformedModel:
    """Sort the X atoms cut by ``grid`` by their U = E[S | atom] value.

    ``grid`` holds the candidate X thresholds (strictly increasing). Atoms
    with U values within ``tol`` (relative to max(1, |u|)) form one U-cell.
    """
    t = np.asarray(grid.points if isinstance(grid, Grid1D) else grid, dtype=float)
    if t.ndim != 1 or np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    edges = np.concatenate([[-np.inf], t, [np.inf]])
    P, M1, M2 = model.moments_at(edges)
    dp, dm1, dm2 = np.diff(P), np.diff(M1), np.diff(M2)
    _, mean, _ = cell_stats(dp, dm1, dm2)
    for k in np.flatnonzero(np.isnan(mean)):
        mean[k] = model.empty_cell_value(edges[k], edges[k + 1])
    order = np.argsort(mean, kind="stable")
    u_vals, probs, m1s, m2s, runs = [], [], [], [], []
    for k in order:
        u = mean[k]
        if u_vals and abs(u - u_vals[-1]) <= tol * max(1.0, abs(u)):
            probs[-1] += dp[k]
            m1s[-1] += dm1[k]
            m2s[-1] += dm2[k]
            runs[-1].append((edges[k], edges[k + 1]))
        else:
            u_vals.append(u)
            probs.append(dp[k])
            m1s.append(dm1[k])
            m2s.append(dm2[k])
            runs.append([(edges[k], edges[k + 1])])
    return TransformedModel(
        model=model,
        x_thresholds=t,
        u_values=np.array(u_vals),
        prob=np.array(probs),
        m1=np.array(m1s),
        m2=np.array(m2s),
        u_to_x_map=[_merge_runs(r) for r in runs],
    )
