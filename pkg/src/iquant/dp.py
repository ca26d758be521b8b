"""Globally optimal designers over a finite threshold grid.

All three dynamic programs share one recursion: a partition of an ordered
sequence of atoms into contiguous groups, scored by the partial MSE
``Pr(group) Var(S | group)``. They differ only in what the atoms are:
X intervals of the source itself (direct), X intervals of the observation
(threshold-constrained indirect), or U-cells sorted by E[S | atom]
(rate-constrained indirect).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BudgetExceededError, DegenerateModelError
from .model import (
    DirectModel,
    Grid1D,
    ScalarModel,
    TransformedModel,
    _merge_runs,
    cell_stats,
    partial_mse_from_moments,
)
from .quantizer import U_DOMAIN, X_DOMAIN, CellMap, Quantizer, centroids_for, evaluate_mse

#: Largest candidate grid the metric cache is built for.
MAX_GRID = 4096

#: Largest number of subsets the brute-force oracle enumerates.
BRUTE_FORCE_BUDGET = 10**6


def threshold_grid(lo: float, hi: float, num: int) -> Grid1D:
    """Evenly spaced candidate thresholds, endpoints included."""
    return Grid1D.linspace(lo, hi, num)


def interior_grid(model: ScalarModel, num: int) -> Grid1D:
    """``num`` evenly spaced thresholds strictly inside the model's X range."""
    pts = np.linspace(model.x_grid.lo, model.x_grid.hi, num + 2)[1:-1]
    return Grid1D(pts)


def _as_points(grid) -> np.ndarray:
    pts = np.asarray(grid.points if isinstance(grid, Grid1D) else grid, dtype=float)
    if pts.ndim != 1 or np.any(np.diff(pts) <= 0):
        raise ValueError("threshold grid must be strictly increasing")
    return pts


def grid_prefix(model: ScalarModel, grid):
    """Antiderivatives at ``[-inf, *grid, +inf]``."""
    edges = np.concatenate([[-np.inf], _as_points(grid), [np.inf]])
    return model.moments_at(edges)


def metric_matrix(P, M1, M2) -> np.ndarray:
    """Partial MSE of every group ``(i, j]``; ``inf`` where ``j <= i``."""
    P, M1, M2 = (np.asarray(a, dtype=float) for a in (P, M1, M2))
    n = P.size
    if n - 2 > MAX_GRID:
        raise BudgetExceededError(f"grid of {n - 2} points exceeds the cap of {MAX_GRID}")
    metric = partial_mse_from_moments(
        P[None, :] - P[:, None], M1[None, :] - M1[:, None], M2[None, :] - M2[:, None]
    )
    metric[np.tril_indices(n)] = np.inf
    return metric


@dataclass
class DpTable:
    """State values and back-pointers of one DP solve.

    ``stages[l][j]`` is the least accumulated partial MSE of ``l + 1``
    groups whose last cut is candidate ``j`` (index 0 is the ``-inf``
    sentinel, index ``K + 1`` the ``+inf`` sentinel). ``backptr[l][j]`` is
    the predecessor attaining it.
    """

    stages: list
    backptr: list
    metric_cache: np.ndarray
    cuts: tuple
    mse: float


def solve_partition(P, M1, M2, n_cuts: int) -> DpTable:
    """Optimal ``n_cuts`` cuts among the interior candidates of a prefix table.

    Ties resolve to the smallest predecessor index at every stage, so among
    equally good solutions the one with the smallest last cut wins, then the
    smallest second-to-last cut, and so on.
    """
    metric = metric_matrix(P, M1, M2)
    n = metric.shape[0]
    K = n - 2
    if n_cuts < 0:
        raise ValueError("number of thresholds must be non-negative")
    if n_cuts > K:
        raise ValueError(f"cannot place {n_cuts} thresholds on a grid of {K} points")
    end = n - 1
    if n_cuts == 0:
        mse = float(metric[0, end])
        return DpTable([], [], metric, (), mse)
    interior = np.zeros(n, dtype=bool)
    interior[1:end] = True
    state = np.where(interior, metric[0], np.inf)
    stages = [state]
    backptr = [np.zeros(n, dtype=int)]
    for _ in range(1, n_cuts):
        cand = state[:, None] + metric
        idx = np.argmin(cand, axis=0)
        state = np.where(interior, cand[idx, np.arange(n)], np.inf)
        stages.append(state)
        backptr.append(idx)
    final = state + metric[:, end]
    j = int(np.argmin(final))
    mse = float(final[j])
    cuts = [j]
    for level in range(n_cuts - 1, 0, -1):
        j = int(backptr[level][j])
        cuts.append(j)
    return DpTable(stages, backptr, metric, tuple(reversed(cuts)), mse)


def _x_design(model: ScalarModel, grid, T: int):
    pts = _as_points(grid)
    table = solve_partition(*grid_prefix(model, pts), T)
    t = pts[np.array(table.cuts, dtype=int) - 1] if T else np.empty(0)
    q = Quantizer(t, centroids_for(model, t), X_DOMAIN)
    return q, table.mse


def dp_direct(model: DirectModel, grid, T: int):
    """Optimal thresholds for quantizing a source observed without noise.

    Returns ``(quantizer, mse)``; the thresholds are the best ``T``-subset
    of ``grid``.
    """
    if not isinstance(model, DirectModel):
        raise TypeError("dp_direct needs a DirectModel (X = S); use dp_indirect_threshold")
    return _x_design(model, grid, T)


def dp_indirect_threshold(model: ScalarModel, grid, T: int):
    """Optimal contiguous-cell quantizer of X for estimating S.

    Returns ``(quantizer, mse)`` with the best ``T``-subset of ``grid``.
    """
    return _x_design(model, grid, T)


def _u_groups(tmodel: TransformedModel, cuts):
    """U-cell index ranges of the groups delimited by ``cuts``."""
    bounds = [0, *cuts, tmodel.u_values.size]
    return [range(bounds[k], bounds[k + 1]) for k in range(len(bounds) - 1)]


def _u_design(tmodel: TransformedModel, cuts):
    cuts = [int(c) for c in cuts]
    u = tmodel.u_values
    thresholds = np.array([0.5 * (u[c - 1] + u[c]) for c in cuts])
    recon, cells = [], []
    for grp in _u_groups(tmodel, cuts):
        idx = np.fromiter(grp, dtype=int)
        _, mean, _ = cell_stats(tmodel.prob[idx].sum(), tmodel.m1[idx].sum(), tmodel.m2[idx].sum())
        recon.append(float(mean) if not np.isnan(mean) else float(u[idx].mean()))
        cells.append(tuple(_merge_runs(iv for k in idx for iv in tmodel.u_to_x_map[k])))
    return Quantizer(thresholds, recon, U_DOMAIN), CellMap(tuple(cells), recon)


def dp_indirect_rate(tmodel: TransformedModel, T: int):
    """Optimal ``T + 1``-level quantizer whose cells may be unions of intervals.

    Cells are contiguous in U = g(X); ``T`` counts U thresholds. Returns
    ``(quantizer_in_u, cell_map, mse)``.
    """
    if tmodel.degenerate and T > 0:
        raise DegenerateModelError("U = g(X) is constant; extra levels cannot help")
    if T > tmodel.u_values.size - 1:
        raise ValueError(f"cannot place {T} U thresholds between {tmodel.u_values.size} U-cells")
    table = solve_partition(*tmodel.prefix(), T)
    q, cells = _u_design(tmodel, table.cuts)
    return q, cells, table.mse


def naive_two_step(model: ScalarModel, grid, T: int):
    """Task-ignorant design: thresholds that are optimal for X itself.

    The thresholds minimize E[(X - X_hat)^2]; reconstructions are then the
    MMSE estimates of S given the cell. Returns ``(quantizer, mse)``.
    """
    q_x, _ = dp_direct(model.marginal_direct(), grid, T)
    q = Quantizer(q_x.thresholds, centroids_for(model, q_x.thresholds), X_DOMAIN)
    return q, evaluate_mse(model, q)


def brute_force(model, grid=None, T: int = 1, *, budget: int = BRUTE_FORCE_BUDGET):
    """Exhaustive minimum over every sorted ``T``-subset of the candidates.

    ``model`` is a scalar model (candidates = ``grid``) or a
    :class:`TransformedModel` (candidates = its U-cell boundaries, and
    ``grid`` is ignored). Cell costs are summed left to right; ties go to
    the smallest last threshold, then the smallest one before it, etc.
    Returns ``(quantizer, mse)``.
    """
    if isinstance(model, TransformedModel):
        P, M1, M2 = model.prefix()
        K = model.u_values.size - 1
        offset = 0  # cut c separates U-cells c-1 and c
    else:
        pts = _as_points(grid)
        P, M1, M2 = grid_prefix(model, pts)
        K = pts.size
        offset = 1  # cut c is candidate c-1; -inf sentinel at 0
    if T < 0 or T > K:
        raise ValueError(f"cannot place {T} thresholds among {K} candidates")
    if math.comb(K, T) > budget:
        raise BudgetExceededError(f"C({K}, {T}) subsets exceed the budget of {budget}")
    end = P.size - 1
    best_key, best = None, None
    for combo in itertools.combinations(range(1, K + 1), T):
        bounds = (0, *combo, end)
        total = 0.0
        for a, b in zip(bounds, bounds[1:]):
            total = total + float(partial_mse_from_moments(P[b] - P[a], M1[b] - M1[a], M2[b] - M2[a]))
        key = (total, tuple(reversed(combo)))
        if best_key is None or key < best_key:
            best_key, best = key, combo
    mse = best_key[0]
    if isinstance(model, TransformedModel):
        q, _ = _u_design(model, best)
        return q, mse
    t = pts[np.array(best, dtype=int) - offset] if T else np.empty(0)
    return Quantizer(t, centroids_for(model, t), X_DOMAIN), mse
