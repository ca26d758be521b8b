"""Shared-threshold quantization of n conditionally i.i.d. observations.

Every coordinate X_1..X_n of the observation is quantized by the same
scalar quantizer. Because the coordinates are exchangeable given S, the
MMSE reconstruction depends only on the *type* of the index vector, the
count of each symbol. The engine therefore works with

    P(l | s)        probability that one observation falls in cell l,
    P^n(Q | s)      probability of one particular index sequence of type Q,
    |T(Q)|          number of sequences of type Q,

which reduces the ``L**n`` index vectors to ``C(n + L - 1, L - 1)`` types.

For a threshold ``t_l`` with reconstructions held fixed, the MSE derivative
is ``-2 n B_1(t_l)`` with

    B_1(t) = sum over (n-1)-types Q' of |T(Q')| (b - a)
             * integral f(s, t) P^{n-1}(Q' | s) ((a + b) / 2 - s) ds,

where ``a`` and ``b`` are the reconstructions of the n-types obtained by
adding symbol ``l`` (cell below ``t``) or ``l + 1`` to ``Q'``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .csvio import write_csv
from .exceptions import NumericalError
from .lloyd import STOP_MSE_DELTA, STOP_STALLED, IterationTrace, _first_sign_change, lloyd_indirect
from .model import JointModel
from .quantizer import X_DOMAIN, Quantizer, centroids_for

#: Beyond this many observations sequence probabilities are formed in log space.
LOG_SPACE_N = 20


@dataclass(frozen=True)
class TypeVector:
    """Symbol counts ``(n_1, ..., n_L)`` of an index vector."""

    counts: tuple

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError("type counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def L(self) -> int:
        return len(self.counts)

    @property
    def class_size(self) -> int:
        """Number of index vectors with these counts (multinomial coefficient)."""
        out, left = 1, self.n
        for c in self.counts:
            out *= math.comb(left, c)
            left -= c
        return out

    @property
    def log_class_size(self) -> float:
        return math.lgamma(self.n + 1) - sum(math.lgamma(c + 1) for c in self.counts)


def _compositions(n: int, L: int):
    if L == 1:
        yield (n,)
        return
    for first in range(n + 1):
        for rest in _compositions(n - first, L - 1):
            yield (first, *rest)


def enumerate_types(n: int, L: int) -> list:
    """All types of length-``n`` sequences over ``L`` symbols, lexicographic order."""
    if n < 0 or L < 1:
        raise ValueError("need n >= 0 and L >= 1")
    return [TypeVector(c) for c in _compositions(n, L)]


@dataclass(frozen=True)
class TypeTable:
    """Array view of :func:`enumerate_types` with an index lookup."""

    n: int
    L: int
    counts: np.ndarray
    class_size: np.ndarray
    index: dict

    def __len__(self) -> int:
        return self.counts.shape[0]

    def lookup(self, counts) -> int:
        return self.index[tuple(int(c) for c in counts)]

    @property
    def log_class_size(self) -> np.ndarray:
        from scipy.special import gammaln

        return gammaln(self.n + 1) - gammaln(self.counts + 1).sum(axis=1)


@lru_cache(maxsize=64)
def type_table(n: int, L: int) -> TypeTable:
    types = enumerate_types(n, L)
    counts = np.array([t.counts for t in types], dtype=np.int64).reshape(len(types), L)
    counts.setflags(write=False)
    if n <= LOG_SPACE_N:
        sizes = np.array([float(t.class_size) for t in types])
    else:
        sizes = np.exp([t.log_class_size for t in types])
    sizes.setflags(write=False)
    return TypeTable(n, L, counts, sizes, {t.counts: k for k, t in enumerate(types)})


@lru_cache(maxsize=64)
def _successors(n: int, L: int) -> np.ndarray:
    """``out[l, j]``: n-type index of (n-1)-type ``j`` plus one symbol ``l``."""
    low, high = type_table(n - 1, L), type_table(n, L)
    out = np.empty((L, len(low)), dtype=np.int64)
    for j, c in enumerate(low.counts):
        for sym in range(L):
            up = c.copy()
            up[sym] += 1
            out[sym, j] = high.lookup(up)
    out.setflags(write=False)
    return out


# --------------------------------------------------------------------------
# channel and posteriors


@dataclass(frozen=True)
class SymbolChannel:
    """``probs[i, l] = P(X in cell l | S = s_i)`` for one set of thresholds."""

    thresholds: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_thresholds(cls, model: JointModel, thresholds) -> "SymbolChannel":
        t = np.asarray(thresholds, dtype=float).ravel()
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        return cls(t, _cell_probs(model, t))

    @property
    def L(self) -> int:
        return self.probs.shape[1]


def _normalized_cumulative(model: JointModel, x) -> np.ndarray:
    r = model.s_prior
    safe = np.where(r > 0, r, 1.0)
    return np.clip(model.row_cumulative(x) / safe[:, None], 0.0, 1.0)


def _cell_probs(model: JointModel, t: np.ndarray) -> np.ndarray:
    C = _normalized_cumulative(model, t)
    edges = np.concatenate([np.zeros((C.shape[0], 1)), C, np.ones((C.shape[0], 1))], axis=1)
    return np.maximum(np.diff(edges, axis=1), 0.0)


def sequence_probs(probs: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """``P^n(Q | s_i)`` for every s node and every type row of ``counts``."""
    counts = np.asarray(counts)
    n = int(counts[0].sum()) if len(counts) else 0
    if n > LOG_SPACE_N:
        with np.errstate(divide="ignore"):
            logp = np.log(probs)
        acc = np.zeros((probs.shape[0], counts.shape[0]))
        for sym in range(counts.shape[1]):
            c = counts[:, sym]
            acc += np.where(c[None, :] > 0, c[None, :] * logp[:, sym : sym + 1], 0.0)
        return np.exp(acc)
    return _rest_products(_power_table(probs, n), counts, ())


def _prior_weights(model: JointModel) -> np.ndarray:
    """Trapezoid weight times prior density at each s node."""
    return model.s_weights * model.s_prior


def _posteriors(model: JointModel, LP: np.ndarray):
    wr = _prior_weights(model)
    s = model.s_points
    p = wr @ LP
    m1 = (wr * s) @ LP
    safe = np.where(p > 0, p, 1.0)
    shat = np.where(p > 0, m1 / safe, model.mean)
    return p, shat


def type_posterior(model: JointModel, channel: SymbolChannel, Q):
    """Per-sequence probability of type ``Q`` and the MMSE estimate given it.

    The class size is not included in the probability; multiply by
    ``Q.class_size`` for the probability of observing the type.
    """
    counts = np.asarray(Q.counts if isinstance(Q, TypeVector) else Q)[None, :]
    if counts.shape[1] != channel.L:
        raise ValueError(f"type has {counts.shape[1]} symbols, channel has {channel.L}")
    p, shat = _posteriors(model, sequence_probs(channel.probs, counts))
    return float(p[0]), float(shat[0])


def type_posteriors(model: JointModel, channel: SymbolChannel, n: int):
    """Per-sequence probabilities and estimates of every type, table order."""
    table = type_table(n, channel.L)
    return _posteriors(model, sequence_probs(channel.probs, table.counts))


def _mse_from(model: JointModel, LP: np.ndarray, shat: np.ndarray, sizes: np.ndarray) -> float:
    wr = _prior_weights(model)
    s = model.s_points
    per_type = (wr[:, None] * (s[:, None] - shat[None, :]) ** 2 * LP).sum(axis=0)
    return float(per_type @ sizes)


# --------------------------------------------------------------------------
# design object


@dataclass
class VectorQuantizerDesign:
    """Shared thresholds plus one reconstruction per type.

    ``recon[k]`` and ``prob_sequence[k]`` follow the row order of
    ``type_table(n, T + 1)``.
    """

    thresholds: np.ndarray
    n: int
    recon: np.ndarray
    prob_sequence: np.ndarray

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=float).ravel()
        if np.any(np.diff(self.thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        self.recon = np.asarray(self.recon, dtype=float)
        self.prob_sequence = np.asarray(self.prob_sequence, dtype=float)
        if self.recon.size != len(self.table):
            raise ValueError(f"need {len(self.table)} reconstructions, got {self.recon.size}")

    @property
    def L(self) -> int:
        return self.thresholds.size + 1

    @property
    def table(self) -> TypeTable:
        return type_table(self.n, self.L)

    @property
    def recon_by_type(self) -> dict:
        return {TypeVector(tuple(c)): float(r) for c, r in zip(self.table.counts, self.recon)}

    @property
    def prob_type(self) -> np.ndarray:
        return self.prob_sequence * self.table.class_size

    def types_of(self, X) -> np.ndarray:
        """Type counts of each row of an ``(m, n)`` observation matrix."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n:
            raise ValueError(f"expected {self.n} observations per row, got {X.shape[1]}")
        idx = np.searchsorted(self.thresholds, X, side="right")
        return np.stack([(idx == sym).sum(axis=1) for sym in range(self.L)], axis=1)

    def estimate(self, X) -> np.ndarray:
        """Reconstruction of S for each row of observations."""
        table = self.table
        return np.array([self.recon[table.lookup(c)] for c in self.types_of(X)])

    def scalar_quantizer(self, model: JointModel) -> Quantizer:
        """The shared quantizer with single-observation centroids."""
        return Quantizer(self.thresholds, centroids_for(model, self.thresholds), X_DOMAIN)

    def type_table_rows(self):
        table = self.table
        for c, size, p, pt, r in zip(table.counts, table.class_size, self.prob_sequence,
                                     self.prob_type, self.recon):
            yield (*c, size, p, pt, r)

    def type_table_columns(self):
        return [*(f"n_{k + 1}" for k in range(self.L)), "class_size", "prob_sequence",
                "prob_type", "s_hat"]

    def to_type_table_csv(self, path):
        return write_csv(path, self.type_table_columns(), self.type_table_rows())


def design_from_thresholds(model: JointModel, thresholds, n: int) -> VectorQuantizerDesign:
    """Thresholds with their optimal per-type reconstructions."""
    channel = SymbolChannel.from_thresholds(model, thresholds)
    p, shat = type_posteriors(model, channel, n)
    return VectorQuantizerDesign(channel.thresholds, n, shat, p)


def evaluate_vector_mse(model: JointModel, design: VectorQuantizerDesign) -> float:
    """E[(S - S_hat(q(X_1), ..., q(X_n)))^2] of a design."""
    channel = SymbolChannel.from_thresholds(model, design.thresholds)
    table = design.table
    LP = sequence_probs(channel.probs, table.counts)
    return _mse_from(model, LP, design.recon, table.class_size)


# --------------------------------------------------------------------------
# per-threshold slices


def _power_table(probs: np.ndarray, deg: int) -> np.ndarray:
    """``out[i, l, e] = probs[i, l] ** e`` for ``e = 0..deg``."""
    return probs[:, :, None] ** np.arange(deg + 1)


def _rest_products(pw, counts, skip) -> np.ndarray:
    out = np.ones((pw.shape[0], counts.shape[0]))
    for sym in range(counts.shape[1]):
        if sym not in skip:
            out *= pw[:, sym, counts[:, sym]]
    return out


class _ThresholdSlice:
    """MSE and B_1 as functions of one threshold, all else held fixed.

    Moving ``t_k`` changes only the probabilities ``x = P(cell k | s)`` and
    ``y = P(cell k + 1 | s)``. Grouping types by the exponents of ``x`` and
    ``y`` turns both functions into small polynomial forms in ``(x, y)``.
    """

    def __init__(self, model: JointModel, probs, thresholds, recon, n: int, k: int, rest=None):
        self.model = model
        self.n = n
        L = probs.shape[1]
        T = L - 1
        self.k = k
        self._recon = recon
        ones = np.ones(model.s_points.size)
        self.c_lo = _normalized_cumulative(model, [thresholds[k - 1]])[:, 0] if k > 0 else 0 * ones
        self.c_hi = _normalized_cumulative(model, [thresholds[k + 1]])[:, 0] if k + 1 < T else ones
        s = model.s_points
        skip = (k, k + 1)

        low = type_table(n - 1, L)
        succ = _successors(n, L)
        a, b = recon[succ[k]], recon[succ[k + 1]]
        c = low.class_size * (b - a)
        mid = 0.5 * (a + b)
        self._pw = _power_table(probs, n)
        self._skip = skip
        group = low.counts[:, k] * n + low.counts[:, k + 1]
        if rest is None:
            rest = _rest_products(self._pw, low.counts, skip)
        G_mid = rest @ _scatter(group, c * mid, n * n)
        G_one = rest @ _scatter(group, c, n * n)
        self.H = (G_mid - s[:, None] * G_one).reshape(-1, n, n)
        self.w = model.s_weights
        self._E = None

    @property
    def E(self):
        """MSE coefficients, grouped like ``H`` but over n-types."""
        if self._E is None:
            n, k = self.n, self.k
            high = type_table(n, self._pw.shape[1])
            m = n + 1
            group = high.counts[:, k] * m + high.counts[:, k + 1]
            rest = _rest_products(self._pw, high.counts, self._skip)
            sz, r, s = high.class_size, self._recon, self.model.s_points
            A = [rest @ _scatter(group, sz * r**p, m * m) for p in range(3)]
            wr = _prior_weights(self.model)
            E = wr[:, None] * (s[:, None] ** 2 * A[0] - 2 * s[:, None] * A[1] + A[2])
            self._E = E.reshape(-1, m, m)
        return self._E

    def _xy(self, t):
        C = _normalized_cumulative(self.model, t)
        x = np.maximum(C - self.c_lo[:, None], 0.0)
        y = np.maximum(self.c_hi[:, None] - C, 0.0)
        return x, y

    @staticmethod
    def _powers(v, deg):
        return v[..., None] ** np.arange(deg)

    def b1(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x, y = self._xy(t)
        face = self.w[:, None] * self.model.density_at(t)
        vals = np.einsum("ita,iab,itb,it->t", self._powers(x, self.n), self.H,
                         self._powers(y, self.n), face)
        return vals

    def mse(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x, y = self._xy(t)
        m = self.n + 1
        return np.einsum("ita,iab,itb->t", self._powers(x, m), self.E, self._powers(y, m))

    def descent_fun(self):
        """Callable with the sign of dMSE/dt."""

        def fun(t):
            out = -self.b1(t)
            return out if np.ndim(t) else float(out[0])

        return fun


def _scatter(group, values, size) -> np.ndarray:
    out = np.zeros((group.size, size))
    out[np.arange(group.size), group] = values
    return out


def _descent_step(fun, prev, lo, hi, nodes):
    """First root of ``fun`` (the MSE slope) met walking downhill from ``prev``."""
    f0 = fun(prev)
    if f0 == 0.0:
        return prev, False
    nodes = nodes[(nodes > lo) & (nodes < hi)]
    path = nodes[nodes < prev][::-1] if f0 > 0 else nodes[nodes > prev]
    root = _first_sign_change(fun, prev, path)
    if root is None:
        return (float(path[-1]) if path.size else prev), True
    return root, False


def boundary_b1(model: JointModel, design: VectorQuantizerDesign, ell: int) -> float:
    """``B_1(t_ell)`` (1-based ``ell``) of a design; zero at a stationary threshold."""
    T = design.thresholds.size
    if not 1 <= ell <= T:
        raise ValueError(f"threshold index {ell} outside 1..{T}")
    channel = SymbolChannel.from_thresholds(model, design.thresholds)
    sl = _ThresholdSlice(model, channel.probs, design.thresholds, design.recon, design.n, ell - 1)
    return float(sl.b1(design.thresholds[ell - 1])[0])


# --------------------------------------------------------------------------
# iterative design


def design_vector_iterative(model: JointModel, n: int, T: int, init="quantile",
                            eps: float = 1e-10, max_iter: int = 500, *,
                            xtol: float | None = 1e-8, seed=None):
    """Alternating design of shared thresholds and per-type reconstructions.

    The thresholds start from the scalar design of :func:`lloyd_indirect`
    (with the same ``init``, ``eps``, ``max_iter`` and ``seed``). Each
    iteration recomputes every type reconstruction, then walks each
    threshold in turn downhill to the nearest root of ``B_1`` inside its
    bracket. Stopping follows :func:`lloyd_indirect`.

    Returns
    -------
    design : VectorQuantizerDesign
    trace : IterationTrace
        ``recon`` entries hold the per-type reconstructions.
    """
    if not isinstance(model, JointModel):
        raise TypeError("the vector designer needs a JointModel with a conditional kernel")
    if n < 1:
        raise ValueError("need at least one observation")
    q0, _ = lloyd_indirect(model, T, init, eps, max_iter, xtol=xtol, seed=seed)
    t = q0.thresholds.copy()
    L = T + 1
    table = type_table(n, L)
    xp = model.x_points
    lo_end, hi_end = float(xp[0]), float(xp[-1])

    probs = _cell_probs(model, t)
    LP = sequence_probs(probs, table.counts)
    _, recon = _posteriors(model, LP)
    mse = _mse_from(model, LP, recon, table.class_size)
    trace = IterationTrace()
    trace.record(t, recon, mse)
    low = type_table(n - 1, L)
    for _ in range(max_iter):
        old = t.copy()
        any_stall = False
        # products over symbols right of the moving pair use columns that
        # this sweep has not touched yet; those on the left are accumulated
        # as the sweep advances
        pw = _power_table(probs, n - 1)
        suffix = [None] * (L + 1)
        suffix[L] = np.ones((probs.shape[0], len(low)))
        for sym in range(L - 1, 1, -1):
            suffix[sym] = suffix[sym + 1] * pw[:, sym, low.counts[:, sym]]
        prefix = np.ones_like(suffix[L])
        for k in range(T):
            lo = t[k - 1] if k > 0 else lo_end
            hi = t[k + 1] if k + 1 < T else hi_end
            sl = _ThresholdSlice(model, probs, t, recon, n, k, rest=prefix * suffix[k + 2])
            prev = t[k]
            cand, stalled = _descent_step(sl.descent_fun(), prev, lo, hi, xp)
            any_stall |= stalled
            if cand != prev:
                t[k] = cand
                probs = _cell_probs(model, t)
            prefix = prefix * probs[:, k : k + 1] ** low.counts[None, :, k]
        LP = sequence_probs(probs, table.counts)
        _, recon = _posteriors(model, LP)
        mse_new = _mse_from(model, LP, recon, table.class_size)
        if not np.isfinite(mse_new):
            raise NumericalError(f"non-finite MSE after {trace.iteration_count} iterations")
        trace.record(t, recon, mse_new, any_stall)
        delta, mse = mse - mse_new, mse_new
        move = float(np.max(np.abs(t - old)))
        if delta <= eps and (xtol is None or move <= xtol):
            trace.converged = not any_stall
            trace.stop_reason = STOP_STALLED if any_stall else STOP_MSE_DELTA
            break
    p, recon = _posteriors(model, sequence_probs(probs, table.counts))
    return VectorQuantizerDesign(t, n, recon, p), trace
