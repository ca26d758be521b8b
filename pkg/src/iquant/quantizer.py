"""Quantizer data model, MSE evaluation and optimality-condition checkers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import PROB_FLOOR, ScalarModel, TransformedModel, cell_stats, partial_mse_from_moments

RECORD_VERSION = 1
X_DOMAIN = "x"
U_DOMAIN = "u"


@dataclass(frozen=True)
class Quantizer:
    """Contiguous-cell scalar quantizer.

    Cell ``l`` is ``[t_{l-1}, t_l)`` with ``t_0 = -inf`` and ``t_L = +inf``;
    ``recon[l]`` is the reconstruction of S for that cell. ``domain`` says
    whether the thresholds live on the observation axis X or on U = g(X).
    """

    thresholds: np.ndarray
    recon: np.ndarray
    domain: str = X_DOMAIN

    def __post_init__(self):
        t = np.array(self.thresholds, dtype=float).ravel()
        r = np.array(self.recon, dtype=float).ravel()
        if np.any(np.diff(t) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if r.size != t.size + 1:
            raise ValueError(f"need {t.size + 1} reconstruction values, got {r.size}")
        if self.domain not in (X_DOMAIN, U_DOMAIN):
            raise ValueError(f"unknown domain {self.domain!r}")
        t.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "recon", r)

    @property
    def n_thresholds(self) -> int:
        return self.thresholds.size

    @property
    def n_levels(self) -> int:
        return self.recon.size

    @property
    def edges(self) -> np.ndarray:
        return np.concatenate([[-np.inf], self.thresholds, [np.inf]])

    def encode(self, x) -> np.ndarray:
        """Cell index (0-based) of each value; cells are closed on the left."""
        return np.searchsorted(self.thresholds, np.asarray(x, dtype=float), side="right")

    def decode(self, index) -> np.ndarray:
        return self.recon[np.asarray(index)]

    # -- serialization -----------------------------------------------------

    def to_record(self) -> str:
        fmt = lambda arr: " ".join(format(float(v), ".17g") for v in arr)  # noqa: E731
        return (
            f"version {RECORD_VERSION}\n"
            f"domain_tag {self.domain}\n"
            f"thresholds {fmt(self.thresholds)}\n"
            f"recon {fmt(self.recon)}\n"
        )

    @classmethod
    def from_record(cls, text: str) -> "Quantizer":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, rest = line.partition(" ")
            fields[key] = rest.split()
        try:
            version = int(fields["version"][0])
            domain = fields["domain_tag"][0]
            thresholds = [float(v) for v in fields["thresholds"]]
            recon = [float(v) for v in fields["recon"]]
        except (KeyError, IndexError, ValueError) as exc:
            raise ValueError(f"malformed quantizer record: {exc}") from exc
        if version != RECORD_VERSION:
            raise ValueError(f"unsupported record version {version}")
        return cls(thresholds, recon, domain)


@dataclass(frozen=True)
class CellMap:
    """Output index -> ordered, disjoint X intervals (possibly several)."""

    intervals: tuple
    recon: np.ndarray

    def __post_init__(self):
        cells = tuple(tuple((float(a), float(b)) for a, b in cell) for cell in self.intervals)
        flat = sorted(iv for cell in cells for iv in cell)
        for (a0, b0), (a1, b1) in zip(flat, flat[1:]):
            if a1 < b0:
                raise ValueError("cell intervals overlap")
        if any(a >= b for a, b in flat):
            raise ValueError("empty or reversed interval in cell map")
        r = np.array(self.recon, dtype=float).ravel()
        if r.size != len(cells):
            raise ValueError("one reconstruction value per output index is required")
        object.__setattr__(self, "intervals", cells)
        object.__setattr__(self, "recon", r)

    @property
    def n_levels(self) -> int:
        return len(self.intervals)

    def encode(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -1, dtype=int)
        for idx, cell in enumerate(self.intervals):
            for lo, hi in cell:
                out[(x >= lo) & (x < hi)] = idx
        return out

    @classmethod
    def from_quantizer(cls, q: Quantizer) -> "CellMap":
        if q.domain != X_DOMAIN:
            raise ValueError("only X-domain quantizers map directly to X intervals")
        e = q.edges
        return cls(tuple(((e[i], e[i + 1]),) for i in range(q.n_levels)), q.recon)


def _cell_moments(model: ScalarModel, edges):
    P, M1, M2 = model.moments_at(np.asarray(edges, dtype=float))
    return np.diff(P), np.diff(M1), np.diff(M2)


def evaluate_mse(model: ScalarModel, q) -> float:
    """E[(S - S_hat)^2] of a quantizer (X-domain) or a cell map."""
    if isinstance(q, Quantizer):
        if q.domain != X_DOMAIN:
            raise ValueError("U-domain quantizers must be evaluated through their CellMap")
        dp, dm1, dm2 = _cell_moments(model, q.edges)
    elif isinstance(q, CellMap):
        rows = []
        for cell in q.intervals:
            lo = np.array([a for a, _ in cell])
            hi = np.array([b for _, b in cell])
            Plo, M1lo, M2lo = model.moments_at(lo)
            Phi, M1hi, M2hi = model.moments_at(hi)
            rows.append(((Phi - Plo).sum(), (M1hi - M1lo).sum(), (M2hi - M2lo).sum()))
        dp, dm1, dm2 = (np.array(c) for c in zip(*rows))
    else:
        raise TypeError(f"cannot evaluate {type(q).__name__}")
    prob, mean, var = cell_stats(dp, dm1, dm2)
    r = q.recon
    empty = np.isnan(mean)
    per_cell = np.where(
        empty,
        dm2 - 2 * r * dm1 + r * r * dp,
        prob * var + prob * (np.where(empty, 0.0, mean) - r) ** 2,
    )
    return float(np.sum(per_cell))


def centroids_for(model: ScalarModel, thresholds) -> np.ndarray:
    """Reconstruction values E[S | X in cell] for contiguous cells."""
    t = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    edges = np.concatenate([[-np.inf], t, [np.inf]])
    _, mean, _ = cell_stats(*_cell_moments(model, edges))
    for k in np.flatnonzero(np.isnan(mean)):
        mean[k] = model.empty_cell_value(edges[k], edges[k + 1])
    return mean


def partial_mse(model: ScalarModel, lo: float, hi: float) -> float:
    """Contribution Pr(X in [lo, hi]) Var(S | X in [lo, hi]) of one cell."""
    if not lo < hi:
        raise ValueError(f"reversed or empty interval [{lo}, {hi}]")
    return float(partial_mse_from_moments(*_cell_moments(model, [lo, hi]))[0])


def threshold_objective(model: ScalarModel, t, left: float, right: float):
    """MSE terms that depend on a single threshold with fixed reconstructions.

    With cells below/above ``t`` reconstructed as ``left``/``right``, the MSE
    equals this function of ``t`` plus a constant.
    """
    P, M1, M2 = model.moments_at(t)
    return (left * left - right * right) * P - 2 * (left - right) * M1


def boundary_derivative(model: ScalarModel, q: Quantizer) -> np.ndarray:
    """Partial derivatives of the MSE with respect to each threshold."""
    t = q.thresholds
    a, b = q.recon[:-1], q.recon[1:]
    h0 = model.fx(t)
    return h0 * (b - a) * (2 * model.g(t) - a - b)


def check_boundary_condition(model: ScalarModel, q: Quantizer) -> np.ndarray:
    """Residuals g(t_l) - (s_l + s_{l+1}) / 2 for every threshold."""
    if q.domain != X_DOMAIN:
        raise ValueError("boundary condition applies to X-domain quantizers")
    t = q.thresholds
    return model.g(t) - 0.5 * (q.recon[:-1] + q.recon[1:])


def check_vq_conditions(points, weights, labels, recon, *, tol: float = 1e-9):
    """Nearest-neighbour and centroid conditions of a rate-constrained quantizer.

    ``points`` are regression values g(x) of the atoms (shape (N,) or (N, k)),
    ``weights`` their probabilities, ``labels`` the output index of each atom
    and ``recon`` the reconstruction vectors. Returns ``(cells_ok,
    centroid_residual)`` where ``cells_ok`` says every atom is within ``tol``
    of its nearest reconstruction and ``centroid_residual`` is the largest
    distance between a reconstruction and the weighted mean of its atoms.
    Equidistant atoms count as satisfied.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    rec = np.asarray(recon, dtype=float)
    if rec.ndim == 1:
        rec = rec[:, None]
    w = np.asarray(weights, dtype=float)
    lab = np.asarray(labels)
    d2 = ((pts[:, None, :] - rec[None, :, :]) ** 2).sum(axis=-1)
    own = d2[np.arange(len(pts)), lab]
    active = w > PROB_FLOOR
    scale = max(1.0, float(np.abs(pts).max()))
    cells_ok = bool(np.all(own[active] <= d2[active].min(axis=1) + tol * scale))
    resid = 0.0
    for idx in range(len(rec)):
        mask = (lab == idx) & active
        if w[mask].sum() > PROB_FLOOR:
            centroid = (w[mask, None] * pts[mask]).sum(axis=0) / w[mask].sum()
            resid = max(resid, float(np.linalg.norm(centroid - rec[idx])))
    return cells_ok, resid


def check_fine_cells(tmodel: TransformedModel, q: Quantizer, *, tol: float = 1e-9) -> bool:
    """Whether a U-domain quantizer satisfies the midpoint cell rule on g."""
    if q.domain != U_DOMAIN:
        raise ValueError("cell condition is checked on U-domain quantizers")
    labels = q.encode(tmodel.u_values)
    ok, _ = check_vq_conditions(tmodel.u_values, tmodel.prob, labels, q.recon, tol=tol)
    return ok
