"""Config-driven experiment runner and designer comparison.

A config is an INI file with three sections::

    [experiment]
    name = fig9
    designers = iterative, dp-indirect-threshold, naive-two-step
    T = 1, 2, 3
    n = 1, 2            ; vector designer only

    [model]
    kind = gaussian-mixture   ; gaussian-direct | uniform-direct | density-file
    mu1 = -5

    [designer]
    grid_size = 401
    grid_lo = -15
    grid_hi = 15
    eps = 1e-10

Every output file starts with a version line and carries no timing
information, so identical configs give byte-identical outputs.
"""

from __future__ import annotations

import configparser
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .csvio import write_csv
from .dp import (
    brute_force,
    dp_direct,
    dp_indirect_rate,
    dp_indirect_threshold,
    naive_two_step,
)
from .exceptions import ConfigError
from .lloyd import INIT_POLICIES, IterationTrace, lloyd_indirect
from .model import (
    DirectModel,
    Grid1D,
    JointModel,
    ScalarModel,
    build_gaussian_direct,
    build_mixture_model,
    build_uniform_direct,
    load_density_file,
    transform_to_u,
)
from .quantizer import X_DOMAIN, CellMap, Quantizer
from .vector import VectorQuantizerDesign, design_vector_iterative

SCALAR_DESIGNERS = {
    "iterative": "mse_iterative",
    "dp-direct": "mse_dp_direct",
    "dp-indirect-threshold": "mse_dp_threshold",
    "dp-indirect-rate": "mse_dp_rate",
    "naive-two-step": "mse_naive",
    "brute-force": "mse_brute_force",
}
VECTOR_DESIGNERS = {"vector-iterative": "mse_vector_iterative"}
DESIGNERS = (*SCALAR_DESIGNERS, *VECTOR_DESIGNERS)
MODEL_KINDS = ("gaussian-direct", "uniform-direct", "gaussian-mixture", "density-file")
PRESETS = ("fig6", "fig7", "fig8", "fig9", "fig10")

_MODEL_KEYS = {
    "gaussian-direct": {"sigma": float, "mean": float, "num": int},
    "uniform-direct": {"low": float, "high": float, "num": int},
    "gaussian-mixture": {"mu1": float, "mu2": float, "s_low": float, "s_high": float,
                         "s_num": int, "x_num": int},
    "density-file": {"path": str},
}


# --------------------------------------------------------------------------
# config


@dataclass
class ModelSpec:
    kind: str
    params: dict = field(default_factory=dict)
    base_dir: Path | None = None


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    name: str
    model: ModelSpec
    designers: tuple
    T: tuple
    n: tuple = ()
    grid_size: int = 401
    grid_lo: float | None = None
    grid_hi: float | None = None
    eps: float = 1e-10
    max_iter: int = 500
    xtol: float | None = 1e-8
    init: str = "quantile"
    seed: int = 0
    iterative_grid: bool = False
    traces: bool = False
    type_tables: bool = False
    records: bool = True

    def validate(self) -> "ExperimentConfig":
        if not self.name or any(c in self.name for c in "/\\ "):
            raise ConfigError(f"experiment.name: invalid name {self.name!r}")
        if self.model.kind not in MODEL_KINDS:
            raise ConfigError(f"model.kind: {self.model.kind!r} is not one of {MODEL_KINDS}")
        if not self.designers:
            raise ConfigError("experiment.designers: at least one designer is required")
        for d in self.designers:
            if d not in DESIGNERS:
                raise ConfigError(f"experiment.designers: unknown designer {d!r}")
        if not self.T:
            raise ConfigError("experiment.T: the list of threshold counts is empty")
        if any(t < 0 for t in self.T):
            raise ConfigError("experiment.T: threshold counts must be non-negative")
        if any(d in VECTOR_DESIGNERS for d in self.designers):
            if not self.n or any(k < 1 for k in self.n):
                raise ConfigError("experiment.n: vector designers need positive observation counts")
        if self.grid_size < max(self.T) + 2:
            raise ConfigError(
                f"designer.grid_size: {self.grid_size} points cannot hold T={max(self.T)} "
                "thresholds (need grid_size >= T + 2)"
            )
        if (self.grid_lo is None) != (self.grid_hi is None):
            raise ConfigError("designer.grid_lo/grid_hi: give both or neither")
        if self.grid_lo is not None and not self.grid_lo < self.grid_hi:
            raise ConfigError("designer.grid_lo: must be below grid_hi")
        if not self.eps >= 0:
            raise ConfigError("designer.eps: must be non-negative")
        if self.max_iter < 1:
            raise ConfigError("designer.max_iter: must be at least 1")
        if self.init not in INIT_POLICIES:
            raise ConfigError(f"designer.init: {self.init!r} is not one of {INIT_POLICIES}")
        return self


def _ints(text: str, key: str) -> tuple:
    try:
        return tuple(int(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"{key}: expected a list of integers, got {text!r}") from exc


def _get(section, key, conv, default=None, where=""):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        if conv is bool:
            return section.getboolean(key)
        if raw.lower() == "none":
            return None
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}.{key}: cannot parse {raw!r}") from exc


def parse_config(text: str, base_dir: Path | None = None) -> ExperimentConfig:
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for sec in ("experiment", "model"):
        if sec not in cp:
            raise ConfigError(f"missing [{sec}] section")
    exp, mod = cp["experiment"], cp["model"]
    des = cp["designer"] if "designer" in cp else {}

    kind = mod.get("kind", "").strip()
    if kind not in MODEL_KINDS:
        raise ConfigError(f"model.kind: {kind!r} is not one of {MODEL_KINDS}")
    params = {}
    for key in mod:
        if key == "kind":
            continue
        if key not in _MODEL_KEYS[kind]:
            raise ConfigError(f"model.{key}: not a parameter of {kind}")
        params[key] = _get(mod, key, _MODEL_KEYS[kind][key], where="model")

    known = {"name", "designers", "t", "n"}
    for key in exp:
        if key not in known:
            raise ConfigError(f"experiment.{key}: unknown key")
    if "designers" not in exp:
        raise ConfigError("experiment.designers: missing")
    if "t" not in exp:
        raise ConfigError("experiment.T: missing")

    fields = dict(
        name=exp.get("name", "experiment").strip(),
        model=ModelSpec(kind, params, base_dir),
        designers=tuple(d.strip() for d in exp["designers"].split(",") if d.strip()),
        T=_ints(exp["t"], "experiment.T"),
        n=_ints(exp.get("n", ""), "experiment.n"),
    )
    conv = {"grid_size": int, "grid_lo": float, "grid_hi": float, "eps": float,
            "max_iter": int, "xtol": float, "init": str, "seed": int,
            "iterative_grid": bool, "traces": bool, "type_tables": bool, "records": bool}
    for key in des:
        if key not in conv:
            raise ConfigError(f"designer.{key}: unknown key")
        fields[key] = _get(des, key, conv[key], where="designer")
    return ExperimentConfig(**fields).validate()


def load_config(ref) -> ExperimentConfig:
    """Load a preset by name or a config file by path."""
    ref = str(ref)
    if ref in PRESETS:
        text = resources.files("iquant.presets").joinpath(f"{ref}.ini").read_text()
        return parse_config(text)
    path = Path(ref)
    if not path.is_file():
        raise ConfigError(f"{ref!r} is neither a preset {PRESETS} nor a readable file")
    return parse_config(path.read_text(), path.parent)


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    """Copy of ``cfg`` with the non-None keyword values replaced."""
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None}).validate()


# --------------------------------------------------------------------------
# model and grid


def build_model(spec: ModelSpec) -> ScalarModel:
    p = dict(spec.params)
    if spec.kind == "gaussian-direct":
        if "sigma" not in p:
            raise ConfigError("model.sigma: required for gaussian-direct")
        return build_gaussian_direct(p["sigma"], mean=p.get("mean", 0.0), num=p.get("num", 4097))
    if spec.kind == "uniform-direct":
        return build_uniform_direct(**p)
    if spec.kind == "gaussian-mixture":
        return build_mixture_model(**p)
    path = Path(p.get("path", ""))
    if not path.is_absolute() and spec.base_dir is not None:
        path = spec.base_dir / path
    if not path.is_file():
        raise ConfigError(f"model.path: density file {str(path)!r} not found")
    return load_density_file(path)


def threshold_grid_for(model: ScalarModel, cfg: ExperimentConfig) -> Grid1D:
    """Candidate thresholds: the configured range, or the central 1 - 2e-6 of X."""
    if cfg.grid_lo is not None:
        lo, hi = cfg.grid_lo, cfg.grid_hi
    else:
        lo, hi = model.quantile(1e-6), model.quantile(1 - 1e-6)
    return Grid1D.linspace(lo, hi, cfg.grid_size)


# --------------------------------------------------------------------------
# designers


@dataclass
class DesignResult:
    designer: str
    T: int
    mse: float
    quantizer: Quantizer | None = None
    cells: CellMap | None = None
    trace: IterationTrace | None = None
    vector: VectorQuantizerDesign | None = None
    n: int = 1


def _trivial(model: ScalarModel, designer: str) -> DesignResult:
    q = Quantizer([], [model.mean], X_DOMAIN)
    return DesignResult(designer, 0, model.var, q, CellMap.from_quantizer(q))


def run_designer(model: ScalarModel, designer: str, T: int, cfg: ExperimentConfig,
                 grid: Grid1D | None = None, n: int = 1) -> DesignResult:
    """Run one designer at one T (and n for the vector designer)."""
    grid = grid if grid is not None else threshold_grid_for(model, cfg)
    if designer == "vector-iterative":
        if not isinstance(model, JointModel):
            raise ConfigError("vector-iterative needs a joint model (gaussian-mixture or density-file)")
        if T == 0:
            res = _trivial(model, designer)
            res.n = n
            return res
        design, trace = design_vector_iterative(model, n, T, cfg.init, cfg.eps, cfg.max_iter,
                                                xtol=cfg.xtol, seed=cfg.seed)
        return DesignResult(designer, T, trace.mse[-1], design.scalar_quantizer(model),
                            trace=trace, vector=design, n=n)
    if T == 0:
        return _trivial(model, designer)
    if designer == "iterative":
        q, trace = lloyd_indirect(model, T, cfg.init, cfg.eps, cfg.max_iter,
                                  grid=grid if cfg.iterative_grid else None,
                                  xtol=cfg.xtol, seed=cfg.seed)
        return DesignResult(designer, T, trace.mse[-1], q, CellMap.from_quantizer(q), trace)
    if designer == "dp-direct":
        if not isinstance(model, DirectModel):
            raise ConfigError("dp-direct needs a direct model (X = S)")
        q, mse = dp_direct(model, grid, T)
    elif designer == "dp-indirect-threshold":
        q, mse = dp_indirect_threshold(model, grid, T)
    elif designer == "naive-two-step":
        q, mse = naive_two_step(model, grid, T)
    elif designer == "dp-indirect-rate":
        q, cells, mse = dp_indirect_rate(transform_to_u(model, grid), T)
        return DesignResult(designer, T, mse, q, cells)
    elif designer == "brute-force":
        q, mse = brute_force(model, grid, T)
    else:
        raise ConfigError(f"unknown designer {designer!r}")
    return DesignResult(designer, T, mse, q, CellMap.from_quantizer(q))


# --------------------------------------------------------------------------
# running


@dataclass
class Check:
    T: int
    name: str
    lhs: float
    rhs: float
    ok: bool


@dataclass
class ResultBundle:
    config: ExperimentConfig
    model: ScalarModel
    grid: Grid1D
    scalar: dict
    vector: dict
    mmse_floor: float
    var_s: float
    checks: list = field(default_factory=list)
    files: list = field(default_factory=list)

    def mse_rows(self):
        designers = [d for d in self.config.designers if d in SCALAR_DESIGNERS]
        for T in self.config.T:
            yield (T, *(self.scalar[d, T].mse for d in designers), self.mmse_floor, self.var_s)

    def mse_columns(self):
        designers = [d for d in self.config.designers if d in SCALAR_DESIGNERS]
        return ["T", *(SCALAR_DESIGNERS[d] for d in designers), "mmse_floor", "var_s"]


def _tasks(cfg: ExperimentConfig):
    for d in cfg.designers:
        if d in SCALAR_DESIGNERS:
            for T in cfg.T:
                yield d, T, 1
        else:
            for T in cfg.T:
                for n in cfg.n:
                    yield d, T, n


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> ResultBundle:
    """Build the model, run every designer for every T (and n), write outputs.

    Independent designer runs may use a thread pool; results and files are
    always ordered as in the config.
    """
    cfg.validate()
    model = build_model(cfg.model)
    grid = threshold_grid_for(model, cfg)
    tasks = list(_tasks(cfg))

    def job(task):
        d, T, n = task
        return run_designer(model, d, T, cfg, grid, n)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, tasks))
    else:
        results = [job(t) for t in tasks]

    scalar, vector = {}, {}
    for (d, T, n), res in zip(tasks, results):
        if d in SCALAR_DESIGNERS:
            scalar[d, T] = res
        else:
            vector[n, T] = res
    bundle = ResultBundle(cfg, model, grid, scalar, vector, model.mmse_floor(), model.var)
    bundle.checks = compare_designers(bundle)
    if out_dir is not None:
        bundle.files = write_outputs(bundle, out_dir)
    return bundle


def compare_designers(bundle: ResultBundle, slack: float = 1e-12) -> list:
    """Dominance checks between designers, one row per (T, relation).

    Relations: ``mmse_floor <= mse`` for every design, ``dp <= iterative``
    and ``dp <= naive`` for the threshold-constrained optimum, ``rate <=
    dp`` for the rate-constrained optimum, ``iterative`` thresholds within
    one grid step of ``dp-direct`` for direct models, and the scalar and
    vector designers agreeing at n = 1.
    """
    cfg, checks = bundle.config, []
    floor = bundle.mmse_floor
    step = float(np.max(bundle.grid.spacing))
    for T in cfg.T:
        got = {d: bundle.scalar[d, T] for d in cfg.designers if (d, T) in bundle.scalar}
        for d, r in got.items():
            checks.append(Check(T, f"floor<={d}", floor, r.mse, floor <= r.mse + slack))
        dp = got.get("dp-indirect-threshold") or got.get("dp-direct")
        if dp is not None:
            # a continuous iterative design may land between grid points and
            # beat the grid optimum, so it is only compared in grid mode
            others = ("iterative", "naive-two-step", "brute-force") if cfg.iterative_grid \
                else ("naive-two-step", "brute-force")
            for other in others:
                if other in got:
                    checks.append(Check(T, f"{dp.designer}<={other}", dp.mse, got[other].mse,
                                        dp.mse <= got[other].mse + slack))
            if "dp-indirect-rate" in got:
                r = got["dp-indirect-rate"]
                checks.append(Check(T, f"dp-indirect-rate<={dp.designer}", r.mse, dp.mse,
                                    r.mse <= dp.mse + slack))
        if "dp-direct" in got and "iterative" in got and T > 0:
            gap = float(np.max(np.abs(got["dp-direct"].quantizer.thresholds
                                      - got["iterative"].quantizer.thresholds)))
            checks.append(Check(T, "iterative~dp-direct", gap, step, gap <= step))
        if "iterative" in got and (1, T) in bundle.vector and not cfg.iterative_grid:
            v = bundle.vector[1, T].mse
            s = got["iterative"].mse
            checks.append(Check(T, "vector(n=1)==iterative", v, s, abs(v - s) <= 1e-10))
    ns = sorted(cfg.n)
    for T in cfg.T:
        for a, b in zip(ns, ns[1:]):
            if (a, T) in bundle.vector and (b, T) in bundle.vector:
                ma, mb = bundle.vector[a, T].mse, bundle.vector[b, T].mse
                checks.append(Check(T, f"vector n={b}<=n={a}", mb, ma, mb <= ma + 1e-9))
    return checks


def write_outputs(bundle: ResultBundle, out_dir) -> list:
    cfg = bundle.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = cfg.name
    files = []
    if bundle.scalar:
        files.append(write_csv(out / f"{name}_mse.csv", bundle.mse_columns(), bundle.mse_rows()))
        rows = []
        for d in cfg.designers:
            for T in cfg.T:
                res = bundle.scalar.get((d, T))
                if res is None:
                    continue
                q = res.quantizer
                rows += [(d, T, "threshold", k + 1, v) for k, v in enumerate(q.thresholds)]
                rows += [(d, T, "recon", k + 1, v) for k, v in enumerate(q.recon)]
                if cfg.records:
                    path = out / f"{name}_{d}_T{T}.quant"
                    path.write_text(q.to_record())
                    files.append(path)
                if cfg.traces and res.trace is not None:
                    files.append(res.trace.to_csv(out / f"{name}_trace_{d}_T{T}.csv"))
        files.append(write_csv(out / f"{name}_thresholds.csv",
                               ["designer", "T", "kind", "index", "value"], rows))
    if bundle.vector:
        rows = [(n, T, bundle.vector[n, T].mse) for T in cfg.T for n in cfg.n]
        files.append(write_csv(out / f"{name}_vector.csv", ["n", "T", "mse_vector_iterative"], rows))
        for (n, T), res in sorted(bundle.vector.items()):
            if cfg.traces and res.trace is not None:
                files.append(res.trace.to_csv(out / f"{name}_trace_vector_n{n}_T{T}.csv"))
            if cfg.type_tables and res.vector is not None:
                files.append(res.vector.to_type_table_csv(out / f"{name}_types_n{n}_T{T}.csv"))
    files.append(write_csv(out / f"{name}_checks.csv", ["T", "check", "lhs", "rhs", "pass"],
                           [(c.T, c.name, c.lhs, c.rhs, "yes" if c.ok else "no")
                            for c in bundle.checks]))
    return files


def summary_lines(bundle: ResultBundle):
    """Human-readable table of the results."""
    cols = bundle.mse_columns()
    if bundle.scalar:
        yield "  ".join(f"{c:>18}" for c in cols)
        for row in bundle.mse_rows():
            yield "  ".join(f"{v:>18d}" if isinstance(v, int) else f"{v:>18.10g}" for v in row)
    if bundle.vector:
        yield f"{'n':>4} {'T':>4} {'mse_vector_iterative':>22}"
        for T in bundle.config.T:
            for n in bundle.config.n:
                yield f"{n:>4} {T:>4} {bundle.vector[n, T].mse:>22.10g}"
    bad = [c for c in bundle.checks if not c.ok]
    yield f"checks: {len(bundle.checks) - len(bad)}/{len(bundle.checks)} passed"
    for c in bad:
        yield f"  FAILED T={c.T} {c.name}: {c.lhs!r} vs {c.rhs!r}"


def is_finite_result(bundle: ResultBundle) -> bool:
    vals = [r.mse for r in bundle.scalar.values()] + [r.mse for r in bundle.vector.values()]
    return all(math.isfinite(v) for v in vals)
