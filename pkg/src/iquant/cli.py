"""Command line interface: ``iquant design | experiment | check | oracle``.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .exceptions import BudgetExceededError, ConfigError, DegenerateModelError, NumericalError, TruncationError
from .experiments import (
    DESIGNERS,
    build_model,
    is_finite_result,
    load_config,
    run_designer,
    run_experiment,
    summary_lines,
    threshold_grid_for,
    with_overrides,
)
from .dp import brute_force
from .model import transform_to_u
from .quantizer import (
    U_DOMAIN,
    Quantizer,
    centroids_for,
    check_boundary_condition,
    check_fine_cells,
    evaluate_mse,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--grid", metavar="M", type=int, help="number of candidate thresholds")
    p.add_argument("--eps", type=float, help="stop once an iteration gains no more than this")
    p.add_argument("--max-iter", type=int, help="iteration cap")
    p.add_argument("--seed", type=int, help="seed of the random init policy")
    p.add_argument("--threads", type=int, default=1, help="worker threads for independent runs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="run one designer and print its quantizer record")
    p.add_argument("config", help="preset name or config path (model and grid settings)")
    p.add_argument("--designer", choices=DESIGNERS, default="iterative")
    p.add_argument("-T", "--thresholds", type=int, default=None,
                   help="number of thresholds (default: first T of the config)")
    p.add_argument("-n", "--observations", type=int, default=None,
                   help="observations per estimate (vector designer)")
    _common(p)

    p = sub.add_parser("experiment", help="run a preset or config and write CSV outputs")
    p.add_argument("config", help="preset name (fig6..fig10) or config path")
    _common(p)

    p = sub.add_parser("check", help="verify optimality conditions of a quantizer record")
    p.add_argument("record", help="quantizer record file")
    p.add_argument("config", help="preset name or config path describing the model")
    p.add_argument("--tol", type=float, default=1e-6, help="tolerance on condition residuals")
    _common(p)

    p = sub.add_parser("oracle", help="brute-force reference design on a small grid")
    p.add_argument("config", help="preset name or config path")
    p.add_argument("-T", "--thresholds", type=int, default=None)
    _common(p)
    return parser


def _config(args):
    cfg = load_config(args.config)
    return with_overrides(cfg, grid_size=args.grid, eps=args.eps, max_iter=args.max_iter,
                          seed=args.seed)


def _cmd_design(args) -> int:
    cfg = _config(args)
    model = build_model(cfg.model)
    T = cfg.T[0] if args.thresholds is None else args.thresholds
    n = args.observations or (cfg.n[0] if cfg.n else 1)
    res = run_designer(model, args.designer, T, cfg, threshold_grid_for(model, cfg), n)
    record = res.quantizer.to_record()
    sys.stdout.write(record)
    print(f"# mse {res.mse!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        stem = f"{cfg.name}_{args.designer}_T{T}" + (f"_n{n}" if res.vector is not None else "")
        (out / f"{stem}.quant").write_text(record)
        if res.vector is not None:
            res.vector.to_type_table_csv(out / f"{stem}_types.csv")
        if res.trace is not None:
            res.trace.to_csv(out / f"{stem}_trace.csv")
    return EXIT_OK if np.isfinite(res.mse) else EXIT_NUMERIC


def _cmd_experiment(args) -> int:
    cfg = _config(args)
    out = args.out or "results"
    start = time.perf_counter()
    bundle = run_experiment(cfg, out, threads=args.threads)
    for line in summary_lines(bundle):
        print(line)
    for f in bundle.files:
        print(f"wrote {f}")
    print(f"wall time {time.perf_counter() - start:.2f} s")
    return EXIT_OK if is_finite_result(bundle) else EXIT_NUMERIC


def _cmd_check(args) -> int:
    cfg = _config(args)
    model = build_model(cfg.model)
    try:
        q = Quantizer.from_record(Path(args.record).read_text())
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read quantizer record: {exc}") from exc
    ok = True
    if q.domain == U_DOMAIN:
        tm = transform_to_u(model, threshold_grid_for(model, cfg))
        cells_ok = check_fine_cells(tm, q, tol=args.tol)
        print(f"cell condition (nearest reconstruction in U): {'pass' if cells_ok else 'FAIL'}")
        ok &= cells_ok
    else:
        resid = check_boundary_condition(model, q) if q.n_thresholds else np.zeros(0)
        worst = float(np.max(np.abs(resid))) if resid.size else 0.0
        cent = float(np.max(np.abs(centroids_for(model, q.thresholds) - q.recon)))
        print(f"mse {evaluate_mse(model, q)!r}")
        print(f"boundary residual max |g(t) - midpoint| = {worst:.3e}: "
              f"{'pass' if worst <= args.tol else 'FAIL'}")
        print(f"centroid residual max |E[S|cell] - recon| = {cent:.3e}: "
              f"{'pass' if cent <= args.tol else 'FAIL'}")
        ok &= worst <= args.tol and cent <= args.tol
    return EXIT_OK if ok else EXIT_CHECK


def _cmd_oracle(args) -> int:
    cfg = _config(args)
    model = build_model(cfg.model)
    T = cfg.T[0] if args.thresholds is None else args.thresholds
    q, mse = brute_force(model, threshold_grid_for(model, cfg), T)
    sys.stdout.write(q.to_record())
    print(f"# mse {mse!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.name}_oracle_T{T}.quant").write_text(q.to_record())
    return EXIT_OK


_COMMANDS = {"design": _cmd_design, "experiment": _cmd_experiment, "check": _cmd_check,
             "oracle": _cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, TruncationError, BudgetExceededError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DegenerateModelError, FloatingPointError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
