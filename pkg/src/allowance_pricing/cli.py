"""Command-line front end: solve curves, price calls, run diagnostics.

Exit codes: 0 success, 2 configuration or validation failure, 3 solver
convergence failure, 4 observed spot outside the attainable range, 5 a
diagnostic flag was raised. Artifacts land in --out together with a
manifest.json carrying the config snapshot, seed and per-file checksums.

Worker counts (--workers or ALLOWANCE_PRICING_WORKERS) are validated and
recorded in the manifest; the numerical kernels are vectorized and run in
process, so the flag does not spawn anything today.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from typing import List, Optional

import numpy as np

from . import __version__
from .config import RunConfig, load_config, serialize_config
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DomainError,
    ModelError,
    SolverError,
)
from .fixedpoint import backward_recursion
from .lsmc import run_apmcm
from .model import PriceFunctional
from .output import (
    curve_rows,
    write_bucket_csv,
    write_comparison_csv,
    write_convergence_csv,
    write_curves_csv,
    write_manifest,
    write_residuals_csv,
    write_text,
)
from .pde import PdeGrid, convergence_table, solve_pde
from .pricing import (
    CallSpec,
    martingale_diagnostic,
    price_european_call,
    replicate_call_prices,
    simulate_paths,
)


def _resolve_workers(value: Optional[int]) -> int:
    if value is None:
        env = os.environ.get("ALLOWANCE_PRICING_WORKERS", "").strip()
        if env:
            try:
                value = int(env)
            except ValueError:
                raise ConfigurationError(
                    f"ALLOWANCE_PRICING_WORKERS must be an integer, got {env!r}"
                )
        else:
            value = os.cpu_count() or 1
    if value < 1:
        raise ConfigurationError(f"workers must be >= 1, got {value}")
    return value


def _ensure_out(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def _load(args) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        from dataclasses import replace

        config = replace(config, seed=args.seed)
    return config


def cmd_solve(args) -> int:
    config = _load(args)
    workers = _resolve_workers(args.workers)
    out = _ensure_out(args.out)
    model = config.pricing_config()
    abate = config.abatement()
    started = time.perf_counter()
    artifacts: List[str] = []

    if args.method == "lsmc":
        result = run_apmcm(model, abate, config.noise(), config.basis(), config.lsmc_settings())
        peaks = result.basis.peaks
        times = list(range(model.horizon))
        path = os.path.join(out, "alpha_lsmc.csv")
        write_curves_csv(path, curve_rows(times, peaks, result.coefficients))
        artifacts.append(path)
        path = os.path.join(out, "residuals.csv")
        write_residuals_csv(path, result.residual_histories)
        artifacts.append(path)
        print(
            f"solved {model.horizon} periods by projection; inner iterations "
            f"{result.iterations}"
        )
    elif args.method == "reference":
        alphas = backward_recursion(model, abate, config.noise(), config.solver_settings())
        grid = alphas[0].grid
        times = list(range(model.horizon))
        path = os.path.join(out, "alpha_reference.csv")
        write_curves_csv(path, curve_rows(times, grid, [a.values for a in alphas[:-1]]))
        artifacts.append(path)
        try:
            lsmc = run_apmcm(model, abate, config.noise(), config.basis(), config.lsmc_settings())
            peaks = lsmc.basis.peaks
            path = os.path.join(out, "comparison.csv")
            write_comparison_csv(
                path,
                peaks,
                times,
                [np.asarray(a(peaks)) for a in lsmc.alphas[:-1]],
                [np.asarray(a(peaks)) for a in alphas[:-1]],
                labels=("lsmc", "reference"),
            )
            artifacts.append(path)
        except ConvergenceError as exc:
            print(f"note: projection comparison skipped, {exc}", file=sys.stderr)
        print(f"solved {model.horizon} periods on the reference grid")
    else:
        grid = config.pde_grid()
        diffusion = config.diffusion()
        surface = solve_pde(model, abate, diffusion, grid)
        times = list(range(model.horizon + 1))
        path = os.path.join(out, "alpha_pde.csv")
        write_curves_csv(
            path, curve_rows(times, surface.grid, [surface.slice_at(t) for t in times])
        )
        artifacts.append(path)
        coarser = [
            PdeGrid(
                n_time=max(grid.n_time // k, 1),
                n_space=max((grid.n_space - 1) // k + 1, 5),
                g_min=grid.g_min,
                g_max=grid.g_max,
            )
            for k in (4, 2)
        ]
        rows = convergence_table(model, abate, diffusion, coarser, surface)
        path = os.path.join(out, "convergence.csv")
        write_convergence_csv(path, rows)
        artifacts.append(path)
        print(f"solved the terminal-value problem on {grid.n_time}x{grid.n_space} nodes")

    manifest_path = os.path.join(out, "manifest.json")
    write_manifest(
        manifest_path,
        serialize_config(config),
        config.seed,
        __version__,
        time.perf_counter() - started,
        artifacts,
        workers=workers,
    )
    print(f"artifacts in {out}")
    return 0


def cmd_price(args) -> int:
    config = _load(args)
    _resolve_workers(args.workers)
    model = config.pricing_config()
    abate = config.abatement()
    noise = config.noise()
    spec = CallSpec(strike=args.strike, maturity=args.tau)

    result = run_apmcm(model, abate, noise, config.basis(), config.lsmc_settings())
    priced = price_european_call(result, spec, args.spot, args.t_now)

    spread = None
    if args.replicates >= 2:
        try:
            values = replicate_call_prices(
                model, abate, noise, config.basis(), config.lsmc_settings(),
                spec, args.spot, args.t_now, replicates=args.replicates,
            )
            spread = float(values.std(ddof=1))
        except SolverError as exc:
            print(f"note: sampling spread unavailable, {exc}", file=sys.stderr)

    if spread is None:
        print(f"price {priced.value:.12g}")
    else:
        print(
            f"price {priced.value:.12g} +/- {spread:.3g} "
            f"(sample spread over {args.replicates} refits)"
        )

    if args.out:
        out = _ensure_out(args.out)
        started = time.perf_counter()
        path = os.path.join(out, "value_surface.csv")
        times = list(range(priced.t_now, spec.maturity))
        write_curves_csv(path, curve_rows(times, result.basis.peaks, priced.coefficients))
        write_manifest(
            os.path.join(out, "manifest.json"),
            serialize_config(config),
            config.seed,
            __version__,
            time.perf_counter() - started,
            [path],
        )
    return 0


def cmd_diagnose(args) -> int:
    config = _load(args)
    _resolve_workers(args.workers)
    model = config.pricing_config()
    abate = config.abatement()
    noise = config.noise()
    n_paths = args.paths if args.paths is not None else config.paths

    alphas = list(backward_recursion(model, abate, noise, config.solver_settings()))
    if args.corrupt_t is not None:
        t = args.corrupt_t
        if not 0 <= t < model.horizon:
            raise ConfigurationError(
                f"--corrupt-t must be in [0, {model.horizon - 1}], got {t}"
            )
        f = alphas[t]
        bumped = np.minimum(f.values + 0.1 * model.penalty, model.penalty)
        alphas[t] = PriceFunctional(f.grid, bumped, bound=model.penalty, validate=False)

    paths = simulate_paths(
        model, abate, noise, alphas, n_paths, config.seed,
        initial_state=config.initial_state,
    )
    report = martingale_diagnostic(
        paths, buckets=config.buckets, bound=model.penalty
    )
    print(report.to_text())

    if args.out:
        out = _ensure_out(args.out)
        bucket_path = os.path.join(out, "buckets.csv")
        write_bucket_csv(bucket_path, report)
        report_path = os.path.join(out, "report.txt")
        write_text(report_path, report.to_text())
        write_manifest(
            os.path.join(out, "manifest.json"),
            serialize_config(config),
            config.seed,
            __version__,
            0.0,
            [bucket_path, report_path],
        )
    return 0 if report.passed else 5


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="allowance-pricing",
        description="Numerical pricing of emission allowances and options on them.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve the price curves and export them")
    solve.add_argument("config", help="path to a run configuration file")
    solve.add_argument("--method", choices=("lsmc", "reference", "pde"), default="lsmc")
    solve.add_argument("--out", default="out")
    solve.add_argument("--seed", type=int, default=None, help="override run.seed")
    solve.add_argument("--workers", type=int, default=None)
    solve.set_defaults(func=cmd_solve)

    price = sub.add_parser("price", help="value a European call on the allowance price")
    price.add_argument("config")
    price.add_argument("--tau", type=int, required=True, help="maturity period of the call")
    price.add_argument("--strike", type=float, required=True)
    price.add_argument("--spot", type=float, required=True, help="observed allowance price")
    price.add_argument("--t-now", type=int, default=0, dest="t_now")
    price.add_argument("--replicates", type=int, default=5,
                       help="refits for the sampling-spread estimate (0 disables)")
    price.add_argument("--out", default=None)
    price.add_argument("--seed", type=int, default=None)
    price.add_argument("--workers", type=int, default=None)
    price.set_defaults(func=cmd_price)

    diag = sub.add_parser("diagnose", help="martingale and terminal-law diagnostic")
    diag.add_argument("config")
    diag.add_argument("--paths", type=int, default=None)
    diag.add_argument("--corrupt-t", type=int, default=None, dest="corrupt_t",
                      help="deliberately bias the curve at one period (negative control)")
    diag.add_argument("--out", default=None)
    diag.add_argument("--seed", type=int, default=None)
    diag.add_argument("--workers", type=int, default=None)
    diag.set_defaults(func=cmd_diagnose)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.history:
            tail = ", ".join(f"{r:.3e}" for r in exc.history[-6:])
            print(f"residual tail: {tail}", file=sys.stderr)
        return 3
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
