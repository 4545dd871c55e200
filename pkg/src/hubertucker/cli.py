"""Command-line front end.

Subcommands: ``simulate``, ``fit``, ``benchmark``, ``rank-select``,
``check-gradients``, ``check-rsc``, ``check-lemma2``, ``check-lemma3``.
Every run writes its fully resolved configuration (defaults included) into
the output (JSON reports embed it; CSV outputs get a ``<out>.config.json``
sidecar), so any result can be replayed exactly.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 divergence
during ``fit`` (the partial trace is still written).  Failures print a
single machine-readable JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import datafiles, diagnostics
from .optimizer import GDConfig, default_tuning, degrees_of_freedom, fit
from .robust_init import RankSelectConfig, select_rank_history
from .simulation import (EstimatorConfig, NoiseModel, SyntheticSpec,
                         gen_dataset, monte_carlo)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


class CLIError(Exception):
    """Invalid configuration; maps to exit code 2."""


# ---------------------------------------------------------------------------
# argument plumbing

def _as_tuple(value, length, cast, name):
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        raise CLIError(f"{name} must be {length} comma-separated values")
    if len(parts) != length:
        raise CLIError(f"{name} must have exactly {length} values, got {len(parts)}")
    try:
        return tuple(cast(p) for p in parts)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid {name}: {exc}") from exc


def _as_list(value, cast, name):
    if isinstance(value, str):
        parts = [p for p in value.replace(" ", "").split(",") if p]
    elif isinstance(value, (list, tuple)):
        parts = list(value)
    else:
        raise CLIError(f"{name} must be a comma-separated list")
    if not parts:
        raise CLIError(f"{name} must be non-empty")
    try:
        return [cast(p) for p in parts]
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid {name}: {exc}") from exc


def _as_float(value, name):
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise CLIError(f"invalid {name}: {value!r}") from exc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f).strip("'")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _noise_from_args(args) -> NoiseModel:
    family = args.noise
    param = getattr(args, "noise_param", None)
    scale = getattr(args, "noise_scale", 1.0)
    try:
        return NoiseModel(family=family, param=param, scale=scale)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc


def _spec_from_args(args) -> SyntheticSpec:
    try:
        return SyntheticSpec(
            dims=_as_tuple(args.dims, 3, int, "--dims"),
            ranks=_as_tuple(args.ranks, 3, int, "--ranks"),
            n=int(args.n),
            noise=_noise_from_args(args),
            spectrum=_as_tuple(args.spectrum, 2, float, "--spectrum"),
            seed=int(args.seed),
        )
    except ValueError as exc:
        raise CLIError(str(exc)) from exc


def _add_common(parser, out_required=True):
    parser.add_argument("--config", help="flat JSON file of defaults for this "
                                         "subcommand (CLI flags take precedence)")
    parser.add_argument("--seed", type=int, default=0, help="master seed")
    parser.add_argument("--out", required=out_required, help="output path")


def _add_spec_args(parser, dims_default=None, need_n=True,
                   ranks_default="2,2,2"):
    parser.add_argument("--dims", default=dims_default,
                        help="tensor dims, e.g. 6,6,6")
    parser.add_argument("--ranks", default=ranks_default, help="rank triple")
    parser.add_argument("--spectrum", default="1,2",
                        help="target singular-value band lambda_min,lambda_max")
    if need_n:
        parser.add_argument("--n", type=int, help="sample count")
    parser.add_argument("--noise", default="none",
                        choices=["gaussian", "student_t", "pareto_centered",
                                 "lognormal_centered", "none"])
    parser.add_argument("--noise-param", type=float, default=None,
                        help="family shape parameter (t dof, pareto alpha, "
                             "lognormal sigma)")
    parser.add_argument("--noise-scale", type=float, default=1.0)


def _add_tuning_args(parser):
    parser.add_argument("--delta", type=float, default=1.0,
                        help="moment exponent in (0, 1] for the scale rules")
    parser.add_argument("--no-robust", action="store_true",
                        help="disable truncation and the Huber threshold "
                             "(squared-loss baseline)")
    parser.add_argument("--moment-proxy", type=float, default=None,
                        help="explicit noise-moment plug-in; default is the "
                             "winsorized empirical moment of |y|")
    parser.add_argument("--t-max", type=int, default=None)
    parser.add_argument("--rel-tol", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hubertucker",
        description="Robust low-rank order-3 tensor regression: simulation, "
                    "fitting, benchmarking and empirical verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic dataset file")
    _add_common(p)
    _add_spec_args(p, dims_default="6,6,6")

    p = sub.add_parser("fit", help="estimate from a dataset file or an inline "
                                   "synthetic spec")
    _add_common(p)
    p.add_argument("--data", help="dataset container written by `simulate`")
    _add_spec_args(p, dims_default=None, ranks_default=None)
    _add_tuning_args(p)
    for flag in ("tau", "varpi", "a", "b", "eta"):
        p.add_argument(f"--{flag}", default=None,
                       help=f"explicit {flag} (overrides the derived value)")
    p.add_argument("--plot", action="store_true",
                   help="also render the trace figure next to the output")

    p = sub.add_parser("benchmark", help="Monte Carlo error sweep over sample "
                                         "sizes")
    _add_common(p)
    _add_spec_args(p, dims_default="8,8,8", need_n=False)
    _add_tuning_args(p)
    p.add_argument("--n-grid", default=None, help="absolute sample sizes, "
                                                  "e.g. 280,560,1120")
    p.add_argument("--n-mult", default=None,
                   help="sample sizes as multiples of the model degrees of "
                        "freedom, e.g. 5,10,20,40")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--contaminate", default=None,
                   help="fraction,factor response contamination, e.g. 0.05,100")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="parallel workers over (cell, rep) jobs; results are "
                        "identical for any value")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("rank-select", help="iterative rank selection from "
                                           "truncated moment tensors")
    _add_common(p)
    p.add_argument("--data")
    _add_spec_args(p)
    p.add_argument("--threshold", type=float, default=0.1,
                   help="relative singular-value threshold of the rank rule")
    p.add_argument("--max-outer", type=int, default=10)
    p.add_argument("--plot", action="store_true")

    p = sub.add_parser("check-gradients", help="finite-difference check of the "
                                               "analytic objective gradients")
    _add_common(p)
    p.add_argument("--dims", default="4,5,6")
    p.add_argument("--ranks", default="2,2,2")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--step-h", type=float, default=1e-6)
    p.add_argument("--directions", type=int, default=4)

    p = sub.add_parser("check-rsc", help="empirical restricted strong "
                                         "convexity of the Huber loss")
    _add_common(p)
    _add_spec_args(p, dims_default="8,8,8", need_n=False)
    p.add_argument("--n-mult", type=int, default=30,
                   help="sample count as a multiple of the degrees of freedom")
    p.add_argument("--radius-frac", type=float, default=0.5,
                   help="ball radius as a fraction of ||A*||_F")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--varpi", default=None,
                   help="explicit Huber threshold (default: derived lower "
                        "bound rule)")

    p = sub.add_parser("check-lemma2", help="coverage of the singular-value "
                                            "envelopes for clipped moment "
                                            "matrices")
    _add_common(p)
    p.add_argument("--d1", type=int, default=100)
    p.add_argument("--d2", type=int, default=5)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--noise", default="gaussian",
                   choices=["gaussian", "student_t", "pareto_centered",
                            "lognormal_centered", "none"])
    p.add_argument("--noise-param", type=float, default=None)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--tau", default="100", help="truncation level (or 'inf')")
    p.add_argument("--t", type=float, default=3.0, help="tail parameter")
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--constant", type=float,
                   default=diagnostics.SINGULAR_BOUND_CONSTANT)
    p.add_argument("--format", choices=["csv", "json"], default="json")

    p = sub.add_parser("check-lemma3", help="operator-norm concentration of "
                                            "the truncated moment estimator")
    _add_common(p)
    p.add_argument("--d1", type=int, default=10)
    p.add_argument("--d2", type=int, default=10)
    p.add_argument("--noise", default="student_t",
                   choices=["gaussian", "student_t", "pareto_centered",
                            "lognormal_centered", "none"])
    p.add_argument("--noise-param", type=float, default=3.0)
    p.add_argument("--noise-scale", type=float, default=1.0)
    p.add_argument("--n-grid", default="250,500,1000,2000")
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--target-fro", type=float, default=1.0,
                   help="Frobenius norm of the matrix target (0 for zero)")
    p.add_argument("--tau", default=None,
                   help="fixed truncation level; default is the square-root "
                        "scale rule in n")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--plot", action="store_true")

    return parser


def _apply_config_file(parser, argv):
    """Pre-scan for --config, validate its keys against the subcommand and
    install the values as defaults (explicit flags still win)."""
    if not argv or argv[0].startswith("-"):
        return argv
    command = argv[0]
    config_path = None
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            config_path = argv[i + 1]
        elif token.startswith("--config="):
            config_path = token.split("=", 1)[1]
    if config_path is None:
        return argv
    try:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CLIError(f"cannot read config file {config_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CLIError(f"config file {config_path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise CLIError("config file must contain a flat JSON object")
    subparser = None
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            subparser = action.choices.get(command)
    if subparser is None:
        raise CLIError(f"unknown subcommand {command!r}")
    known = {a.dest for a in subparser._actions}
    defaults = {}
    for key, value in raw.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise CLIError(f"unknown config key {key!r} for subcommand {command!r}")
        if isinstance(value, dict):
            raise CLIError(f"config key {key!r} must be a flat value")
        defaults[dest] = value
    subparser.set_defaults(**defaults)
    return argv


# ---------------------------------------------------------------------------
# subcommands

def _resolved_config(args, command, **extra) -> dict:
    cfg = {"command": command}
    skip = {"command", "config", "func"}
    for key, value in sorted(vars(args).items()):
        if key not in skip:
            cfg[key] = _jsonable(value)
    cfg.update({k: _jsonable(v) for k, v in extra.items()})
    return cfg


def cmd_simulate(args) -> int:
    if args.n is None:
        raise CLIError("--n is required for simulate")
    spec = _spec_from_args(args)
    samples, _ = gen_dataset(spec)
    datafiles.save_dataset(args.out, samples, spec,
                           extra={"ranks": list(spec.ranks)})
    print(f"simulate: wrote n={spec.n} dims={spec.dims} -> {args.out}")
    return EXIT_OK


def _load_or_generate(args):
    """Samples plus (spec, header) for fit/rank-select."""
    if args.data:
        if args.dims is not None:
            raise CLIError("--data and inline --dims are mutually exclusive")
        samples, header = datafiles.load_dataset(args.data)
        spec = datafiles.spec_from_header(header)
        return samples, spec, header
    if args.dims is None or args.n is None:
        raise CLIError("either --data or an inline spec (--dims, --ranks, "
                       "--n, ...) is required")
    if args.ranks is None:
        raise CLIError("--ranks is required for an inline spec")
    spec = _spec_from_args(args)
    samples, _ = gen_dataset(spec)
    return samples, spec, None


def cmd_fit(args) -> int:
    samples, spec, header = _load_or_generate(args)
    if args.ranks is not None:
        ranks = _as_tuple(args.ranks, 3, int, "--ranks")
    elif spec is not None:
        ranks = tuple(spec.ranks)
    else:
        raise CLIError("--ranks is required (the dataset header records none)")
    try:
        cfg = default_tuning(samples, ranks, delta=args.delta,
                             moment_proxy=args.moment_proxy,
                             robust=not args.no_robust)
        overrides = {}
        for name in ("tau", "varpi", "a", "b", "eta"):
            value = getattr(args, name)
            if value is not None:
                overrides[name] = _as_float(value, f"--{name}")
        if args.t_max is not None:
            overrides["t_max"] = args.t_max
        if args.rel_tol is not None:
            overrides["rel_tol"] = args.rel_tol
        if overrides:
            cfg = GDConfig(**{**asdict(cfg), **overrides})
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    result = fit(samples, cfg)
    err = rel = None
    if samples.ground_truth is not None:
        err = float(np.linalg.norm(result.estimate - samples.ground_truth))
        norm = float(np.linalg.norm(samples.ground_truth))
        rel = err / norm if norm > 0 else float("nan")
    payload = {
        "config": _resolved_config(args, "fit", gd_config=asdict(cfg)),
        "fit": {
            "converged": result.converged,
            "diverged": result.diverged,
            "iterations": result.iterations_run,
            "step_halvings": result.step_halvings,
            "eta_used": result.eta_used,
            "objective_trace": _jsonable(result.objective_trace),
            "error_trace": _jsonable(result.error_trace),
            "error_frobenius": err,
            "relative_error": rel,
            "estimate_frobenius": float(np.linalg.norm(result.estimate)),
        },
    }
    datafiles.write_json(args.out, _jsonable(payload))
    if args.plot:
        from . import plots
        plots.plot_fit_traces(result, Path(args.out).with_suffix(".png"))
    summary = (f"fit: iterations={result.iterations_run} "
               f"converged={str(result.converged).lower()}")
    if rel is not None:
        summary += f" relative_error={rel:.6e}"
    print(summary + f" -> {args.out}")
    if result.diverged:
        print(json.dumps({"error": "divergence",
                          "message": "gradient descent diverged; partial "
                                     "trace written"}), file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if (args.n_grid is None) == (args.n_mult is None):
        raise CLIError("exactly one of --n-grid or --n-mult is required")
    dims = _as_tuple(args.dims, 3, int, "--dims")
    ranks = _as_tuple(args.ranks, 3, int, "--ranks")
    if args.n_grid is not None:
        n_values = _as_list(args.n_grid, int, "--n-grid")
    else:
        df = degrees_of_freedom(dims, ranks)
        n_values = [m * df for m in _as_list(args.n_mult, int, "--n-mult")]
    noise = _noise_from_args(args)
    spectrum = _as_tuple(args.spectrum, 2, float, "--spectrum")
    try:
        grid = [SyntheticSpec(dims=dims, ranks=ranks, n=n, noise=noise,
                              spectrum=spectrum, seed=0) for n in n_values]
        est = EstimatorConfig(delta=args.delta, robust=not args.no_robust,
                              moment_proxy=args.moment_proxy,
                              t_max=args.t_max, rel_tol=args.rel_tol)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    contamination = None
    if args.contaminate is not None:
        frac, factor = _as_tuple(args.contaminate, 2, float, "--contaminate")
        contamination = (frac, factor)
    table = monte_carlo(grid, args.reps, est, master_seed=args.seed,
                        threads=max(1, args.threads),
                        contamination=contamination)
    config = _resolved_config(args, "benchmark", n_values=n_values)
    if args.format == "csv":
        datafiles.write_error_table_csv(args.out, table)
        datafiles.write_config_sidecar(args.out, config)
    else:
        datafiles.write_json(args.out, {"config": config,
                                        "rows": _jsonable(table.rows)})
    summary = f"benchmark: {len(table.rows)} rows"
    if len(n_values) >= 2:
        summary += f" slope={table.loglog_slope():.3f}"
    if args.plot:
        from . import plots
        plots.plot_benchmark_errors(table, Path(args.out).with_suffix(".png"))
    print(summary + f" -> {args.out}")
    return EXIT_OK


def cmd_rank_select(args) -> int:
    samples, spec, header = _load_or_generate(args)
    try:
        cfg = RankSelectConfig(singular_value_ratio_threshold=args.threshold,
                               max_outer_iters=args.max_outer)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    import warnings as _warnings
    with _warnings.catch_warnings(record=True) as caught:
        _warnings.simplefilter("always")
        history = select_rank_history(samples, cfg)
    ranks = history[-1]
    payload = {
        "config": _resolved_config(args, "rank-select"),
        "ranks": list(ranks),
        "history": [list(h) for h in history],
        "outer_iterations": len(history) - 1,
        "warnings": [str(w.message) for w in caught],
    }
    datafiles.write_json(args.out, _jsonable(payload))
    if args.plot:
        from . import plots
        plots.plot_rank_history(history, samples.dims,
                                Path(args.out).with_suffix(".png"))
    trace = " -> ".join(str(tuple(h)) for h in history)
    print(f"rank-select: ranks={tuple(ranks)} trace: {trace}")
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    dims = _as_tuple(args.dims, 3, int, "--dims")
    ranks = _as_tuple(args.ranks, 3, int, "--ranks")
    records = diagnostics.gradient_check_suite(
        dims=dims, ranks=ranks, n=args.n, instances=args.instances,
        h=args.step_h, directions=args.directions, seed=args.seed)
    worst = max(r["max_relative_error"] for r in records)
    payload = {
        "config": _resolved_config(args, "check-gradients"),
        "instances": _jsonable(records),
        "max_relative_error": worst,
    }
    datafiles.write_json(args.out, _jsonable(payload))
    print(f"check-gradients: max_relative_error={worst:.3e} over "
          f"{args.instances} instances -> {args.out}")
    return EXIT_OK


def cmd_check_rsc(args) -> int:
    dims = _as_tuple(args.dims, 3, int, "--dims")
    ranks = _as_tuple(args.ranks, 3, int, "--ranks")
    df = degrees_of_freedom(dims, ranks)
    spec = SyntheticSpec(dims=dims, ranks=ranks, n=args.n_mult * df,
                         noise=_noise_from_args(args),
                         spectrum=_as_tuple(args.spectrum, 2, float, "--spectrum"),
                         seed=args.seed)
    varpi = _as_float(args.varpi, "--varpi") if args.varpi is not None else None
    report = diagnostics.rsc_experiment(
        spec, radius_frac=args.radius_frac, trials=args.trials,
        delta=args.delta, seed=args.seed, varpi=varpi)
    payload = {"config": _resolved_config(args, "check-rsc"),
               "report": report.to_dict()}
    datafiles.write_json(args.out, _jsonable(payload))
    print(f"check-rsc: satisfied {report.satisfied_count}/{report.trials} "
          f"min_ratio={report.min_ratio:.3f} -> {args.out}")
    return EXIT_OK


def cmd_check_lemma2(args) -> int:
    noise = _noise_from_args(args)
    tau = _as_float(args.tau, "--tau")
    report = diagnostics.truncated_singular_bounds(
        args.n, args.d1, args.d2, noise, tau, args.t, args.reps,
        seed=args.seed, constant=args.constant)
    config = _resolved_config(args, "check-lemma2")
    if args.format == "csv":
        columns = ("upper_coverage", "lower_coverage", "clipped_second_moment",
                   "constant")
        datafiles.write_rows_csv(args.out, columns,
                                 [{c: getattr(report, c) for c in columns}])
        datafiles.write_config_sidecar(args.out, config)
    else:
        datafiles.write_json(args.out, _jsonable({"config": config,
                                                  "report": report.to_dict()}))
    print(f"check-lemma2: upper={report.upper_coverage:.3f} "
          f"lower={report.lower_coverage:.3f} -> {args.out}")
    return EXIT_OK


def cmd_check_lemma3(args) -> int:
    noise = _noise_from_args(args)
    n_grid = _as_list(args.n_grid, int, "--n-grid")
    tau_rule = None
    if args.tau is not None:
        fixed_tau = _as_float(args.tau, "--tau")

        def tau_rule(n, _tau=fixed_tau):
            return _tau

    try:
        report = diagnostics.opnorm_concentration(
            (args.d1, args.d2), noise, n_grid, args.reps, seed=args.seed,
            tau_rule=tau_rule, target_frobenius=args.target_fro)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc
    config = _resolved_config(args, "check-lemma3",
                              slope=report.slope,
                              median_deviation=report.median_deviation)
    if args.format == "csv":
        rows = [{"n": n, "rep": rep, "deviation": dev}
                for ni, n in enumerate(report.n_grid)
                for rep, dev in enumerate(report.deviations[ni])]
        datafiles.write_rows_csv(args.out, ("n", "rep", "deviation"), rows)
        datafiles.write_config_sidecar(args.out, config)
    else:
        datafiles.write_json(args.out, _jsonable({"config": config,
                                                  "report": report.to_dict()}))
    if args.plot:
        from . import plots
        plots.plot_opnorm_deviation(report, Path(args.out).with_suffix(".png"))
    print(f"check-lemma3: slope={report.slope:.3f} -> {args.out}")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "benchmark": cmd_benchmark,
    "rank-select": cmd_rank_select,
    "check-gradients": cmd_check_gradients,
    "check-rsc": cmd_check_rsc,
    "check-lemma2": cmd_check_lemma2,
    "check-lemma3": cmd_check_lemma3,
}


def run(argv) -> int:
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, list(argv))
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except CLIError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
