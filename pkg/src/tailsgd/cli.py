"""Command-line interface.

``tailsgd COMMAND --config FILE [options]`` with commands:

* ``moments``: population (or ``--estimate N``) moments of the model.
* ``solve-cov``: stationary iterate covariance by ``--method fixed-point``
  or ``--method direct``, with its a-priori caps.
* ``bound``: closed-form risk bound for the configured run geometry.
* ``simulate``: Monte-Carlo risk experiment against the bound.
* ``verify``: the full verification check table; fails the exit code when
  any check fails.
* ``sweep``: grid of experiments written as CSV.

Exit codes: 0 success, 2 configuration error, 3 verification failure,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .bounds import rate_constants, risk_bound, sigma2_mle
from .distributions import estimate_moments, exact_moments
from .errors import (
    ConfigError,
    ConvergenceError,
    DimensionError,
    EmptyWindowError,
    IndefiniteSolutionError,
    IntractableMomentsError,
    NotSpdError,
    SingularMomentsError,
    SingularSystemError,
    StepSizeError,
    TailSgdError,
    ZeroNoiseError,
)
from .harness import (
    SWEEP_COLUMNS,
    config_from_dict,
    parse_sweep_config,
    run_experiment,
    run_verification,
    sweep,
    sweep_csv,
)
from .sgd import resolve_moments
from .stationary import (
    FourthMomentOperator,
    crude_bound,
    refined_trace_bound,
    solve_stationary_direct,
    solve_stationary_fixed_point,
)

_CONFIG_ERRORS = (
    ConfigError,
    NotSpdError,
    SingularMomentsError,
    IntractableMomentsError,
    DimensionError,
    EmptyWindowError,
    StepSizeError,
    OSError,
)
_NUMERICAL_ERRORS = (
    ConvergenceError,
    SingularSystemError,
    IndefiniteSolutionError,
    ZeroNoiseError,
    FloatingPointError,
)


def jsonable(obj):
    """Recursively convert dataclasses and arrays to JSON-ready values."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    return obj


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(payload, out_path):
    _emit(json.dumps(jsonable(payload), indent=2) + "\n", out_path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tailsgd", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a JSON config")
        p.add_argument("--out", default=None, help="write output here instead of stdout")
        return p

    p = add("moments", "population or estimated moments of the model")
    p.add_argument("--estimate", type=int, default=None, metavar="N",
                   help="estimate from N fresh draws instead of closed forms")

    p = add("solve-cov", "stationary iterate covariance")
    p.add_argument("--method", choices=("fixed-point", "direct"), default="direct")

    add("bound", "closed-form risk bound for the configured run")

    p = add("simulate", "Monte-Carlo risk experiment")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("json", "csv"), default="json")

    p = add("verify", "run the verification check table")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("text", "json"), default="text")

    p = add("sweep", "grid of experiments as CSV")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _load_config(path: str):
    with open(path) as fh:
        return fh.read()


def _cmd_moments(args) -> int:
    cfg = config_from_dict(json.loads(_load_config(args.config)))
    spec = cfg.distribution
    if args.estimate is not None:
        m = estimate_moments(spec, args.estimate, (cfg.seed, 990))
    else:
        m = exact_moments(spec)
    noiseless = float(np.linalg.norm(m.Sigma)) == 0.0
    payload = {
        "kind": spec.kind, "d": m.d, "exact": m.exact, "n_samples": m.n_samples,
        "H": m.H, "Sigma": m.Sigma, "w_star": m.w_star,
        "mu": m.mu, "R2": m.R2,
        "sigma2_mle": sigma2_mle(m),
        "rho": None if noiseless else rate_constants(m, 0.5 / m.R2).rho,
    }
    _emit_json(payload, args.out)
    return 0


def _cmd_solve_cov(args) -> int:
    cfg = config_from_dict(json.loads(_load_config(args.config)))
    m = resolve_moments(cfg.distribution)
    op = FourthMomentOperator.from_spec(cfg.distribution)
    solver = (solve_stationary_fixed_point if args.method == "fixed-point"
              else solve_stationary_direct)
    sol = solver(m.H, op, m.Sigma, cfg.gamma)
    window = cfg.T - cfg.t
    payload = {
        "method": sol.method,
        "cov": sol.cov,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "condition": sol.condition,
        "operator_exact": sol.exact,
        "moments_exact": m.exact,
        "trace": float(np.trace(sol.cov)),
        "lambda_max": float(np.linalg.eigvalsh(sol.cov)[-1]),
        "crude_bound": crude_bound(m.Sigma, m.H, cfg.gamma, m.R2),
        "refined_trace_bound": refined_trace_bound(m.Sigma, m.H, cfg.gamma, m.R2),
        "variance_of_average": float(np.trace(sol.cov)) / (cfg.gamma * window),
    }
    _emit_json(payload, args.out)
    return 0


def _cmd_bound(args) -> int:
    cfg = config_from_dict(json.loads(_load_config(args.config)))
    m = resolve_moments(cfg.distribution)
    rc = rate_constants(m, cfg.gamma)
    dist0_sq = float(np.sum((cfg.w0 - m.w_star) ** 2))
    rb = risk_bound(rc, cfg.t, cfg.T, dist0_sq)
    _emit_json({"constants": rc, "dist0_sq": dist0_sq, "bound": rb}, args.out)
    return 0


def _report_row(cfg, report) -> dict:
    row = dict.fromkeys(SWEEP_COLUMNS, "")
    row.update(
        cell_id=0, d=cfg.distribution.d, gamma=cfg.gamma, rho=report.constants.rho,
        T=cfg.T, t=cfg.t, replicates=report.replicates, seed=report.seed,
        emp_risk=report.emp_risk, stderr=report.stderr, bound=report.bound.total,
        bias_bound=report.bound.bias, var_bound=report.bound.variance,
        eff_ratio=report.eff_ratio, error="",
    )
    return row


def _cmd_simulate(args) -> int:
    cfg = config_from_dict(json.loads(_load_config(args.config)))
    updates = {}
    if args.replicates is not None:
        updates["replicates"] = args.replicates
    if args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        cfg = dataclasses.replace(cfg, **updates)
    report = run_experiment(cfg, workers=args.workers)
    if args.format == "csv":
        _emit(sweep_csv([_report_row(cfg, report)]), args.out)
    else:
        _emit_json(report, args.out)
    return 0


def _cmd_verify(args) -> int:
    cfg = config_from_dict(json.loads(_load_config(args.config)))
    results = run_verification(cfg, workers=args.workers)
    failed = [r for r in results if not r.passed]
    if args.format == "json":
        _emit_json({"checks": results, "passed": not failed}, args.out)
    else:
        lines = [
            f"{'PASS' if r.passed else 'FAIL'} {r.name:28s} margin={r.margin: .3e}  {r.detail}"
            for r in results
        ]
        lines.append(f"{len(results) - len(failed)}/{len(results)} checks passed")
        _emit("\n".join(lines) + "\n", args.out)
    return 3 if failed else 0


def _cmd_sweep(args) -> int:
    sweep_cfg = parse_sweep_config(_load_config(args.config))
    rows = sweep(sweep_cfg, workers=args.workers)
    if args.format == "json":
        _emit_json(rows, args.out)
    else:
        _emit(sweep_csv(rows), args.out)
    return 0


_COMMANDS = {
    "moments": _cmd_moments,
    "solve-cov": _cmd_solve_cov,
    "bound": _cmd_bound,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except json.JSONDecodeError as exc:
        print(f"config error: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except _CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except TailSgdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
