"""Experiment harness: configs, Monte-Carlo risk experiments, verification, sweeps.

Config schema (JSON)
--------------------
::

    {
      "distribution": {
        "kind": "gaussian_well_specified" | "gaussian_misspecified" | "discrete",
        "d": 3,
        "H_spec": [[...]] | {"diag": [...]} | "identity",   # Gaussian kinds
        "w_star": [...],                                    # default zeros
        "noise_sigma": 1.0,                                 # default 0
        "misspec_fn": "norm_x" | "one_plus_norm_x",
        "support": [{"x": [...], "y_mean": 0.0, "y_std": 1.0, "prob": 0.5}, ...]
      },
      "gamma_rule": "half_inv_R2" | "half_inv_rho_R2" | "explicit",
      "gamma": 0.05,          # required iff gamma_rule == "explicit"
      "t_rule": "half_T" | "explicit",
      "t": 500,               # required iff t_rule == "explicit"
      "T": 1000,
      "w0": [...],            # default zeros
      "replicates": 100,
      "seed": 0
    }

Stepsize rules resolve against the model's moments: ``half_inv_R2`` gives
gamma = 1 / (2 R^2) and ``half_inv_rho_R2`` gives gamma = 1 / (2 rho R^2),
the conservative choice for badly misspecified noise.  Unknown keys are
rejected.

Replicate r of cell c under master seed s draws from the stream seeded by
the tuple (s, c, r), so results do not depend on how replicates are batched
across worker processes: running with 1 or many workers is bit-identical.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bounds import (
    RateConstants,
    RiskBound,
    rate_constants,
    risk_bound,
    sigma2_mle,
    variance_term,
)
from .distributions import (
    DISCRETE,
    GAUSSIAN_MISSPECIFIED,
    GAUSSIAN_WELL_SPECIFIED,
    KINDS,
    DistributionSpec,
    Moments,
    SampleStream,
    SupportAtom,
    exact_moments,
)
from .errors import ConfigError, TailSgdError
from .matcore import psd_order_leq, sym_to_vec, vec_to_sym
from .sgd import SgdConfig, resolve_moments, run_replicates
from .stationary import (
    FourthMomentOperator,
    covariance_step,
    crude_bound,
    damped_anticommutator,
    operator_matrix,
    refined_trace_bound,
    solve_stationary_direct,
    solve_stationary_fixed_point,
)

GAMMA_RULES = ("half_inv_R2", "half_inv_rho_R2", "explicit")
T_RULES = ("half_T", "explicit")

SWEEP_COLUMNS = (
    "cell_id", "d", "gamma", "rho", "T", "t", "replicates", "seed",
    "emp_risk", "stderr", "bound", "bias_bound", "var_bound", "eff_ratio", "error",
)

_EXPERIMENT_KEYS = {
    "distribution", "gamma_rule", "gamma", "t_rule", "t", "T",
    "w0", "replicates", "seed",
}
_DISTRIBUTION_KEYS = {
    "kind", "d", "H_spec", "w_star", "noise_sigma", "misspec_fn", "support",
}
_ATOM_KEYS = {"x", "y_mean", "y_std", "prob"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment: model, stepsize, window, and replication."""

    distribution: DistributionSpec
    gamma: float
    gamma_rule: str
    t: int
    t_rule: str
    T: int
    w0: np.ndarray
    replicates: int
    seed: int

    def __post_init__(self):
        w = np.array(self.w0, dtype=float)
        if w.shape != (self.distribution.d,):
            raise ConfigError("w0", f"shape {w.shape} incompatible with d={self.distribution.d}")
        w.setflags(write=False)
        object.__setattr__(self, "w0", w)
        if self.replicates < 1:
            raise ConfigError("replicates", f"must be at least 1, got {self.replicates}")
        if not 0 <= self.t < self.T:
            raise ConfigError("t", f"window [{self.t}, {self.T}) is empty")


def _parse_h_spec(value, d: int):
    if value is None or value == "identity":
        return np.eye(d)
    if isinstance(value, dict):
        if set(value) != {"diag"}:
            raise ConfigError("distribution.H_spec", f"unknown matrix form {sorted(value)}")
        return np.diag(np.asarray(value["diag"], dtype=float))
    return np.asarray(value, dtype=float)


def distribution_from_dict(doc: dict) -> DistributionSpec:
    """Build and validate a DistributionSpec from its JSON form."""
    if not isinstance(doc, dict):
        raise ConfigError("distribution", f"expected an object, got {type(doc).__name__}")
    unknown = set(doc) - _DISTRIBUTION_KEYS
    if unknown:
        raise ConfigError("distribution", f"unknown keys {sorted(unknown)}")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise ConfigError("distribution.kind", f"expected one of {KINDS}, got {kind!r}")
    if not isinstance(doc.get("d"), int) or isinstance(doc.get("d"), bool):
        raise ConfigError("distribution.d", "expected an integer")
    d = doc["d"]
    try:
        if kind == DISCRETE:
            raw = doc.get("support")
            if not isinstance(raw, list) or not raw:
                raise ConfigError("distribution.support", "expected a non-empty list of atoms")
            atoms = []
            for i, a in enumerate(raw):
                if not isinstance(a, dict) or set(a) - _ATOM_KEYS:
                    raise ConfigError(f"distribution.support[{i}]",
                                      "expected keys x, y_mean, y_std, prob")
                atoms.append(SupportAtom(
                    x=np.asarray(a.get("x"), dtype=float),
                    y_mean=float(a.get("y_mean", 0.0)),
                    y_std=float(a.get("y_std", 0.0)),
                    prob=float(a.get("prob", 0.0)),
                ))
            w_star = doc.get("w_star")
            return DistributionSpec(
                kind=kind, d=d, support=tuple(atoms),
                w_star=None if w_star is None else np.asarray(w_star, dtype=float),
                noise_sigma=float(doc.get("noise_sigma", 0.0)),
            )
        w_star = doc.get("w_star")
        return DistributionSpec(
            kind=kind, d=d,
            H_spec=_parse_h_spec(doc.get("H_spec"), d),
            w_star=None if w_star is None else np.asarray(w_star, dtype=float),
            noise_sigma=float(doc.get("noise_sigma", 0.0)),
            misspec_fn=doc.get("misspec_fn", "norm_x"),
        )
    except ConfigError:
        raise
    except (TailSgdError, ValueError, TypeError) as exc:
        raise ConfigError("distribution", str(exc)) from exc


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate an experiment document and resolve its derived rules."""
    if not isinstance(doc, dict):
        raise ConfigError("config", f"expected an object, got {type(doc).__name__}")
    unknown = set(doc) - _EXPERIMENT_KEYS
    if unknown:
        raise ConfigError("config", f"unknown keys {sorted(unknown)}")
    if "distribution" not in doc:
        raise ConfigError("distribution", "missing")
    dist = distribution_from_dict(doc["distribution"])

    big_t = doc.get("T", 1000)
    if not isinstance(big_t, int) or isinstance(big_t, bool) or big_t < 1:
        raise ConfigError("T", f"expected a positive integer, got {big_t!r}")

    m = resolve_moments(dist)
    gamma_rule = doc.get("gamma_rule", "half_inv_R2")
    if gamma_rule not in GAMMA_RULES:
        raise ConfigError("gamma_rule", f"expected one of {GAMMA_RULES}, got {gamma_rule!r}")
    if gamma_rule == "explicit":
        if "gamma" not in doc:
            raise ConfigError("gamma", "required when gamma_rule is explicit")
        gamma = float(doc["gamma"])
    elif gamma_rule == "half_inv_R2":
        gamma = 1.0 / (2.0 * m.R2)
    else:
        rho = rate_constants(m, 1.0 / (2.0 * m.R2)).rho
        gamma = 1.0 / (2.0 * rho * m.R2)
    if not 0.0 < gamma < 1.0 / m.R2:
        raise ConfigError("gamma", f"{gamma!r} outside the stable range (0, {1.0 / m.R2!r})")

    t_rule = doc.get("t_rule", "half_T")
    if t_rule not in T_RULES:
        raise ConfigError("t_rule", f"expected one of {T_RULES}, got {t_rule!r}")
    if t_rule == "explicit":
        if "t" not in doc:
            raise ConfigError("t", "required when t_rule is explicit")
        t = doc["t"]
        if not isinstance(t, int) or isinstance(t, bool):
            raise ConfigError("t", "expected an integer")
    else:
        t = big_t // 2

    w0 = doc.get("w0")
    replicates = doc.get("replicates", 100)
    if not isinstance(replicates, int) or isinstance(replicates, bool):
        raise ConfigError("replicates", "expected an integer")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed", "expected an integer")
    return ExperimentConfig(
        distribution=dist,
        gamma=gamma,
        gamma_rule=gamma_rule,
        t=t,
        t_rule=t_rule,
        T=big_t,
        w0=np.zeros(dist.d) if w0 is None else np.asarray(w0, dtype=float),
        replicates=replicates,
        seed=seed,
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse a JSON experiment document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    return config_from_dict(doc)


# ---------------------------------------------------------------------------
# Monte-Carlo experiments


def replicate_seed(master: int, cell: int, index: int) -> tuple[int, int, int]:
    """Seed tuple of one replicate; the flat layout keeps results independent
    of worker batching."""
    return (int(master), int(cell), int(index))


def _chunk_ranges(n: int, workers: int):
    k = max(1, min(int(workers), n))
    base, extra = divmod(n, k)
    out, lo = [], 0
    for i in range(k):
        hi = lo + base + (1 if i < extra else 0)
        out.append((lo, hi))
        lo = hi
    return out


def _tail_chunk(args):
    spec, cfg, process, master, cell, lo, hi, moments = args
    seeds = [replicate_seed(master, cell, i) for i in range(lo, hi)]
    res = run_replicates(spec, cfg, seeds, process=process, moments=moments)
    return res.tail_averages


def _tail_averages(spec, cfg, moments, master, cell, n_rep, process, workers):
    jobs = [(spec, cfg, process, master, cell, lo, hi, moments)
            for lo, hi in _chunk_ranges(n_rep, workers)]
    if len(jobs) == 1:
        parts = [_tail_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_tail_chunk, jobs))
    return np.concatenate(parts, axis=0)


def _risk_stats(tail_averages, m: Moments):
    dev = tail_averages - m.w_star
    risks = 0.5 * np.einsum("rd,de,re->r", dev, m.H, dev)
    mean = float(risks.mean())
    se = float(risks.std(ddof=1) / math.sqrt(len(risks))) if len(risks) > 1 else 0.0
    return mean, se


@dataclass(frozen=True)
class RiskReport:
    """Monte-Carlo estimate of the tail-average excess risk next to its bound.

    ``bias_risk`` and ``var_risk`` measure the two halves of the run (noise
    free labels, and start at w*) on matched sample streams.  ``eff_ratio``
    is emp_risk * (T - t) / sigma2_mle, the distance from the large-sample
    optimum 1; it is reported as 0 for noiseless models.
    """

    emp_risk: float
    stderr: float
    ci_low: float
    ci_high: float
    bound: RiskBound
    constants: RateConstants
    bias_risk: float
    bias_stderr: float
    var_risk: float
    var_stderr: float
    eff_ratio: float
    replicates: int
    seed: int


def run_experiment(cfg: ExperimentConfig, *, workers: int = 1, cell: int = 0) -> RiskReport:
    """Estimate the tail-average risk (and its bias/variance split) and
    evaluate the closed-form bound for the same run geometry."""
    m = resolve_moments(cfg.distribution)
    sgd_cfg = SgdConfig(gamma=cfg.gamma, w0=cfg.w0, t_avg_start=cfg.t, T=cfg.T)
    stats = {}
    for process in ("standard", "bias", "variance"):
        tails = _tail_averages(cfg.distribution, sgd_cfg, m, cfg.seed, cell,
                               cfg.replicates, process, workers)
        stats[process] = _risk_stats(tails, m)
    emp, se = stats["standard"]
    rc = rate_constants(m, cfg.gamma)
    dist0_sq = float(np.sum((cfg.w0 - m.w_star) ** 2))
    rb = risk_bound(rc, cfg.t, cfg.T, dist0_sq)
    eff = emp * (cfg.T - cfg.t) / rc.sigma2 if rc.sigma2 > 0.0 else 0.0
    return RiskReport(
        emp_risk=emp,
        stderr=se,
        ci_low=emp - 1.96 * se,
        ci_high=emp + 1.96 * se,
        bound=rb,
        constants=rc,
        bias_risk=stats["bias"][0],
        bias_stderr=stats["bias"][1],
        var_risk=stats["variance"][0],
        var_stderr=stats["variance"][1],
        eff_ratio=eff,
        replicates=cfg.replicates,
        seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# Verification


@dataclass(frozen=True)
class CheckResult:
    """One verification row: nonnegative margin means the check held."""

    name: str
    passed: bool
    margin: float
    detail: str


def _entrywise_margin(diff, se, atol: float) -> float:
    # 1 - max |diff| / (4 se + atol); positive when every entry sits inside
    # four standard errors
    ratio = np.abs(diff) / (4.0 * np.asarray(se) + atol)
    return float(1.0 - ratio.max())


def run_verification(cfg: ExperimentConfig, *, workers: int = 1) -> list[CheckResult]:
    """Check the closed-form identities, order relations, solver residuals,
    and Monte-Carlo agreements implied by one experiment's model.

    Requires a model with closed-form moments.  Monte-Carlo checks use fixed
    offsets of the config seed and four-standard-error slack, so a pass is
    reproducible and a failure means a real discrepancy at that seed.
    """
    spec = cfg.distribution
    m = exact_moments(spec)
    gamma = cfg.gamma
    op = FourthMomentOperator.from_spec(spec)
    h, sigma = m.H, m.Sigma
    d = m.d
    eye = np.eye(d)
    sig_scale = float(np.linalg.norm(sigma, "fro"))
    noiseless = sig_scale == 0.0
    results: list[CheckResult] = []

    def run(name, fn):
        try:
            results.append(fn())
        except TailSgdError as exc:
            results.append(CheckResult(name, False, float("-inf"), f"raised {exc!r}"))

    def c_spd_moments():
        s_evals = np.linalg.eigvalsh(sigma)
        ok = m.mu > 0.0 and s_evals[0] >= -1e-10 * max(s_evals[-1], 1.0)
        return CheckResult("spd-moments", ok, m.mu,
                           f"mu={m.mu:.6e} sigma_eig_min={s_evals[0]:.6e}")
    run("spd-moments", c_spd_moments)

    f4 = op.apply(eye)

    def c_fourth_dominated():
        gap = float(np.linalg.eigvalsh(m.R2 * h - f4)[0])
        tight = not psd_order_leq(f4, 0.99 * m.R2 * h, tol=0.0)
        ok = gap >= -1e-10 * m.R2 * float(np.linalg.eigvalsh(h)[-1]) and tight
        return CheckResult("fourth-moment-dominated", ok, gap,
                           f"R2={m.R2:.6e} slack_eig={gap:.3e} tight_at_0.99={tight}")
    run("fourth-moment-dominated", c_fourth_dominated)

    def c_trace_vs_r2():
        margin = m.R2 - float(np.trace(h))
        return CheckResult("trace-vs-r2", margin >= -1e-12 * m.R2, margin,
                           f"R2={m.R2:.6e} trace_H={float(np.trace(h)):.6e}")
    run("trace-vs-r2", c_trace_vs_r2)

    def c_fourth_sampled():
        mc = FourthMomentOperator.monte_carlo(spec, 200_000, (cfg.seed, 901))
        mean, se = mc.apply_with_stderr(h)
        margin = _entrywise_margin(mean - op.apply(h), se, 1e-12 * (1.0 + m.R2))
        return CheckResult("fourth-moment-sampled", margin >= 0.0, margin,
                           "closed form within 4 standard errors of 200000 draws")
    run("fourth-moment-sampled", c_fourth_sampled)

    def c_noise_mean_zero():
        n = 100_000
        x, y = SampleStream(spec, (cfg.seed, 902)).draw(n)
        noise = -(y - x @ m.w_star)[:, None] * x
        norm = float(np.linalg.norm(noise.mean(axis=0)))
        cap = 4.0 * math.sqrt(float(np.trace(sigma)) / n) + 1e-12
        return CheckResult("noise-mean-zero", norm <= cap, cap - norm,
                           f"|mean|={norm:.3e} cap={cap:.3e}")
    run("noise-mean-zero", c_noise_mean_zero)

    def c_sigma2_quadratic():
        n = 200_000
        x, y = SampleStream(spec, (cfg.seed, 903)).draw(n)
        q = 0.5 * (y - x @ m.w_star) ** 2 * np.einsum("ni,ij,nj->n", x, np.linalg.inv(h), x)
        est, se = float(q.mean()), float(q.std(ddof=1) / math.sqrt(n))
        target = sigma2_mle(m)
        cap = 4.0 * se + 1e-12
        return CheckResult("sigma2-mle-quadratic-form", abs(est - target) <= cap,
                           cap - abs(est - target),
                           f"quadratic-form mean {est:.6e} vs half-trace {target:.6e}")
    run("sigma2-mle-quadratic-form", c_sigma2_quadratic)

    sol_fp = solve_stationary_fixed_point(h, op, sigma, gamma)
    sol_dir = solve_stationary_direct(h, op, sigma, gamma)

    def c_resid(name, sol):
        cap = 1e-8 * gamma * sig_scale + 1e-300
        return CheckResult(name, sol.residual <= cap, cap - sol.residual,
                           f"residual={sol.residual:.3e} cap={cap:.3e}")
    run("stationary-residual-fixed-point", lambda: c_resid("stationary-residual-fixed-point", sol_fp))
    run("stationary-residual-direct", lambda: c_resid("stationary-residual-direct", sol_dir))

    def c_agreement():
        diff = float(np.linalg.norm(sol_fp.cov - sol_dir.cov, "fro"))
        cap = 1e-8 * max(float(np.linalg.norm(sol_dir.cov, "fro")), 1e-300)
        return CheckResult("stationary-agreement", diff <= cap, cap - diff,
                           f"|fp-direct|_F={diff:.3e}")
    run("stationary-agreement", c_agreement)

    def c_monotone():
        c = np.zeros((d, d))
        worst = math.inf
        for _ in range(300):
            nxt = covariance_step(c, h, op, sigma, gamma)
            gap = float(np.linalg.eigvalsh(nxt - c)[0])
            worst = min(worst, gap / max(1.0, float(np.linalg.norm(nxt, "fro"))))
            c = nxt
        return CheckResult("covariance-monotone", worst >= -1e-12, worst,
                           "iterates increase in the semidefinite order")
    run("covariance-monotone", c_monotone)

    def c_trace_cap():
        cap = gamma * float(np.trace(sigma)) / m.mu
        c = np.zeros((d, d))
        worst = -math.inf
        for _ in range(300):
            c = covariance_step(c, h, op, sigma, gamma)
            worst = max(worst, float(np.trace(c)))
        worst = max(worst, float(np.trace(sol_fp.cov)))
        ok = worst <= cap * (1.0 + 1e-12) + 1e-300
        return CheckResult("covariance-trace-cap", ok, cap - worst,
                           f"max trace {worst:.6e} vs gamma Tr(Sigma)/mu = {cap:.6e}")
    run("covariance-trace-cap", c_trace_cap)

    def c_spectral_cap():
        cap = crude_bound(sigma, h, gamma, m.R2)
        lam = float(np.linalg.eigvalsh(sol_dir.cov)[-1])
        return CheckResult("stationary-spectral-cap", lam <= cap + 1e-10 * (1.0 + cap),
                           cap - lam, f"lambda_max={lam:.6e} cap={cap:.6e}")
    run("stationary-spectral-cap", c_spectral_cap)

    def c_trace_refined():
        cap = refined_trace_bound(sigma, h, gamma, m.R2)
        tr = float(np.trace(sol_dir.cov))
        return CheckResult("stationary-trace-refined", tr <= cap + 1e-10 * (1.0 + cap),
                           cap - tr, f"trace={tr:.6e} cap={cap:.6e}")
    run("stationary-trace-refined", c_trace_refined)

    def c_variance_identity():
        window = cfg.T - cfg.t
        rc = rate_constants(m, gamma)
        via_trace = refined_trace_bound(sigma, h, gamma, m.R2) / (gamma * window)
        direct = variance_term(gamma, m.R2, rc.rho, rc.sigma2, window)
        diff = abs(via_trace - direct)
        cap = 1e-12 * max(direct, 1e-300)
        return CheckResult("variance-term-identity", diff <= cap, cap - diff,
                           f"trace route {via_trace!r} vs direct {direct!r}")
    run("variance-term-identity", c_variance_identity)

    def c_damped_inverse():
        probe = h if noiseless else sigma
        a = operator_matrix(lambda mm: damped_anticommutator(mm, h, gamma), d)
        direct = vec_to_sym(np.linalg.solve(a, sym_to_vec(probe)))
        shrink = eye - gamma * h
        rate = float(np.linalg.eigvalsh(shrink)[-1]) ** 2
        k = min(int(math.ceil(math.log(1e-12) / math.log(rate))) + 1, 60_000)
        series = np.zeros((d, d))
        term = gamma * probe
        for _ in range(k):
            series += term
            term = shrink @ term @ shrink
        envelope = (float(np.linalg.norm(probe, "fro")) * gamma * rate ** k / (1.0 - rate)
                    + 1e-10 * (1.0 + float(np.linalg.norm(direct, "fro"))))
        diff = float(np.linalg.norm(series - direct, "fro"))
        return CheckResult("damped-drift-inverse", diff <= envelope, envelope - diff,
                           f"{k}-term series vs linear solve, diff={diff:.3e}")
    run("damped-drift-inverse", c_damped_inverse)

    def c_mean_recursion():
        t_star, reps = 30, 2000
        run_cfg = SgdConfig(gamma=gamma, w0=cfg.w0, t_avg_start=0, T=t_star + 1)
        seeds = [replicate_seed(cfg.seed, 904, i) for i in range(reps)]
        res = run_replicates(spec, run_cfg, seeds, moments=m,
                             snapshot_steps=(t_star,))
        w_t = res.snapshots[0]
        theory = np.linalg.matrix_power(eye - gamma * h, t_star) @ (cfg.w0 - m.w_star)
        se = w_t.std(axis=0, ddof=1) / math.sqrt(reps)
        margin = _entrywise_margin(w_t.mean(axis=0) - m.w_star - theory, se, 1e-12)
        return CheckResult("mean-recursion", margin >= 0.0, margin,
                           f"E[w_t] - w* matches (I - gamma H)^{t_star} (w0 - w*)")
    run("mean-recursion", c_mean_recursion)

    def c_bias_decay():
        reps = 1000
        ts = [t for t in (10, 100) if t <= cfg.T] or [cfg.T]
        run_cfg = SgdConfig(gamma=gamma, w0=cfg.w0, t_avg_start=0, T=max(ts) + 1)
        seeds = [replicate_seed(cfg.seed, 905, i) for i in range(reps)]
        res = run_replicates(spec, run_cfg, seeds, process="bias", moments=m,
                             snapshot_steps=ts)
        d0 = float(np.sum((cfg.w0 - m.w_star) ** 2))
        worst, details = math.inf, []
        for k, t in enumerate(res.snapshot_steps):
            sq = np.sum((res.snapshots[k] - m.w_star) ** 2, axis=1)
            mean = float(sq.mean())
            se = float(sq.std(ddof=1) / math.sqrt(reps))
            cap = math.exp(-gamma * m.mu * t) * d0 + 4.0 * se + 1e-12
            worst = min(worst, cap - mean)
            details.append(f"t={t}: {mean:.3e} <= {cap:.3e}")
        return CheckResult("bias-decay", worst >= 0.0, worst, "; ".join(details))
    run("bias-decay", c_bias_decay)

    report = run_experiment(cfg, workers=workers)

    def c_bound_holds():
        margin = report.bound.total - report.ci_low
        return CheckResult("risk-bound-holds", margin >= 0.0, margin,
                           f"emp={report.emp_risk:.6e} (se {report.stderr:.2e}) "
                           f"bound={report.bound.total:.6e}")
    run("risk-bound-holds", c_bound_holds)

    def c_split():
        combined = (math.sqrt(report.bias_risk) + math.sqrt(report.var_risk)) ** 2
        slack = 4.0 * (report.stderr + report.bias_stderr + report.var_stderr) + 1e-12
        margin = combined + slack - report.emp_risk
        return CheckResult("bias-variance-split", margin >= 0.0, margin,
                           f"total {report.emp_risk:.6e} vs split {combined:.6e}")
    run("bias-variance-split", c_split)

    def c_rho():
        if noiseless:
            return CheckResult("rho-at-least-one", True, 0.0, "skipped: noiseless model")
        rho = report.constants.rho
        return CheckResult("rho-at-least-one", rho >= 1.0 - 1e-12, rho - 1.0,
                           f"rho={rho!r}")
    run("rho-at-least-one", c_rho)

    def c_efficiency():
        if noiseless or report.bound.bias > 0.1 * report.bound.variance:
            return CheckResult("efficiency-window", True, 0.0,
                               "skipped: not variance-dominated")
        margin = min(report.eff_ratio - 0.5, 2.0 - report.eff_ratio)
        return CheckResult("efficiency-window", margin >= 0.0, margin,
                           f"eff_ratio={report.eff_ratio:.4f} window [0.5, 2.0]")
    run("efficiency-window", c_efficiency)

    return results


# ---------------------------------------------------------------------------
# Sweeps

_SWEEP_KEYS = {
    "d", "families", "gamma_rules", "T", "gamma", "t_rule",
    "noise_sigma", "replicates", "seed",
}

FAMILIES = ("well_specified", "misspecified")


@dataclass(frozen=True)
class SweepConfig:
    """Cross product of dimensions, model families, stepsize rules, and
    horizons; every cell shares the replication and seeding policy."""

    d_values: tuple[int, ...]
    families: tuple[str, ...]
    gamma_rules: tuple[str, ...]
    T_values: tuple[int, ...]
    gamma: float | None = None
    t_rule: str = "half_T"
    noise_sigma: float = 1.0
    replicates: int = 100
    seed: int = 0

    def __post_init__(self):
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError("families", f"expected members of {FAMILIES}, got {fam!r}")
        for rule in self.gamma_rules:
            if rule not in GAMMA_RULES:
                raise ConfigError("gamma_rules", f"expected members of {GAMMA_RULES}, got {rule!r}")
            if rule == "explicit" and self.gamma is None:
                raise ConfigError("gamma", "required when gamma_rules contains explicit")
        if not (self.d_values and self.families and self.gamma_rules and self.T_values):
            raise ConfigError("config", "every sweep axis needs at least one value")


def parse_sweep_config(text: str) -> SweepConfig:
    """Parse a JSON sweep document (keys d, families, gamma_rules, T, plus
    the scalar policy fields)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config", f"expected an object, got {type(doc).__name__}")
    unknown = set(doc) - _SWEEP_KEYS
    if unknown:
        raise ConfigError("config", f"unknown keys {sorted(unknown)}")

    def axis(key, default):
        v = doc.get(key, default)
        if not isinstance(v, list) or not v:
            raise ConfigError(key, "expected a non-empty list")
        return tuple(v)

    return SweepConfig(
        d_values=axis("d", [1, 3, 10]),
        families=axis("families", list(FAMILIES)),
        gamma_rules=axis("gamma_rules", ["half_inv_R2", "half_inv_rho_R2"]),
        T_values=axis("T", [1000, 10000]),
        gamma=doc.get("gamma"),
        t_rule=doc.get("t_rule", "half_T"),
        noise_sigma=float(doc.get("noise_sigma", 1.0)),
        replicates=int(doc.get("replicates", 100)),
        seed=int(doc.get("seed", 0)),
    )


def default_sweep_config() -> SweepConfig:
    """Desk-scale default grid: both families, both derived stepsize rules."""
    return SweepConfig(
        d_values=(1, 3, 10),
        families=FAMILIES,
        gamma_rules=("half_inv_R2", "half_inv_rho_R2"),
        T_values=(1000, 10000),
        replicates=200,
    )


def family_distribution(family: str, d: int, noise_sigma: float) -> dict:
    """Concrete model for one sweep family: identity covariance for the
    well-specified family, geometrically decaying spectrum for the
    misspecified one; both aim at w* = ones / sqrt(d)."""
    w_star = list(np.ones(d) / math.sqrt(d))
    if family == "well_specified":
        return {"kind": GAUSSIAN_WELL_SPECIFIED, "d": d, "H_spec": "identity",
                "w_star": w_star, "noise_sigma": noise_sigma}
    if family == "misspecified":
        return {"kind": GAUSSIAN_MISSPECIFIED, "d": d,
                "H_spec": {"diag": [2.0 ** -j for j in range(d)]},
                "w_star": w_star, "noise_sigma": noise_sigma,
                "misspec_fn": "norm_x"}
    raise ConfigError("families", f"unknown family {family!r}")


def sweep(sweep_cfg: SweepConfig, *, workers: int = 1) -> list[dict]:
    """Run every cell of the grid; failed cells record the error message in
    their row and the sweep continues."""
    rows = []
    cells = itertools.product(sweep_cfg.d_values, sweep_cfg.families,
                              sweep_cfg.gamma_rules, sweep_cfg.T_values)
    for cell_id, (d, family, rule, big_t) in enumerate(cells):
        row = dict.fromkeys(SWEEP_COLUMNS, "")
        row.update(cell_id=cell_id, d=d, T=big_t, replicates=sweep_cfg.replicates,
                   seed=sweep_cfg.seed, error="")
        try:
            doc = {
                "distribution": family_distribution(family, d, sweep_cfg.noise_sigma),
                "gamma_rule": rule,
                "t_rule": sweep_cfg.t_rule,
                "T": big_t,
                "replicates": sweep_cfg.replicates,
                "seed": sweep_cfg.seed,
            }
            if rule == "explicit":
                doc["gamma"] = sweep_cfg.gamma
            cfg = config_from_dict(doc)
            report = run_experiment(cfg, workers=workers, cell=cell_id)
            row.update(
                gamma=cfg.gamma,
                rho=report.constants.rho,
                t=cfg.t,
                emp_risk=report.emp_risk,
                stderr=report.stderr,
                bound=report.bound.total,
                bias_bound=report.bound.bias,
                var_bound=report.bound.variance,
                eff_ratio=report.eff_ratio,
            )
        except TailSgdError as exc:
            row["error"] = str(exc)
        rows.append(row)
    return rows


def sweep_csv(rows: list[dict]) -> str:
    """Render sweep rows as CSV; floats print via repr so equal runs give
    byte-identical files."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([str(row[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()
