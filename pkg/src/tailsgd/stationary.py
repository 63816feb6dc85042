"""Iterate-covariance dynamics of constant-stepsize SGD and their fixed point.

Writing C_t for the second moment of w_t - w* under the variance process,
one SGD step maps

    C_{t+1} = C_t - gamma (H C_t + C_t H)
              + gamma^2 E[(x^T C_t x) x x^T] + gamma^2 Sigma.

The quartic term is the fourth-moment operator M -> E[(x^T M x) x x^T],
available in closed form for Gaussian and discrete designs and by sample
average otherwise.  The fixed point C of the recursion solves

    H C + C H = gamma * (E[(x^T C x) x x^T] + Sigma),

which this module solves both by iterating the recursion and by linear
algebra in the flattened symmetric basis of ``matcore``.  Two a-priori
bounds on the fixed point (a spectral-norm cap and a sharper trace cap) are
provided alongside.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import DISCRETE, DistributionSpec, SampleStream
from .errors import (
    ConvergenceError,
    DimensionError,
    IndefiniteSolutionError,
    SingularSystemError,
    StepSizeError,
)
from .matcore import matrix_norm_under, spd, sym, sym_to_vec, sym_vec_len, vec_to_sym


class FourthMomentOperator:
    """The linear map M -> E[(x^T M x) x x^T] on symmetric matrices.

    Backings: ``gaussian`` (x ~ N(0, H), closed form 2 H M H + Tr(M H) H),
    ``discrete`` (finite support, exact weighted sum), and ``monte_carlo``
    (sample average over n stored draws).  The map is self-adjoint in the
    trace inner product and preserves the semidefinite order.
    """

    def __init__(self, kind: str, *, h=None, xs=None, probs=None, exact: bool):
        self.kind = kind
        self.exact = exact
        self._h = h
        self._xs = xs
        self._probs = probs

    @classmethod
    def gaussian(cls, h) -> "FourthMomentOperator":
        return cls("gaussian", h=spd(h), exact=True)

    @classmethod
    def discrete(cls, xs, probs) -> "FourthMomentOperator":
        xa = np.asarray(xs, dtype=float)
        pa = np.asarray(probs, dtype=float)
        if xa.ndim != 2 or pa.shape != (xa.shape[0],):
            raise DimensionError(
                f"expected xs (k, d) with matching probs (k,), got {xa.shape} and {pa.shape}"
            )
        if np.any(pa < 0.0) or abs(pa.sum() - 1.0) > 1e-12:
            raise ValueError("probs must be nonnegative and sum to 1")
        return cls("discrete", xs=xa, probs=pa, exact=True)

    @classmethod
    def monte_carlo(cls, spec: DistributionSpec, n: int, seed) -> "FourthMomentOperator":
        """Backing from n covariate draws of a model (labels are discarded)."""
        if n < 1:
            raise ValueError(f"need at least one sample, got {n}")
        x, _ = SampleStream(spec, seed).draw(n)
        return cls("monte_carlo", xs=x, probs=np.full(n, 1.0 / n), exact=False)

    @classmethod
    def from_spec(cls, spec: DistributionSpec) -> "FourthMomentOperator":
        """Exact backing for a model's covariate distribution.  Available for
        every kind: the Gaussian families share the same x marginal."""
        if spec.kind == DISCRETE:
            xs = np.stack([a.x for a in spec.support])
            probs = np.array([a.prob for a in spec.support])
            return cls.discrete(xs, probs)
        return cls.gaussian(spec.H_spec)

    @property
    def d(self) -> int:
        return self._h.shape[0] if self._h is not None else self._xs.shape[1]

    def apply(self, m) -> np.ndarray:
        """E[(x^T M x) x x^T] under the backing distribution."""
        mm = sym(m)
        if mm.shape[0] != self.d:
            raise DimensionError(f"matrix has shape {mm.shape}, expected ({self.d}, {self.d})")
        if self.kind == "gaussian":
            hm = self._h @ mm
            return sym(2.0 * (hm @ self._h) + np.trace(hm) * self._h)
        q = self._probs * np.einsum("ki,ij,kj->k", self._xs, mm, self._xs)
        return sym(np.einsum("k,ki,kj->ij", q, self._xs, self._xs))

    def apply_with_stderr(self, m):
        """Monte-Carlo mean and entrywise standard error of (x^T M x) x x^T.

        Only meaningful for the monte_carlo backing.
        """
        if self.kind != "monte_carlo":
            raise ValueError("standard errors only exist for the monte_carlo backing")
        mm = sym(m)
        n = self._xs.shape[0]
        q = np.einsum("ki,ij,kj->k", self._xs, mm, self._xs)
        mean = sym(np.einsum("k,ki,kj->ij", q, self._xs, self._xs) / n)
        p = self._xs ** 2
        m2 = np.einsum("k,ki,kj->ij", q * q, p, p) / n
        var = np.maximum(m2 - mean ** 2, 0.0)
        return mean, np.sqrt(var / n)

    def r_squared_under(self, h) -> float:
        """Smallest c with E[||x||^2 x x^T] <= c * H for the given SPD H."""
        return matrix_norm_under(self.apply(np.eye(self.d)), h)


def anticommutator(m, h) -> np.ndarray:
    """H M + M H for symmetric M and H."""
    mm = sym(m)
    hh = sym(h)
    if mm.shape != hh.shape:
        raise DimensionError(f"shape mismatch: {mm.shape} vs {hh.shape}")
    hm = hh @ mm
    return hm + hm.T


def damped_anticommutator(m, h, gamma: float) -> np.ndarray:
    """H M + M H - gamma H M H, the drift operator of the covariance
    recursion after factoring out one stepsize."""
    mm = sym(m)
    hh = sym(h)
    if mm.shape != hh.shape:
        raise DimensionError(f"shape mismatch: {mm.shape} vs {hh.shape}")
    hm = hh @ mm
    return hm + hm.T - gamma * (hm @ hh)


def covariance_step(c, h, s_op: FourthMomentOperator, sigma, gamma: float) -> np.ndarray:
    """One application of the covariance recursion."""
    cc = sym(c)
    return sym(cc - gamma * anticommutator(cc, h)
               + gamma ** 2 * (s_op.apply(cc) + sym(sigma)))


def stationary_residual(c, h, s_op: FourthMomentOperator, sigma, gamma: float) -> float:
    """Frobenius norm of the fixed-point equation defect
    || (HC + CH) - gamma (S(C) + Sigma) ||_F."""
    lhs = anticommutator(c, h)
    rhs = gamma * (s_op.apply(c) + sym(sigma))
    return float(np.linalg.norm(lhs - rhs, "fro"))


@dataclass(frozen=True)
class StationarySolution:
    """Fixed point of the covariance recursion plus solve diagnostics.

    ``residual`` is the recomputed equation defect of the returned matrix;
    ``iterations`` is set by the fixed-point solver, ``condition`` by the
    direct solver.  ``exact`` mirrors the operator backing.
    """

    cov: np.ndarray
    method: str
    residual: float
    exact: bool
    iterations: int | None = None
    condition: float | None = None


def _gate(gamma: float, h, s_op: FourthMomentOperator) -> tuple[np.ndarray, float]:
    hh = spd(h)
    if hh.shape[0] != s_op.d:
        raise DimensionError(f"H has shape {hh.shape}, operator dimension is {s_op.d}")
    if gamma <= 0.0:
        raise StepSizeError(f"stepsize must be positive, got {gamma}")
    r2 = s_op.r_squared_under(hh)
    if gamma >= 1.0 / r2:
        raise StepSizeError(
            f"gamma={gamma!r} is not below 1/R^2={1.0 / r2!r} for this backing"
        )
    return hh, r2


def ensure_psd_solution(c, tol: float = 1e-10) -> np.ndarray:
    """Clip negligible negative eigenvalues; reject genuinely indefinite C.

    The rejection threshold is -tol * max(1, largest |eigenvalue|).
    """
    cc = sym(c)
    evals, vecs = np.linalg.eigh(cc)
    floor = -tol * max(1.0, float(np.max(np.abs(evals))))
    if evals[0] < floor:
        raise IndefiniteSolutionError(
            f"solution has eigenvalue {evals[0]:.6e} below threshold {floor:.6e}"
        )
    if evals[0] < 0.0:
        cc = sym((vecs * np.maximum(evals, 0.0)) @ vecs.T)
    return cc


def solve_stationary_fixed_point(h, s_op: FourthMomentOperator, sigma, gamma: float, *,
                                 tol: float = 1e-11, resid_rtol: float = 1e-8,
                                 max_iter: int = 1_000_000) -> StationarySolution:
    """Solve the fixed-point equation by iterating the covariance recursion
    from C = 0.

    Stops when a computable bound on the distance to the fixed point falls
    below ``tol`` relative to the current matrix and the implied equation
    defect is below ``resid_rtol * gamma * ||Sigma||_F``; raises
    ConvergenceError if the budget runs out or the iteration leaves the
    space of finite matrices.
    """
    hh, r2 = _gate(gamma, h, s_op)
    mu = float(np.linalg.eigvalsh(hh)[0])
    # the defect map L(M) = HM + MH - gamma S(M) satisfies
    # <L(M), M> >= mu (2 - gamma R^2) ||M||_F^2, and the defect of the
    # current iterate is exactly delta / gamma, so the distance to the
    # fixed point is at most delta * err_scale
    err_scale = 1.0 / (gamma * mu * (2.0 - gamma * r2))
    ss = sym(sigma)
    c = np.zeros_like(hh)
    resid_cap = 0.5 * resid_rtol * gamma * float(np.linalg.norm(ss, "fro"))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        nxt = covariance_step(c, hh, s_op, ss, gamma)
        delta = float(np.linalg.norm(nxt - c, "fro"))
        if not np.isfinite(delta):
            raise ConvergenceError(
                f"iteration diverged after {iterations} steps (gamma too large "
                "for this backing?)"
            )
        c = nxt
        # delta / gamma bounds the defect of the previous iterate; the
        # returned one is strictly better, hence the 0.5 safety inside resid_cap
        if (delta * err_scale <= tol * np.linalg.norm(c, "fro")
                and delta <= resid_cap * gamma):
            break
    else:
        raise ConvergenceError(f"no convergence within {max_iter} iterations")
    c = ensure_psd_solution(c)
    return StationarySolution(
        cov=c,
        method="fixed-point",
        residual=stationary_residual(c, hh, s_op, ss, gamma),
        exact=s_op.exact,
        iterations=iterations,
    )


def operator_matrix(apply_fn, d: int) -> np.ndarray:
    """Matrix of a linear operator on symmetric matrices in the flattened
    basis, built by applying it to each basis element."""
    n = sym_vec_len(d)
    out = np.empty((n, n))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        out[:, k] = sym_to_vec(apply_fn(vec_to_sym(e)))
    return out


def solve_stationary_direct(h, s_op: FourthMomentOperator, sigma, gamma: float, *,
                            cond_max: float = 1e14) -> StationarySolution:
    """Solve the fixed-point equation as a dense linear system in the
    flattened symmetric basis."""
    hh, _ = _gate(gamma, h, s_op)
    ss = sym(sigma)
    d = hh.shape[0]
    a = (operator_matrix(lambda m: anticommutator(m, hh), d)
         - gamma * operator_matrix(s_op.apply, d))
    cond = float(np.linalg.cond(a))
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularSystemError(f"system condition number {cond:.3e} exceeds {cond_max:.1e}")
    try:
        cvec = np.linalg.solve(a, gamma * sym_to_vec(ss))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"stationary system is singular: {exc}") from exc
    c = ensure_psd_solution(vec_to_sym(cvec))
    return StationarySolution(
        cov=c,
        method="direct",
        residual=stationary_residual(c, hh, s_op, ss, gamma),
        exact=s_op.exact,
        condition=cond,
    )


def crude_bound(sigma, h, gamma: float, r2: float) -> float:
    """Spectral cap on the stationary covariance:
    C <= [gamma ||Sigma||_H / (1 - gamma R^2)] I."""
    if not 0.0 < gamma * r2 < 1.0:
        raise StepSizeError(f"gamma R^2 must lie in (0, 1), got {gamma * r2!r}")
    return gamma * matrix_norm_under(sigma, h) / (1.0 - gamma * r2)


def refined_trace_bound(sigma, h, gamma: float, r2: float) -> float:
    """Trace cap on the stationary covariance:
    Tr(C) <= (gamma/2) Tr(H^{-1} Sigma)
             + (gamma^2 R^2 / (2 (1 - gamma R^2))) d ||Sigma||_H."""
    if not 0.0 < gamma * r2 < 1.0:
        raise StepSizeError(f"gamma R^2 must lie in (0, 1), got {gamma * r2!r}")
    hh = spd(h)
    ss = sym(sigma)
    d = hh.shape[0]
    lead = 0.5 * gamma * float(np.trace(np.linalg.solve(hh, ss)))
    tail = 0.5 * gamma ** 2 * r2 * d * matrix_norm_under(ss, hh) / (1.0 - gamma * r2)
    return lead + tail
