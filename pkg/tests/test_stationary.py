import numpy as np
import pytest

from helpers import discrete_spec, gaussian_spec, random_spd
from tailsgd.distributions import exact_moments
from tailsgd.errors import (
    ConvergenceError,
    DimensionError,
    IndefiniteSolutionError,
    SingularSystemError,
    StepSizeError,
)
from tailsgd.matcore import psd_order_leq, sym_to_vec, sym_vec_len
from tailsgd.stationary import (
    FourthMomentOperator,
    anticommutator,
    covariance_step,
    crude_bound,
    damped_anticommutator,
    ensure_psd_solution,
    operator_matrix,
    refined_trace_bound,
    solve_stationary_direct,
    solve_stationary_fixed_point,
    stationary_residual,
)


def test_gaussian_operator_identity_probe():
    for d in (1, 2, 5):
        op = FourthMomentOperator.gaussian(np.eye(d))
        assert np.allclose(op.apply(np.eye(d)), (d + 2.0) * np.eye(d), atol=1e-14)
    op = FourthMomentOperator.gaussian([[2.0]])
    assert np.allclose(op.apply([[1.0]]), [[12.0]])  # m4 of N(0, 2) is 3 * 4


def test_gaussian_operator_closed_form():
    h = np.array([[1.0, 0.3], [0.3, 2.0]])
    m = np.array([[0.5, -0.2], [-0.2, 1.0]])
    op = FourthMomentOperator.gaussian(h)
    expected = 2.0 * h @ m @ h + np.trace(m @ h) * h
    assert np.allclose(op.apply(m), expected, atol=1e-14)
    assert np.allclose(op.apply(np.zeros((2, 2))), np.zeros((2, 2)))


def test_discrete_operator_two_point():
    op = FourthMomentOperator.discrete([[1.0, 0.0], [0.0, 1.0]], [0.5, 0.5])
    m = np.array([[2.0, 7.0], [7.0, 4.0]])
    # atoms e1, e2: E[(x^T M x) x x^T] = (M_11 e1 e1^T + M_22 e2 e2^T) / 2
    assert np.allclose(op.apply(m), np.diag([1.0, 2.0]))


def test_operator_self_adjoint_and_monotone():
    g = np.random.default_rng(0)
    backings = [
        FourthMomentOperator.gaussian(random_spd(3, 1)),
        FourthMomentOperator.from_spec(discrete_spec(3, 2)),
        FourthMomentOperator.monte_carlo(gaussian_spec(3, sigma=0.0), 2000, 3),
    ]
    for op in backings:
        a = g.standard_normal((3, 3))
        a = a + a.T
        b = g.standard_normal((3, 3))
        b = b + b.T
        lhs = float(np.trace(op.apply(a) @ b))
        rhs = float(np.trace(a @ op.apply(b)))
        assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)
        p = g.standard_normal((3, 4))
        small = p @ p.T
        bigger = small + np.outer(g.standard_normal(3), np.ones(3)) * 0.0 + np.eye(3)
        assert psd_order_leq(op.apply(small), op.apply(bigger), tol=1e-10)


def test_operator_trace_identity_and_r2_cap():
    for op, h in [
        (FourthMomentOperator.gaussian(random_spd(4, 7)), random_spd(4, 7)),
        (FourthMomentOperator.from_spec(discrete_spec(4, 8)),
         exact_moments(discrete_spec(4, 8)).H),
    ]:
        g = np.random.default_rng(11)
        p = g.standard_normal((4, 5))
        m = p @ p.T
        tr = float(np.trace(op.apply(m)))
        # self-adjointness at the identity probe
        assert tr == pytest.approx(float(np.trace(m @ op.apply(np.eye(4)))), rel=1e-12)
        r2 = op.r_squared_under(h)
        assert tr <= r2 * float(np.trace(m @ h)) * (1.0 + 1e-12)


def test_monte_carlo_operator_stderr():
    spec = gaussian_spec(3, sigma=0.0)
    op = FourthMomentOperator.monte_carlo(spec, 100_000, 5)
    exact = FourthMomentOperator.gaussian(np.eye(3))
    probe = np.diag([1.0, 2.0, 3.0])
    mean, se = op.apply_with_stderr(probe)
    assert np.all(se > 0.0)
    assert np.all(np.abs(mean - exact.apply(probe)) <= 4.0 * se)
    assert np.allclose(mean, op.apply(probe), rtol=1e-12)
    with pytest.raises(ValueError):
        exact.apply_with_stderr(probe)


def test_operator_validation():
    with pytest.raises(DimensionError):
        FourthMomentOperator.gaussian(np.eye(2)).apply(np.eye(3))
    with pytest.raises(ValueError):
        FourthMomentOperator.discrete([[1.0, 0.0]], [0.5])
    with pytest.raises(DimensionError):
        FourthMomentOperator.discrete([[1.0, 0.0]], [0.5, 0.5])


def test_anticommutator_examples():
    h = np.diag([1.0, 2.0])
    m = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert np.allclose(anticommutator(m, h), [[0.0, 3.0], [3.0, 0.0]])
    assert np.allclose(damped_anticommutator(np.eye(2), h, 0.1), np.diag([1.9, 3.6]))
    with pytest.raises(DimensionError):
        anticommutator(np.eye(2), np.eye(3))


def test_operator_matrices_are_symmetric():
    # both maps are self-adjoint, so their flattened-basis matrices must be too
    h = random_spd(3, 21)
    op = FourthMomentOperator.gaussian(h)
    t_mat = operator_matrix(lambda m: anticommutator(m, h), 3)
    s_mat = operator_matrix(op.apply, 3)
    assert t_mat.shape == (sym_vec_len(3),) * 2
    assert np.allclose(t_mat, t_mat.T, atol=1e-12)
    assert np.allclose(s_mat, s_mat.T, atol=1e-12)


def test_covariance_step_base_cases():
    h = np.eye(2)
    op = FourthMomentOperator.gaussian(h)
    sigma = np.diag([1.0, 2.0])
    assert np.allclose(covariance_step(np.zeros((2, 2)), h, op, sigma, 0.1),
                       0.01 * sigma)
    assert np.allclose(covariance_step(np.zeros((2, 2)), h, op, np.zeros((2, 2)), 0.1),
                       np.zeros((2, 2)))


def test_one_dimensional_closed_form_both_solvers():
    gamma, h, sigma = 0.1, 1.0, 1.0
    op = FourthMomentOperator.gaussian([[h]])   # m4 = 3
    expected = gamma * sigma / (2.0 * h - gamma * 3.0)
    for solver in (solve_stationary_fixed_point, solve_stationary_direct):
        sol = solver([[h]], op, [[sigma]], gamma)
        assert sol.cov[0, 0] == pytest.approx(expected, rel=1e-10)
        assert sol.residual <= 1e-8 * gamma * sigma


def test_zero_noise_fixed_point_is_zero():
    h = random_spd(3, 31)
    op = FourthMomentOperator.gaussian(h)
    fp = solve_stationary_fixed_point(h, op, np.zeros((3, 3)), 0.05)
    di = solve_stationary_direct(h, op, np.zeros((3, 3)), 0.05)
    assert np.allclose(fp.cov, 0.0, atol=1e-15) and fp.iterations == 1
    assert np.allclose(di.cov, 0.0, atol=1e-12)


def test_solver_agreement_small_instance():
    spec = discrete_spec(3, 41)
    m = exact_moments(spec)
    op = FourthMomentOperator.from_spec(spec)
    gamma = 0.5 / m.R2
    fp = solve_stationary_fixed_point(m.H, op, m.Sigma, gamma)
    di = solve_stationary_direct(m.H, op, m.Sigma, gamma)
    scale = np.linalg.norm(di.cov, "fro")
    assert np.linalg.norm(fp.cov - di.cov, "fro") <= 1e-8 * scale
    assert stationary_residual(di.cov, m.H, op, m.Sigma, gamma) == di.residual
    assert fp.exact and di.exact and di.condition is not None


def test_solver_gates_and_failures():
    op = FourthMomentOperator.gaussian(np.eye(2))  # R2 = 4 under H = I
    with pytest.raises(StepSizeError):
        solve_stationary_fixed_point(np.eye(2), op, np.eye(2), 0.25)
    with pytest.raises(StepSizeError):
        solve_stationary_direct(np.eye(2), op, np.eye(2), 0.3)
    with pytest.raises(StepSizeError):
        # mismatched small H inflates R^2 for this backing and is rejected
        solve_stationary_direct(0.1 * np.eye(2), op, np.eye(2), 0.2)
    with pytest.raises(DimensionError):
        solve_stationary_direct(np.eye(3), op, np.eye(3), 0.01)
    with pytest.raises(ConvergenceError):
        solve_stationary_fixed_point(np.eye(2), op, np.eye(2), 0.2, max_iter=3)
    with pytest.raises(SingularSystemError):
        solve_stationary_direct(np.eye(2), op, np.eye(2), 0.2, cond_max=1.0)


def test_ensure_psd_solution():
    clipped = ensure_psd_solution(np.diag([1.0, -1e-14]))
    assert np.linalg.eigvalsh(clipped)[0] >= 0.0
    assert np.allclose(clipped, np.diag([1.0, 0.0]), atol=1e-13)
    with pytest.raises(IndefiniteSolutionError):
        ensure_psd_solution(np.diag([1.0, -1e-3]))


def test_crude_bound_examples():
    # 1-d: gamma ||Sigma||_H / (1 - gamma R^2)
    assert crude_bound([[2.0]], [[1.0]], 0.1, 5.0) == pytest.approx(0.4, rel=1e-12)
    assert crude_bound(np.eye(2), 2.0 * np.eye(2), 0.1, 5.0) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(StepSizeError):
        crude_bound(np.eye(2), np.eye(2), 0.25, 4.0)


def test_refined_trace_bound_examples():
    # (gamma/2) Tr(H^{-1} Sigma) + gamma^2 R^2 d ||Sigma||_H / (2 (1 - gamma R^2))
    val = refined_trace_bound([[1.0]], [[1.0]], 0.1, 3.0)
    assert val == pytest.approx(0.05 + 0.015 / 0.7, rel=1e-12)
    val2 = refined_trace_bound([[2.0]], [[1.0]], 0.1, 5.0)
    assert val2 == pytest.approx(0.1 + 0.1, rel=1e-12)
    with pytest.raises(StepSizeError):
        refined_trace_bound(np.eye(2), np.eye(2), 0.5, 2.0)
