import numpy as np
import pytest

from helpers import gaussian_spec
from tailsgd.distributions import (
    DistributionSpec,
    Moments,
    SampleStream,
    SupportAtom,
    estimate_moments,
    exact_moments,
    weighted_fourth_moment,
)
from tailsgd.errors import (
    DimensionError,
    IntractableMomentsError,
    NotSpdError,
    SingularMomentsError,
)


def two_point_spec(y_std=0.0):
    atoms = (
        SupportAtom(x=[1.0, 0.0], y_mean=0.0, y_std=y_std, prob=0.5),
        SupportAtom(x=[0.0, 1.0], y_mean=0.0, y_std=y_std, prob=0.5),
    )
    return DistributionSpec(kind="discrete", d=2, support=atoms)


def test_point_mass_stream_is_constant():
    spec = DistributionSpec(
        kind="discrete", d=1,
        support=(SupportAtom(x=[2.0], y_mean=3.0, y_std=0.0, prob=1.0),),
    )
    x, y = SampleStream(spec, 0).draw(50)
    assert np.all(x == 2.0) and np.all(y == 3.0)
    assert spec.w_star == pytest.approx([1.5])  # argmin of E(y - wx)^2 = 3/2


def test_noiseless_gaussian_labels_are_exact():
    spec = gaussian_spec(3, sigma=0.0)
    x, y = SampleStream(spec, 11).draw(200)
    assert np.array_equal(y, x @ spec.w_star)


def test_gradient_noise_mean_vanishes():
    spec = gaussian_spec(3, sigma=1.0)
    n = 100_000
    x, y = SampleStream(spec, 5).draw(n)
    noise = -(y - x @ spec.w_star)[:, None] * x
    m = exact_moments(spec)
    # mean has covariance Sigma / n
    cap = 4.0 * np.sqrt(np.trace(m.Sigma) / n)
    assert np.linalg.norm(noise.mean(axis=0)) < cap


def test_exact_moments_gaussian_identity():
    m = exact_moments(gaussian_spec(3, sigma=2.0))
    assert np.allclose(m.H, np.eye(3))
    assert np.allclose(m.Sigma, 4.0 * np.eye(3))
    assert m.mu == pytest.approx(1.0, abs=1e-10)
    assert m.R2 == pytest.approx(5.0, rel=1e-12)  # Tr(H) + 2 lambda_max
    assert m.exact and m.n_samples is None


def test_exact_moments_misspecified_closed_form():
    h = np.diag([1.0, 0.5])
    m = exact_moments(gaussian_spec(2, h=h, sigma=0.5, kind="gaussian_misspecified"))
    expected = 0.25 * (np.trace(h) * h + 2.0 * h @ h)
    assert np.allclose(m.Sigma, expected, atol=1e-14)
    assert m.R2 == pytest.approx(np.trace(h) + 2.0, rel=1e-12)


def test_misspecified_sigma_matches_sampled_residuals():
    spec = gaussian_spec(2, h=np.diag([1.0, 0.5]), sigma=0.5,
                         kind="gaussian_misspecified")
    m = exact_moments(spec)
    n = 200_000
    x, y = SampleStream(spec, 17).draw(n)
    r2 = (y - x @ spec.w_star) ** 2
    terms = r2[:, None, None] * np.einsum("ni,nj->nij", x, x)
    mean = terms.mean(axis=0)
    se = terms.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(mean - m.Sigma) <= 4.0 * se + 1e-12)


def test_weighted_fourth_moment_gaussian_vs_sampled():
    spec = gaussian_spec(3, h=np.diag([2.0, 1.0, 0.5]), sigma=0.0)
    f = weighted_fourth_moment(spec)
    n = 200_000
    x, _ = SampleStream(spec, 23).draw(n)
    terms = np.einsum("n,ni,nj->nij", np.einsum("ni,ni->n", x, x), x, x)
    mean = terms.mean(axis=0)
    se = terms.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(np.abs(mean - f) <= 4.0 * se)


def test_two_point_design_moments():
    m = exact_moments(two_point_spec(y_std=0.0))
    assert np.allclose(m.H, 0.5 * np.eye(2))
    assert np.allclose(m.Sigma, np.zeros((2, 2)))
    assert m.mu == pytest.approx(0.5)
    assert m.R2 == pytest.approx(1.0, rel=1e-12)
    noisy = exact_moments(two_point_spec(y_std=1.0))
    assert np.allclose(noisy.Sigma, 0.5 * np.eye(2))


def test_discrete_argmin_and_conflicting_w_star():
    atoms = (SupportAtom(x=[1.0], y_mean=2.0, y_std=0.0, prob=1.0),)
    spec = DistributionSpec(kind="discrete", d=1, support=atoms)
    assert spec.w_star == pytest.approx([2.0])
    DistributionSpec(kind="discrete", d=1, support=atoms, w_star=[2.0])
    with pytest.raises(ValueError):
        DistributionSpec(kind="discrete", d=1, support=atoms, w_star=[1.0])


def test_non_spanning_support_rejected():
    atoms = (SupportAtom(x=[1.0, 0.0], y_mean=0.0, y_std=1.0, prob=1.0),)
    with pytest.raises(SingularMomentsError):
        DistributionSpec(kind="discrete", d=2, support=atoms)


def test_spec_validation_errors():
    with pytest.raises(ValueError):
        DistributionSpec(kind="nope", d=1)
    with pytest.raises(ValueError):
        gaussian_spec(2, sigma=-1.0)
    with pytest.raises(NotSpdError):
        gaussian_spec(2, h=[[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(DimensionError):
        gaussian_spec(2, w_star=[1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        DistributionSpec(kind="gaussian_misspecified", d=1, H_spec=[[1.0]],
                         misspec_fn="unknown")
    bad = (SupportAtom(x=[1.0], y_mean=0.0, y_std=0.0, prob=0.5),)
    with pytest.raises(ValueError):
        DistributionSpec(kind="discrete", d=1, support=bad)  # probs sum to 0.5


def test_one_plus_norm_x_has_no_closed_form():
    spec = gaussian_spec(2, sigma=1.0, kind="gaussian_misspecified",
                         misspec_fn="one_plus_norm_x")
    with pytest.raises(IntractableMomentsError):
        exact_moments(spec)
    m = estimate_moments(spec, 50_000, 3)
    assert not m.exact and m.n_samples == 50_000
    assert np.linalg.norm(m.H - np.eye(2)) < 0.05
    # Var(y|x) = (1 + ||x||)^2 >= ||x||^2, so Sigma dominates the norm_x model's
    tractable = exact_moments(gaussian_spec(2, sigma=1.0, kind="gaussian_misspecified"))
    assert np.trace(m.Sigma) > np.trace(tractable.Sigma)


def test_estimate_moments_converges_with_n():
    spec = gaussian_spec(3, sigma=1.0)
    exact = exact_moments(spec)
    errs = []
    for n in (1000, 10_000, 100_000):
        m = estimate_moments(spec, n, 9)
        errs.append(np.linalg.norm(m.H - exact.H) + np.linalg.norm(m.Sigma - exact.Sigma)
                    + abs(m.R2 - exact.R2))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 0.15


def test_estimate_moments_degenerate_draws():
    atoms = (
        SupportAtom(x=[1.0, 0.0], y_mean=0.0, y_std=1.0, prob=0.999),
        SupportAtom(x=[0.0, 1.0], y_mean=0.0, y_std=1.0, prob=0.001),
    )
    spec = DistributionSpec(kind="discrete", d=2, support=atoms)
    with pytest.raises(SingularMomentsError):
        estimate_moments(spec, 3, 0)
    with pytest.raises(ValueError):
        estimate_moments(spec, 1, 0)  # n < d


def test_streams_reproducible_and_independent():
    spec = gaussian_spec(2, sigma=1.0)
    x1, y1 = SampleStream(spec, 42).draw(100)
    x2, y2 = SampleStream(spec, 42).draw(100)
    assert np.array_equal(x1, x2) and np.array_equal(y1, y2)
    x3, _ = SampleStream(spec, 42, key=(1,)).draw(100)
    assert not np.array_equal(x1, x3)
    assert np.array_equal(x1, SampleStream(spec, (42,)).draw(100)[0])


def test_gaussian_draws_split_invariant():
    spec = gaussian_spec(3, sigma=0.5)
    whole_x, whole_y = SampleStream(spec, 7).draw(100)
    s = SampleStream(spec, 7)
    ax, ay = s.draw(60)
    bx, by = s.draw(40)
    assert np.array_equal(whole_x, np.vstack([ax, bx]))
    assert np.array_equal(whole_y, np.concatenate([ay, by]))
    assert s.count == 100


def test_moments_validation():
    with pytest.raises(NotSpdError):
        Moments(H=np.eye(2), Sigma=np.diag([1.0, -1.0]), w_star=np.zeros(2),
                R2=4.0, exact=True)
    with pytest.raises(DimensionError):
        Moments(H=np.eye(2), Sigma=np.eye(3), w_star=np.zeros(2), R2=4.0, exact=True)
    m = Moments(H=np.diag([2.0, 1.0]), Sigma=np.eye(2), w_star=np.zeros(2),
                R2=6.0, exact=True)
    assert m.mu == pytest.approx(1.0) and m.d == 2
