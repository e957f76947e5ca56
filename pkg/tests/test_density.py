import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from ddlab import fixtures, oracles
from ddlab.density import GaussianMixture, fokker_planck_residual, standard_normal_family
from ddlab.errors import DomainError
from ddlab.schedule import NoiseSchedule

times = st.floats(0.0, 1.0)
points = st.floats(-5.0, 5.0)


def _marginal_fix_b(t, x):
    """FIX-B density at time t written out by hand."""
    s = NoiseSchedule()
    a2 = 1.0 / (1.0 + np.exp(-float(s.lam(t))))
    v = a2 * 0.25 + (1.0 - a2)
    a = np.sqrt(a2)
    return np.log(0.5 * norm.pdf(x, -2 * a, np.sqrt(v)) + 0.5 * norm.pdf(x, 2 * a, np.sqrt(v)))


@given(times)
def test_stationary_origin(t):
    fam = fixtures.stationary()
    assert fam.log_density(t, np.zeros(1)) == pytest.approx(-0.5 * np.log(2 * np.pi), abs=1e-14)


def test_fix_b_at_origin(fix_b):
    got = float(fix_b.log_density(0.0, np.zeros(1)))
    assert got == pytest.approx(_marginal_fix_b(0.0, 0.0), abs=1e-12)
    # t = 0 carries log-SNR 10, so the undiffused mixture is matched to O(e^-10)
    raw = np.log(0.5 * norm.pdf(0.0, -2, 0.5) + 0.5 * norm.pdf(0.0, 2, 0.5))
    assert abs(got - raw) < 2e-3


@given(times, points)
def test_fix_b_matches_hand_formula(t, x):
    fam = fixtures.fix_b()
    assert float(fam.log_density(t, np.array([x]))) == pytest.approx(_marginal_fix_b(t, x), rel=1e-10, abs=1e-10)


@given(times, points)
def test_fix_b_symmetry(t, x):
    fam = fixtures.fix_b()
    assert fam.log_density(t, np.array([x])) == pytest.approx(fam.log_density(t, np.array([-x])), abs=1e-12)
    assert fam.score(t, np.array([x]))[0] == pytest.approx(-fam.score(t, np.array([-x]))[0], abs=1e-12)


def test_fix_b_score_vanishes_at_origin(fix_b):
    for t in (0.0, 0.3, 1.0):
        assert fix_b.score(t, np.zeros(1))[0] == pytest.approx(0.0, abs=1e-15)


@given(times, st.lists(points, min_size=3, max_size=3))
def test_single_gaussian_closed_forms(t, x):
    s = NoiseSchedule()
    m, c = np.array([0.5, -1.0, 2.0]), 0.4
    fam = GaussianMixture([1.0], [m], [c])
    x = np.array(x)
    a2 = float(s.alpha_sq(t))
    v = a2 * c + (1 - a2)
    d = fam.derivatives(t, x)
    np.testing.assert_allclose(d.score, (np.sqrt(a2) * m - x) / v, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(d.hessian, -np.eye(3) / v, rtol=1e-12)
    assert d.laplacian == pytest.approx(-3 / v, rel=1e-12)
    np.testing.assert_allclose(d.grad_laplacian, 0.0, atol=1e-10)


def test_derivative_bundle_agrees_with_accessors(fix_b, gen):
    x = gen.uniform(-4, 4, (20, 1))
    d = fix_b.derivatives(0.4, x)
    np.testing.assert_array_equal(d.score, fix_b.score(0.4, x))
    np.testing.assert_allclose(d.hessian, fix_b.hessian(0.4, x), rtol=1e-15)
    np.testing.assert_allclose(d.laplacian, fix_b.laplacian(0.4, x), rtol=1e-15)
    s, lap = fix_b.score_and_laplacian(0.4, x)
    np.testing.assert_array_equal(s, d.score)
    np.testing.assert_array_equal(lap, d.laplacian)


@pytest.mark.parametrize("order", oracles.ORDERS)
def test_fix_b_finite_differences_at_one(fix_b, order):
    assert oracles.finite_diff_check(fix_b, 0.0, np.array([1.0]), order) <= 1e-6


def test_batch_shapes(gen):
    fam = fixtures.four_blobs()
    x = gen.normal(size=(3, 5, 2))
    assert fam.log_density(0.2, x).shape == (3, 5)
    assert fam.score(0.2, x).shape == (3, 5, 2)
    assert fam.hessian(0.2, x).shape == (3, 5, 2, 2)
    # per-point times broadcast against the batch
    t = np.linspace(0.1, 0.9, 5)
    np.testing.assert_allclose(fam.log_density(t, x[0]), [fam.log_density(ti, xi) for ti, xi in zip(t, x[0])])


def test_far_tail_is_finite(fix_b):
    d = fix_b.derivatives(0.0, np.array([[60.0], [-60.0]]))
    for v in d:
        assert np.all(np.isfinite(v))


@pytest.mark.parametrize(
    "args",
    [
        ([0.5, 0.6], [[0.0], [1.0]], [1.0, 1.0]),
        ([1.0], [[0.0]], [-1.0]),
        ([0.5, 0.5], [[0.0]], [1.0]),
        ([1.0], [np.zeros(9)], [1.0]),
        ([1.0], [[np.nan]], [1.0]),
    ],
)
def test_invalid_mixtures(args):
    with pytest.raises(DomainError):
        GaussianMixture(*args)


def test_renormalized_weights():
    fam = GaussianMixture.renormalized([1.0, 3.0], [[0.0], [1.0]], [1.0, 1.0])
    np.testing.assert_allclose(fam.weights, [0.25, 0.75])


def test_wrong_trailing_dimension(fix_b):
    with pytest.raises(DomainError):
        fix_b.score(0.1, np.zeros((4, 2)))


def test_degenerate_component_sample():
    fam = GaussianMixture([1.0], [[1.5]], [1e-12])
    x = fam.sample_p0(np.random.default_rng(3))
    s = fam.schedule
    z = np.random.default_rng(3)
    z.choice(1, size=1, p=[1.0])  # replay the component draw
    # the sample is alpha_0 mu plus the residual noise sigma_0 at log-SNR 10
    expected = float(s.alpha(0.0)) * 1.5 + np.sqrt(float(s.alpha_sq(0.0)) * 1e-12 + float(s.sigma_sq(0.0))) * z.standard_normal()
    assert x[0] == pytest.approx(expected, abs=1e-12)
    assert abs(x[0] - 1.5) < 6 * float(s.sigma(0.0))


def test_sample_mean_fix_b(fix_b):
    x = fix_b.sample_p0(np.random.default_rng(11), 100_000)[:, 0]
    se = x.std(ddof=1) / np.sqrt(len(x))
    assert abs(x.mean()) <= 3 * se


def test_sample_variance_at_lambda_min(fix_b):
    s = fix_b.schedule
    t = float(s.time_from_lambda(s.lambda_min))
    x = fix_b.sample_pt(t, np.random.default_rng(12), 100_000)[:, 0]
    # data variance is 2^2 + 0.25
    target = float(s.alpha_sq(t)) * 4.25 + float(s.sigma_sq(t))
    assert target == pytest.approx(float(fix_b.covariance(t)[0, 0]), rel=1e-12)
    # Var of (x - mean)^2 gives the standard error of the sample variance
    c = (x - x.mean()) ** 2
    se = c.std(ddof=1) / np.sqrt(len(x))
    assert abs(x.var(ddof=1) - target) <= 3 * se


@given(times, st.lists(points, min_size=2, max_size=2))
def test_posterior_mean_identity(t, x):
    t = max(t, 1e-3)
    s = NoiseSchedule()
    m, c = np.array([0.7, -0.2]), 0.3
    fam = GaussianMixture([1.0], [m], [c])
    x = np.array(x)
    a, a2, s2 = float(s.alpha(t)), float(s.alpha_sq(t)), float(s.sigma_sq(t))
    tweedie = (x + s2 * fam.score(t, x)) / a
    bayes = m + a * c / (a2 * c + s2) * (x - a * m)
    np.testing.assert_allclose(tweedie, bayes, rtol=1e-10, atol=1e-10)


def test_fokker_planck_stationary():
    fam = standard_normal_family()
    for t in (0.1, 0.5, 0.9):
        assert abs(float(fokker_planck_residual(fam, t, np.array([1.3])))) <= 1e-6


def test_fokker_planck_fix_b(fix_b, gen):
    for _ in range(50):
        t, x = gen.uniform(0.01, 0.99), gen.uniform(-4, 4, 1)
        assert abs(float(fokker_planck_residual(fix_b, t, x))) <= 1e-5


def test_fokker_planck_stencil_order(fix_b):
    x = np.array([1.1])
    r1 = abs(float(fokker_planck_residual(fix_b, 0.5, x, h=2e-2)))
    r2 = abs(float(fokker_planck_residual(fix_b, 0.5, x, h=1e-2)))
    assert 3.5 <= r1 / r2 <= 4.5


def test_fokker_planck_step_too_large(fix_b):
    with pytest.raises(DomainError):
        fokker_planck_residual(fix_b, 0.0, np.zeros(1))
