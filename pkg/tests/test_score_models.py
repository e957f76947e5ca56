import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddlab import fixtures
from ddlab.errors import DomainError
from ddlab.score_models import ExactScore, MismatchedScore, PerturbedScore, model_divergence, model_score


def test_stationary_score_value():
    m = ExactScore(fixtures.stationary())
    for t in (0.0, 0.5, 1.0):
        assert model_score(m, t, np.array([2.0]))[0] == pytest.approx(-2.0, abs=1e-14)


def test_zero_perturbation_is_exact(fix_b, gen):
    exact, pert = ExactScore(fix_b), PerturbedScore(fix_b, [1.0], 0.0)
    t, x = gen.uniform(0, 1, 100), gen.uniform(-4, 4, (100, 1))
    for ti, xi in zip(t, x):
        np.testing.assert_array_equal(pert.score(ti, xi), exact.score(ti, xi))
        assert pert.divergence(ti, xi) == exact.divergence(ti, xi)


@given(st.floats(0.0, 1.0), st.floats(-4, 4), st.floats(-1, 1))
def test_perturbation_is_constant_offset(t, x, eps):
    fam = fixtures.fix_b()
    pert = PerturbedScore(fam, [2.0], eps)
    x = np.array([x])
    np.testing.assert_allclose(pert.score(t, x) - fam.score(t, x), [2.0 * eps], atol=1e-12)
    np.testing.assert_array_equal(pert.jacobian(t, x), fam.hessian(t, x))


def _fd_divergence(model, t, x, h=1e-4):
    # Richardson-extrapolated central differences of each score component
    def central(step):
        out = 0.0
        for i in range(len(x)):
            e = np.zeros(len(x))
            e[i] = step
            out += (model.score(t, x + e)[i] - model.score(t, x - e)[i]) / (2 * step)
        return out

    return (4 * central(h / 2) - central(h)) / 3


def test_mismatched_divergence_matches_finite_differences(gen):
    q = fixtures.four_blobs()
    m = MismatchedScore(q)
    for _ in range(50):
        t, x = gen.uniform(0, 1), gen.uniform(-3, 3, 2)
        fd = _fd_divergence(m, t, x)
        an = float(model_divergence(m, t, x))
        assert abs(an - fd) <= 1e-6 * max(abs(an), 1e-3)


def test_bad_bias_shape(fix_b):
    with pytest.raises(DomainError):
        PerturbedScore(fix_b, [1.0, 1.0], 0.1)
    with pytest.raises(DomainError):
        PerturbedScore(fix_b, [1.0], float("nan"))
