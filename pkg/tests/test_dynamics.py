import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddlab import fixtures
from ddlab.density import GaussianMixture
from ddlab.dynamics import (
    System,
    cov_rate,
    make_ode_rhs,
    make_sde_rhs,
    rhs_approx_forward_sde_aug,
    rhs_approx_reverse_sde_aug,
    rhs_beta_sde_aug,
    rhs_forward_sde_aug,
    rhs_hp_ode_aug,
    rhs_mode_ode,
    rhs_pf_ode_aug,
    rhs_reverse_sde_aug,
)
from ddlab.errors import DomainError
from ddlab.integrators import TimeGrid, integrate_ode, integrate_sde
from ddlab.schedule import bridge
from ddlab.score_models import ExactScore, PerturbedScore


def _states(gen, n=100, dim=1, lo=-4, hi=4):
    return gen.uniform(0.0, 1.0, n), gen.uniform(lo, hi, (n, dim))


def test_reverse_aux_rate_formula(stationary):
    sys_ = System("reverse-sde", ExactScore(stationary))
    sched = stationary.schedule
    for t in (0.1, 0.5, 0.9):
        r = rhs_reverse_sde_aug(sys_, t, np.array([[2.0]]))
        f, g2 = float(sched.f(t)), float(sched.g_sq(t))
        assert r.drift_aux[0] == pytest.approx(-f - 0.5 * g2 * 4.0, rel=1e-14)
        assert r.drift_x[0, 0] == pytest.approx(2 * f + 2 * g2, rel=1e-14)


def test_aux_loading_vanishes_with_score(fix_b):
    r = rhs_reverse_sde_aug(System("reverse-sde", ExactScore(fix_b)), 0.4, np.zeros((1, 1)))
    assert r.aux_loading[0, 0] == 0.0


def test_forward_rate_uses_gaussian_laplacian():
    fam = GaussianMixture([1.0], [[0.3, -0.1, 0.4]], [0.6])
    sched = fam.schedule
    t = 0.35
    x = np.array([[0.2, 0.1, -0.5]])
    r = rhs_forward_sde_aug(System("forward-sde", ExactScore(fam)), t, x)
    f, g2 = float(sched.f(t)), float(sched.g_sq(t))
    v = float(sched.alpha_sq(t)) * 0.6 + float(sched.sigma_sq(t))
    s = fam.score(t, x)[0]
    assert r.drift_aux[0] == pytest.approx(-3 * f + g2 * (-3 / v) + 0.5 * g2 * s @ s, rel=1e-13)


def test_approx_reverse_equals_exact_for_exact_model(fix_b, gen):
    sys_ = System("approx-reverse-sde", ExactScore(fix_b))
    for t, x in zip(*_states(gen)):
        a = rhs_approx_reverse_sde_aug(sys_, t, x[None], jac=True)
        b = rhs_reverse_sde_aug(sys_, t, x[None], jac=True)
        for u, v in zip(a, b):
            np.testing.assert_array_equal(u, v)


def test_approx_forward_at_exact_score_matches_forward(fix_b, gen):
    sys_ = System("approx-forward-sde", ExactScore(fix_b))
    t, x = _states(gen)
    for ti, xi in zip(t, x):
        a = rhs_approx_forward_sde_aug(sys_, ti, xi[None])
        b = rhs_forward_sde_aug(sys_, ti, xi[None])
        np.testing.assert_allclose(a.drift_aux, b.drift_aux, rtol=1e-13, atol=1e-13)


def test_dimension_enters_linearly():
    # product of standard normals: the -f D part doubles with D
    t = 0.3
    r1 = rhs_approx_forward_sde_aug(System("approx-forward-sde", ExactScore(fixtures.stationary(1))), t, np.zeros((1, 1)))
    r2 = rhs_approx_forward_sde_aug(System("approx-forward-sde", ExactScore(fixtures.stationary(2))), t, np.zeros((1, 2)))
    assert r2.drift_aux[0] == pytest.approx(2 * r1.drift_aux[0], rel=1e-14)


def test_beta_half_is_reverse_sde(fix_b, gen):
    sys_ = System("beta-reverse", ExactScore(fix_b), beta=0.5)
    ref = System("reverse-sde", ExactScore(fix_b))
    for t, x in zip(*_states(gen)):
        a = rhs_beta_sde_aug(sys_, t, x[None], jac=True)
        b = rhs_reverse_sde_aug(ref, t, x[None], jac=True)
        np.testing.assert_allclose(a.drift_x, b.drift_x, rtol=1e-10, atol=1e-10)
        np.testing.assert_allclose(a.drift_aux, b.drift_aux, rtol=1e-10, atol=1e-10)
        assert a.diffusion == pytest.approx(b.diffusion, rel=1e-12)


def test_beta_zero_forward_is_pf_ode(fix_b, gen):
    sys_ = System("beta-forward", ExactScore(fix_b), beta=0.0)
    pf = System("pf-ode", ExactScore(fix_b))
    for t, x in zip(*_states(gen, 20)):
        a = rhs_beta_sde_aug(sys_, t, x[None], direction="forward")
        b = rhs_pf_ode_aug(pf, t, x[None])
        assert a.diffusion == 0.0
        np.testing.assert_allclose(a.drift_x, b.drift_x, rtol=1e-13, atol=1e-13)


def test_beta_validation(fix_b):
    with pytest.raises(DomainError):
        System("beta-reverse", ExactScore(fix_b))
    bad = System("beta-reverse", ExactScore(fix_b), beta=-1.0)
    with pytest.raises(DomainError):
        rhs_beta_sde_aug(bad, 0.5, np.zeros((1, 1)))
    ok = System("beta-reverse", ExactScore(fix_b), beta=lambda t: 1.0 + t)
    assert ok.beta_at(0.5) == 1.5
    with pytest.raises(DomainError):
        rhs_beta_sde_aug(ok, 0.5, np.zeros((1, 1)), direction="sideways")


def test_cov_rate_identities(fix_b, gen):
    t, x = 0.4, gen.uniform(-3, 3, (50, 1))
    sched = fix_b.schedule
    f, g2 = float(sched.f(t)), float(sched.g_sq(t))
    s, lap = fix_b.score_and_laplacian(t, x)
    pf = f * x - 0.5 * g2 * s
    div = f - 0.5 * g2 * lap
    np.testing.assert_array_equal(cov_rate(pf, pf, div, s), -div)
    # a displacement orthogonal to the score changes nothing
    four = fixtures.four_blobs()
    y = gen.normal(size=(10, 2))
    sy = four.score(t, y)
    ortho = np.stack([-sy[:, 1], sy[:, 0]], axis=1)
    np.testing.assert_allclose(cov_rate(y, y + ortho, np.ones(10), sy), -1.0, atol=1e-12)
    with pytest.raises(DomainError):
        cov_rate(pf, pf[:3], div, s)


def test_cov_rate_against_hand_assembly(fix_b, gen):
    sched = fix_b.schedule
    for _ in range(20):
        t, x = gen.uniform(0.05, 0.95), gen.uniform(-3, 3, (1, 1))
        f, g2 = float(sched.f(t)), float(sched.g_sq(t))
        s = float(fix_b.score(t, x)[0, 0])
        lap = float(fix_b.laplacian(t, x)[0])
        pf = f * x[0, 0] - 0.5 * g2 * s
        rev = f * x[0, 0] - g2 * s
        by_hand = -(f - 0.5 * g2 * lap) + (rev - pf) * s
        got = cov_rate(np.array([[pf]]), np.array([[rev]]), np.array([f - 0.5 * g2 * lap]), np.array([[s]]))[0]
        assert got == pytest.approx(by_hand, rel=1e-12, abs=1e-12)


def test_pf_ode_aux_matches_cov_rate(fix_b, gen):
    sys_ = System("pf-ode", ExactScore(fix_b))
    sched = fix_b.schedule
    for t, x in zip(*_states(gen, 30)):
        r = rhs_pf_ode_aug(sys_, t, x[None])
        f, g2 = float(sched.f(t)), float(sched.g_sq(t))
        div = f - 0.5 * g2 * fix_b.laplacian(t, x[None])
        np.testing.assert_allclose(cov_rate(r.drift_x, r.drift_x, div, fix_b.score(t, x[None])), r.drift_aux, atol=1e-12)


def test_mode_ode_reduces_to_hp_for_gaussian():
    fam = fixtures.gaussian_d4()
    anchor_t = 0.7
    mode = System("mode-ode", ExactScore(fam), anchor=(anchor_t, np.zeros(4)))
    hp = System("hp-ode", ExactScore(fam))
    y = np.random.default_rng(0).normal(size=(5, 4))
    for s in (0.1, 0.4, 0.69):
        np.testing.assert_allclose(rhs_mode_ode(mode, s, y), rhs_hp_ode_aug(hp, s, y).drift_x, atol=1e-10)


def test_mode_ode_correction_vanishes_near_anchor(fix_c):
    sched = fix_c.schedule
    t_anchor = float(sched.time_from_lambda(-8.0))
    mode = System("mode-ode", ExactScore(fix_c), anchor=(t_anchor, np.array([-2.5])))
    hp = System("hp-ode", ExactScore(fix_c))
    y = np.array([[-2.0]])
    s = t_anchor - 1e-4
    diff = np.abs(rhs_mode_ode(mode, s, y) - rhs_hp_ode_aug(hp, s, y).drift_x)[0, 0]
    far = np.abs(rhs_mode_ode(mode, 0.5, y) - rhs_hp_ode_aug(hp, 0.5, y).drift_x)[0, 0]
    assert bridge(sched, s, t_anchor).psi > 1e2
    assert diff < 1e-6 * far
    # the correction decays like 1/psi
    closer = np.abs(rhs_mode_ode(mode, t_anchor - 1e-5, y) - rhs_hp_ode_aug(hp, t_anchor - 1e-5, y).drift_x)[0, 0]
    assert closer < 0.2 * diff
    np.testing.assert_array_equal(rhs_mode_ode(mode, t_anchor, y), rhs_hp_ode_aug(hp, t_anchor, y).drift_x)


def test_mode_ode_domain(fix_c):
    with pytest.raises(DomainError):
        rhs_mode_ode(System("mode-ode", ExactScore(fix_c)), 0.1, np.zeros((1, 1)))
    with pytest.raises(DomainError):
        System("mode-ode", ExactScore(fix_c), anchor=(0.0, np.zeros(1)))
    sys_ = System("mode-ode", ExactScore(fix_c), anchor=(0.5, np.zeros(1)))
    with pytest.raises(DomainError):
        rhs_mode_ode(sys_, 0.6, np.zeros((1, 1)))


def test_binders_reject_wrong_kind(fix_b):
    with pytest.raises(DomainError):
        make_sde_rhs(System("pf-ode", ExactScore(fix_b)))
    with pytest.raises(DomainError):
        make_ode_rhs(System("reverse-sde", ExactScore(fix_b)))
    with pytest.raises(DomainError):
        System("teleport", ExactScore(fix_b))


def test_exact_kinds_ignore_perturbation(fix_b):
    pert = PerturbedScore(fix_b, [1.0], 0.3)
    x = np.array([[0.7]])
    a = rhs_reverse_sde_aug(System("reverse-sde", pert), 0.4, x)
    b = rhs_reverse_sde_aug(System("reverse-sde", ExactScore(fix_b)), 0.4, x)
    np.testing.assert_array_equal(a.drift_x, b.drift_x)
    c = rhs_approx_reverse_sde_aug(System("approx-reverse-sde", pert), 0.4, x)
    assert not np.array_equal(c.drift_x, b.drift_x)


# -- conservation on the stationary fixture ------------------------------------


def _stationary_error(traj):
    fam = fixtures.stationary()
    return np.abs(traj.aux - fam.log_density(traj.times[:, None], traj.x)).max()


def test_stationary_pf_ode_conserves(stationary):
    x0 = np.linspace(-3, 3, 9)[:, None]
    traj = integrate_ode(make_ode_rhs(System("pf-ode", ExactScore(stationary))),
                         TimeGrid.build(stationary.schedule, 1.0, 0.0, 256), x0, stationary.log_density(1.0, x0))
    assert _stationary_error(traj) < 1e-10


@pytest.mark.parametrize("kind,t0,t1", [("reverse-sde", 1.0, 0.0), ("forward-sde", 0.0, 1.0)])
def test_stationary_sde_tracking(stationary, kind, t0, t1):
    x0 = np.random.default_rng(1).normal(size=(64, 1))
    rhs = make_sde_rhs(System(kind, ExactScore(stationary)))
    grid = TimeGrid.build(stationary.schedule, t0, t1, 2048)
    traj = integrate_sde(rhs, grid, x0, stationary.log_density(t0, x0), seed=5, scheme="milstein")
    err = np.abs(traj.aux - stationary.log_density(traj.times[:, None], traj.x)).max(axis=0)
    assert err.mean() < 3e-2


@given(st.floats(0.01, 0.99), st.floats(-3, 3))
def test_hp_ode_aux_rate_is_log_density_derivative(t, y):
    # d/ds log p_s(y_s) along dy = v ds is the partial in s plus score . v
    fam = fixtures.fix_b()
    sys_ = System("hp-ode", ExactScore(fam))
    y = np.array([[y]])
    r = rhs_hp_ode_aug(sys_, t, y)
    h = 1e-5
    dt = (fam.log_density(t + h, y) - fam.log_density(t - h, y)) / (2 * h)
    chain = dt + np.sum(fam.score(t, y) * r.drift_x, axis=1)
    np.testing.assert_allclose(r.drift_aux, chain, rtol=1e-5, atol=1e-5)
