"""Fast deterministic self-checks behind ``ddlab selftest``."""

from __future__ import annotations

import numpy as np

from . import estimators as est
from . import fixtures, oracles, rng
from .density import fokker_planck_residual
from .dynamics import System, cov_rate, make_ode_rhs, make_sde_rhs, rhs_pf_ode_aug
from .integrators import TimeGrid, integrate_ode, integrate_sde
from .schedule import NoiseSchedule, bridge
from .score_models import ExactScore

HEADER = ["check", "passed", "value", "threshold"]


def _psi_check(seed):
    sched = NoiseSchedule()
    s, t = (float(sched.time_from_lambda(v)) for v in (0.0, -8.0))
    expected = 2.0 * np.exp(-8.0) / (1.0 - np.exp(-8.0))
    return abs(bridge(sched, s, t).psi - expected) / expected, 1e-12


def _derivatives(seed):
    fam = fixtures.fix_b()
    gen = rng.generator(seed, rng.MISC)
    worst = 0.0
    for _ in range(10):
        t, x = gen.uniform(0.01, 0.99), gen.uniform(-4, 4, 1)
        worst = max(worst, *(oracles.finite_diff_check(fam, t, x, o) for o in oracles.ORDERS))
    return worst, 1e-6


def _fokker_planck(seed):
    fam = fixtures.fix_b()
    gen = rng.generator(seed, rng.MISC + 1)
    return max(abs(float(fokker_planck_residual(fam, gen.uniform(0.01, 0.99), gen.uniform(-4, 4, 1)))) for _ in range(10)), 1e-5


def _pf_ode(seed):
    fam = fixtures.fix_b()
    x = est._prior_draws(fam, 1.0, seed, 32, 0)
    traj = integrate_ode(make_ode_rhs(System("pf-ode", ExactScore(fam))), TimeGrid.build(fam.schedule, 1.0, 0.0, 512), x, fam.log_density(1.0, x), store=False)
    return float(np.max(np.abs(traj.aux_final - fam.log_density(0.0, traj.x_final)))), 1e-3


def _reverse_sde(seed):
    fam = fixtures.fix_b()
    x = est._prior_draws(fam, 1.0, seed, 64, 0)
    grid = TimeGrid.build(fam.schedule, 1.0, 0.0, 1024)
    traj = integrate_sde(make_sde_rhs(System("reverse-sde", ExactScore(fam))), grid, x, fam.log_density(1.0, x), seed, "milstein")
    err = np.abs(traj.aux - fam.log_density(traj.times[:, None], traj.x)).max(axis=0)
    return est.fmean(err), 5e-2


def _hp_closed_form(seed):
    fam = fixtures.gaussian_d4()
    sched = fam.schedule
    worst = 0.0
    for j, lam in enumerate((-4.0, 0.0, 4.0)):
        t = float(sched.time_from_lambda(lam))
        x_t = est._prior_draws(fam, t, seed, 1, j)
        y, _ = est.hp_ode(fam, x_t, t, 1024)
        s = fam.score(t, x_t)
        a = float(sched.alpha(t))
        target = (x_t + float(sched.sigma_sq(t)) * s) / a - np.exp(-sched.lambda_max) * a * s
        worst = max(worst, float(np.linalg.norm(y - target)))
    return worst, 1e-4


def _cov_rate(seed):
    fam = fixtures.fix_b()
    system = System("pf-ode", ExactScore(fam))
    x = est._prior_draws(fam, 0.5, seed, 16, 0)
    r = rhs_pf_ode_aug(system, 0.5, x)
    f, g2 = float(fam.schedule.f(0.5)), float(fam.schedule.g_sq(0.5))
    div = f * fam.dim - 0.5 * g2 * fam.laplacian(0.5, x)
    return float(np.max(np.abs(cov_rate(r.drift_x, r.drift_x, div, fam.score(0.5, x)) - r.drift_aux))), 1e-12


def _determinism(seed):
    fam = fixtures.fix_b()
    grid = TimeGrid.build(fam.schedule, 1.0, 0.0, 64)
    rhs = make_sde_rhs(System("reverse-sde", ExactScore(fam)))
    x = est._prior_draws(fam, 1.0, seed, 300, 0)
    a = integrate_sde(rhs, grid, x, None, seed, store=False)
    # the same paths split in two batches must agree bit for bit
    b1 = integrate_sde(rhs, grid, x[:100], None, seed, path_offset=0, store=False)
    b2 = integrate_sde(rhs, grid, x[100:], None, seed, path_offset=100, store=False)
    same = np.array_equal(a.x_final, np.concatenate([b1.x_final, b2.x_final])) and np.array_equal(
        a.aux_final, np.concatenate([b1.aux_final, b2.aux_final])
    )
    return 0.0 if same else 1.0, 0.0


CHECKS = {
    "bridge_psi": _psi_check,
    "derivative_oracle": _derivatives,
    "fokker_planck_residual": _fokker_planck,
    "pf_ode_tracking": _pf_ode,
    "reverse_sde_tracking": _reverse_sde,
    "hp_ode_gaussian_closed_form": _hp_closed_form,
    "cov_rate_identity": _cov_rate,
    "batch_determinism": _determinism,
}


def run(seed: int = 0):
    rows, ok = [], True
    for name, fn in CHECKS.items():
        value, threshold = fn(seed)
        passed = bool(value <= threshold)
        ok &= passed
        rows.append([name, "true" if passed else "false", repr(float(value)), repr(float(threshold))])
    return HEADER, rows, ok
