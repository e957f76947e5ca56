"""Monte-Carlo estimators of likelihood bounds and bias integrals.

Time expectations use stratified ``t`` (one uniform draw per equal-width stratum; with a
log-SNR linear in ``t`` these are also equal log-SNR strata). Standard errors treat the
per-stratum values as iid, which is conservative under stratification. All means go
through :func:`math.fsum`, so a result does not depend on summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .density import GaussianMixture
from .dynamics import System, make_ode_rhs, make_sde_rhs
from .errors import DomainError, UnsupportedConfigurationError
from .integrators import TimeGrid, integrate_ode, integrate_sde
from .schedule import NoiseSchedule, bridge
from .score_models import ExactScore, MismatchedScore, ScoreModel

_LOG_2PI = math.log(2.0 * math.pi)

# stream bases keep the randomness of different estimators apart
_ELBO_STREAM = 1 << 20
_BIAS_STREAM = 2 << 20
_FRACTION_STREAM = 3 << 20


@dataclass(frozen=True)
class EstimateReport:
    estimator_id: str
    value: float
    std_error: float
    n: int

    def __post_init__(self):
        if not (self.std_error >= 0 or math.isnan(self.std_error)):
            raise DomainError("std_error must be non-negative")

    def row(self, seed: int, config_hash: str) -> list:
        return [self.estimator_id, repr(float(self.value)), repr(float(self.std_error)), self.n, seed, config_hash]


CSV_HEADER = ["estimator_id", "value", "std_error", "n", "seed", "config_hash"]


def fmean(values) -> float:
    v = np.asarray(values, dtype=float).ravel()
    return math.fsum(v) / len(v)


def mean_and_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float).ravel()
    n = len(v)
    if n == 0:
        raise DomainError("no samples")
    m = math.fsum(v) / n
    if n < 2:
        return m, float("nan")
    var = math.fsum((v - m) ** 2) / (n - 1)
    return m, math.sqrt(var / n)


def report(estimator_id: str, values) -> EstimateReport:
    m, se = mean_and_se(values)
    return EstimateReport(estimator_id, m, se, int(np.size(values)))


def stratified_times(sched: NoiseSchedule, n: int, gen: np.random.Generator) -> np.ndarray:
    u = (np.arange(n) + gen.random(n)) / n
    return np.clip(u * sched.horizon, 0.0, sched.horizon)


def gaussian_logpdf(x, mean, var) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x.shape[-1]
    return -0.5 * d * (_LOG_2PI + np.log(var)) - 0.5 * np.sum((x - mean) ** 2, axis=-1) / var


# -- ELBO -------------------------------------------------------------------


def elbo_integrand(model: ScoreModel, t, x0, eps) -> np.ndarray:
    """``-dlambda/dt |sigma_t s(t, alpha_t x0 + sigma_t eps) + eps|^2`` per row of ``t`` and ``eps``."""
    sched = model.schedule
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a, s = sched.alpha(t)[:, None], sched.sigma(t)[:, None]
    r = s * model.score(t, a * np.asarray(x0, dtype=float) + s * eps) + eps
    return -sched.dlam_dt * np.sum(r * r, axis=1)


def elbo_values(model: ScoreModel, x0, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """ELBO estimates and standard errors for each row of ``x0`` ``(M, D)``.

    ``n`` strata in ``t``, each with an antithetic ``(eps, -eps)`` pair. Point ``i``
    uses its own random stream, so the same seed gives common random numbers across
    models and across batch compositions.
    """
    if int(n) < 1:
        raise DomainError("n must be at least 1")
    n = int(n)
    sched = model.schedule
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    m, d = x0.shape
    if d != model.dim:
        raise DomainError(f"x0 must have trailing dimension {model.dim}")
    sigma0_sq = float(sched.sigma_sq(0.0))
    C = -0.5 * d * (1.0 + math.log(2.0 * math.pi * sigma0_sq))
    values, ses = np.empty(m), np.empty(m)
    for i in range(m):
        gen = rng.generator(seed, _ELBO_STREAM + i)
        t = stratified_times(sched, n, gen)
        eps = gen.standard_normal((n, d))
        pair = elbo_integrand(model, t, x0[i], eps) + elbo_integrand(model, t, x0[i], -eps)
        per = C - 0.5 * math.exp(sched.lambda_min) * float(x0[i] @ x0[i]) - 0.25 * sched.horizon * pair
        values[i], ses[i] = mean_and_se(per)
    return values, ses


def elbo(model: ScoreModel, sched: NoiseSchedule, x0, n: int, seed: int) -> EstimateReport:
    _check_sched(model, sched)
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    v, se = elbo_values(model, x0, n, seed)
    return EstimateReport("elbo", float(v[0]), float(se[0]), int(n))


def _check_sched(model, sched):
    if sched is not None and sched != model.schedule:
        raise DomainError("model and schedule disagree")


# -- sampling with likelihood ------------------------------------------------


@dataclass(frozen=True, eq=False)
class SamplePairs:
    x0: np.ndarray  # (N, D)
    r0: np.ndarray  # (N,)
    xT: np.ndarray
    rT: np.ndarray
    seed: int


def sample_with_r0(
    model: ScoreModel,
    sched: NoiseSchedule | None,
    n_paths: int,
    n_steps: int,
    seed: int,
    prior: GaussianMixture | None = None,
    scheme: str = "milstein",
    path_offset: int = 0,
) -> SamplePairs:
    """Endpoints ``(x_0, r_0)`` of the r-channel reverse SDE driven by ``model``.

    By default ``x_T ~ N(0, sigma_T^2 I)`` with ``r_T`` its log-density. With ``prior``
    the start is ``x_T ~ prior_T`` and ``r_T = log prior_T(x_T)``.
    """
    _check_sched(model, sched)
    sched = model.schedule
    T = sched.horizon
    n = int(n_paths)
    if n < 1:
        raise DomainError("n_paths must be at least 1")
    if prior is None:
        var_T = sched.sigma_T_sq
        z = rng.normals(seed, rng.INITIAL, n, model.dim, path_offset)
        xT = math.sqrt(var_T) * z
        rT = gaussian_logpdf(xT, 0.0, var_T)
    else:
        xT = _prior_draws(prior, T, seed, n, path_offset)
        rT = prior.log_density(T, xT)
    system = System("approx-reverse-sde", model)
    grid = TimeGrid.build(sched, T, 0.0, n_steps)
    traj = integrate_sde(make_sde_rhs(system), grid, xT, rT, seed, scheme, path_offset, store=False)
    return SamplePairs(traj.x_final, traj.aux_final, xT, rT, seed)


def _prior_draws(fam: GaussianMixture, t, seed, n, offset):
    """Mixture draws from counter-based uniforms and normals, path-addressable."""
    u = rng.uniforms(seed, rng.AUX_INITIAL, n, offset)
    k = np.minimum(np.searchsorted(np.cumsum(fam.weights), u, side="right"), fam.n_components - 1)
    z = rng.normals(seed, rng.INITIAL, n, fam.dim, offset)
    mean, var = fam.component_params(t)
    return mean[k] + np.sqrt(var[k])[:, None] * z


def ode_log_likelihood(model: ScoreModel, x0, n_steps: int = 1024) -> np.ndarray:
    """``log p_0^ODE(x_0)``: PF-ODE from 0 to T plus the ``N(0, sigma_T^2 I)`` prior."""
    sched = model.schedule
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    grid = TimeGrid.build(sched, 0.0, sched.horizon, n_steps)
    traj = integrate_ode(make_ode_rhs(System("pf-ode", model)), grid, x0, None, store=False)
    return gaussian_logpdf(traj.x_final, 0.0, sched.sigma_T_sq) - traj.aux_final


def gap_and_kl_bounds(model, sched, pairs, ode_logp, elbo) -> tuple[EstimateReport, EstimateReport, EstimateReport]:
    """``R``, ``R^U`` and ``R^L`` on a common set of samples.

    ``pairs`` is a :class:`SamplePairs` (or the ``r_0`` array), ``ode_logp`` and
    ``elbo`` hold one value per sample (``elbo`` may be a list of reports).
    """
    r0 = np.asarray(pairs.r0 if isinstance(pairs, SamplePairs) else pairs, dtype=float)
    if len(elbo) and isinstance(elbo[0], EstimateReport):
        elbo = [e.value for e in elbo]
    ode = np.asarray(ode_logp, dtype=float)
    el = np.asarray(elbo, dtype=float)
    if not (r0.shape == ode.shape == el.shape) or r0.ndim != 1:
        raise DomainError(f"sample sets disagree: {r0.shape}, {ode.shape}, {el.shape}")
    return (
        report("R", r0 - el),
        report("R_U", r0 - ode),
        report("R_L", el - ode),
    )


# -- bias integrals ----------------------------------------------------------


def _reference_family(model, true_score_family):
    if true_score_family is not None:
        return true_score_family
    if isinstance(model, (ExactScore, MismatchedScore)):
        return model.family
    raise UnsupportedConfigurationError(
        "the SDE's own score is unknown for this model; pass true_score_family explicitly"
    )


def bias_integrals(
    model: ScoreModel,
    true_score_family: GaussianMixture | None,
    sched: NoiseSchedule | None,
    n: int,
    seed: int,
    x0=None,
) -> tuple[EstimateReport, EstimateReport]:
    """``E[X]`` with ``x_t ~ p_t^SDE`` and ``E[Y_{x0}]`` with ``x_t ~ N(alpha_t x0, sigma_t^2 I)``.

    ``true_score_family`` supplies ``grad log p_t^SDE``. Without it the model's own family
    is used for exact and mismatched models (whose reverse SDE, started from that family's
    ``T`` marginal, has exactly those marginals). ``x0`` defaults to the origin.
    """
    _check_sched(model, sched)
    ref = _reference_family(model, true_score_family)
    if int(n) < 2:
        raise DomainError("n must be at least 2")
    n = int(n)
    sched = model.schedule
    d = model.dim
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=float).reshape(d)

    def integrand(t, xt):
        diff = model.score(t, xt) - ref.score(t, xt)
        return 0.5 * sched.horizon * sched.g_sq(t) * np.sum(diff * diff, axis=1)

    gen = rng.generator(seed, _BIAS_STREAM)
    t = stratified_times(sched, n, gen)
    mean, var = _component_draw_params(ref, t, gen)
    xt = mean + np.sqrt(var)[:, None] * gen.standard_normal((n, d))
    ex = report("E_X", integrand(t, xt))

    gen = rng.generator(seed, _BIAS_STREAM + 1)
    t = stratified_times(sched, n, gen)
    xt = sched.alpha(t)[:, None] * x0 + sched.sigma(t)[:, None] * gen.standard_normal((n, d))
    ey = report("E_Y", integrand(t, xt))
    return ex, ey


def _component_draw_params(fam: GaussianMixture, t, gen):
    k = gen.choice(fam.n_components, size=len(t), p=fam.weights)
    lam = fam.schedule.lam(t)
    a2 = 1.0 / (1.0 + np.exp(-lam))
    mean = np.sqrt(a2)[:, None] * fam.means[k]
    var = a2 * fam.variances[k] + (1.0 - a2)
    return mean, var


def constant_bias_closed_form(sched: NoiseSchedule, offset) -> float:
    """``(T/2) E_t g^2 |eps b|^2`` for a constant score offset ``eps b``."""
    b2 = float(np.sum(np.asarray(offset, dtype=float) ** 2))
    # integral of sigma^2 over log-SNR is a difference of softplus values
    integral = np.logaddexp(0.0, -sched.lambda_min) - np.logaddexp(0.0, -sched.lambda_max)
    return 0.5 * b2 * float(integral)


# -- higher-likelihood fraction ---------------------------------------------


def hp_ode(family: GaussianMixture, x_t, t: float, n_steps: int = 1024):
    """HP-ODE from ``(t, x_t)`` to 0 with ``aux_t = 0``; returns ``(y_0, log p_0(y_0) - log p_t(x_t))``."""
    sched = family.schedule
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    if float(t) <= 0.0:
        return x_t.copy(), np.zeros(len(x_t))
    grid = TimeGrid.build(sched, t, 0.0, n_steps)
    traj = integrate_ode(make_ode_rhs(System("hp-ode", ExactScore(family))), grid, x_t, None, store=False)
    return traj.x_final, traj.aux_final


def denoising_log_kernel(sched: NoiseSchedule, x_t, t, x0) -> np.ndarray:
    """``log p(x_t | x_0)`` with the exact bridge kernel from time 0."""
    b = bridge(sched, 0.0, t)
    return gaussian_logpdf(np.asarray(x_t, dtype=float), b.f_tilde * np.asarray(x0, dtype=float), b.g_tilde_sq)


def higher_likelihood_fractions(
    family: GaussianMixture,
    x_t,
    t: float,
    K: int = 512,
    n_steps: int = 1024,
    seed: int = 0,
    scheme: str = "milstein",
) -> np.ndarray:
    """Per-anchor fractions for the HP-ODE outputs of every row of ``x_t`` ``(M, D)``.

    All ``M * K`` denoising paths run as one batch; anchor ``m`` owns path indices
    ``m * K .. (m + 1) * K - 1`` of the counter-based noise.
    """
    if int(K) < 1:
        raise DomainError("K must be at least 1")
    K = int(K)
    sched = family.schedule
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    M = len(x_t)
    y0, ratio = hp_ode(family, x_t, t, n_steps)
    logpost_y = denoising_log_kernel(sched, x_t, t, y0) + ratio
    start = np.repeat(x_t, K, axis=0)
    grid = TimeGrid.build(sched, t, 0.0, n_steps)
    system = System("reverse-sde", ExactScore(family))
    stream_seed = (rng.check_seed(seed) + _FRACTION_STREAM) & ((1 << 64) - 1)
    traj = integrate_sde(make_sde_rhs(system), grid, start, np.zeros(M * K), stream_seed, scheme, store=False)
    logpost = denoising_log_kernel(sched, start, t, traj.x_final) + traj.aux_final
    hits = (logpost.reshape(M, K) >= logpost_y[:, None]).astype(float)
    return hits.mean(axis=1)


def higher_likelihood_fraction(
    family: GaussianMixture,
    sched: NoiseSchedule | None,
    x_t,
    t: float,
    y_0=None,
    K: int = 512,
    n_steps: int = 1024,
    seed: int = 0,
    y0_log_ratio: float | None = None,
    scheme: str = "milstein",
) -> EstimateReport:
    """Fraction of ``K`` denoising samples with higher ``log p(x_0 | x_t)`` than ``y_0``.

    Samples come from the exact-score reverse SDE started at ``(x_t, r_t = 0)``, so
    ``r_0 = log p_0(x_0) - log p_t(x_t)``. ``y_0`` defaults to the HP-ODE output, whose
    tracked channel gives the same difference for ``y_0``. For a user-supplied ``y_0``
    without ``y0_log_ratio`` the analytic log-densities are used.
    """
    if sched is not None and sched != family.schedule:
        raise DomainError("family and schedule disagree")
    if int(K) < 1:
        raise DomainError("K must be at least 1")
    sched = family.schedule
    K = int(K)
    t = float(t)
    x_t = np.asarray(x_t, dtype=float).reshape(family.dim)
    if y_0 is None:
        y, ratio = hp_ode(family, x_t, t, n_steps)
        y_0, y0_log_ratio = y[0], float(ratio[0])
    y_0 = np.asarray(y_0, dtype=float).reshape(family.dim)
    if y0_log_ratio is None:
        y0_log_ratio = float(family.log_density(0.0, y_0) - family.log_density(t, x_t))
    x0, logpost = denoising_samples(family, x_t, t, K, n_steps, seed, scheme)
    logpost_y = float(denoising_log_kernel(sched, x_t, t, y_0)) + y0_log_ratio
    # a drawn sample passed in as y_0 is not compared with itself
    others = ~np.all(x0 == y_0, axis=1)
    if not others.any():
        return EstimateReport("higher_likelihood_fraction", 0.0, float("nan"), 0)
    hits = (logpost[others] >= logpost_y).astype(float)
    return report("higher_likelihood_fraction", hits)


def denoising_samples(
    family: GaussianMixture, x_t, t: float, K: int, n_steps: int = 1024, seed: int = 0, scheme: str = "milstein"
) -> tuple[np.ndarray, np.ndarray]:
    """``K`` draws of ``x_0 | x_t`` with their tracked ``log p(x_0 | x_t)``."""
    sched = family.schedule
    x_t = np.asarray(x_t, dtype=float).reshape(family.dim)
    start = np.broadcast_to(x_t, (int(K), family.dim))
    grid = TimeGrid.build(sched, t, 0.0, n_steps)
    system = System("reverse-sde", ExactScore(family))
    stream_seed = (rng.check_seed(seed) + _FRACTION_STREAM) & ((1 << 64) - 1)
    traj = integrate_sde(make_sde_rhs(system), grid, start, np.zeros(int(K)), stream_seed, scheme, store=False)
    return traj.x_final, denoising_log_kernel(sched, x_t, t, traj.x_final) + traj.aux_final
