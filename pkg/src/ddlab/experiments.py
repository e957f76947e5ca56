"""Experiment pipelines behind the CLI.

Each runner takes a validated :class:`ExperimentConfig` and returns an
:class:`ExperimentResult`: a CSV header, rows (every row ends with the config hash)
and a small summary dict for ``meta.json``. Rows are formatted with ``repr`` so a
rerun with the same config reproduces the file byte for byte.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ks_2samp

from . import estimators as est
from . import rng
from .config import ExperimentConfig, build_family, build_model, build_schedule
from .dynamics import System, make_ode_rhs, make_sde_rhs
from .errors import SingularModeError
from .integrators import TimeGrid, integrate_ode, integrate_sde
from .oracles import GridSpec, denoising_grid_argmax, detect_mode_jump
from .score_models import ExactScore, MismatchedScore, PerturbedScore


@dataclass
class ExperimentResult:
    header: list
    rows: list
    summary: dict = field(default_factory=dict)


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("DDLAB_THREADS", "1")))
    except ValueError:
        return 1


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def run_sde_paths(rhs, grid, x0, aux0, seed, scheme, store=False, chunk=rng.BLOCK):
    """Integrate paths in chunks, possibly on several threads; results match a single batch."""
    x0 = np.atleast_2d(x0)
    aux0 = np.zeros(len(x0)) if aux0 is None else np.asarray(aux0, dtype=float)
    starts = list(range(0, len(x0), chunk))

    def one(a):
        b = min(a + chunk, len(x0))
        return integrate_sde(rhs, grid, x0[a:b], aux0[a:b], seed, scheme, path_offset=a, store=store)

    workers = min(n_threads(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(one, starts))
    else:
        parts = [one(a) for a in starts]
    return (
        parts[0].times,
        np.concatenate([p.x for p in parts], axis=1),
        np.concatenate([p.aux for p in parts], axis=1),
    )


def _leg_steps(cfg, sched, t0, t1):
    return max(1, int(round(cfg.n_steps * abs(t1 - t0) / sched.horizon)))


# -- track-likelihood ------------------------------------------------------


def track_likelihood(cfg: ExperimentConfig) -> ExperimentResult:
    """Reverse-SDE likelihood tracking started from the model family's ``T`` marginal."""
    model = build_model(cfg)
    fam = model.family
    sched = fam.schedule
    T = sched.horizon
    xT = est._prior_draws(fam, T, cfg.seed, cfg.n_paths, 0)
    aux = fam.log_density(T, xT)
    grid = TimeGrid.build(sched, T, 0.0, cfg.n_steps)
    rhs = make_sde_rhs(System("approx-reverse-sde", model))
    times, xs, auxs = run_sde_paths(rhs, grid, xT, aux, cfg.seed, cfg.scheme, store=True)
    exact = fam.log_density(times[:, None], xs)
    err = np.abs(auxs - exact)
    path_max = err.max(axis=0)
    h = cfg.hash()
    header = ["path", "x0", "aux0", "logp0", "max_abs_error", "config_hash"]
    rows = [
        [p, ";".join(fmt(v) for v in xs[-1, p]), fmt(auxs[-1, p]), fmt(exact[-1, p]), fmt(path_max[p]), h]
        for p in range(cfg.n_paths)
    ]
    summary = {
        "mean_path_max_error": est.fmean(path_max),
        "worst_path_max_error": float(path_max.max()),
        "n_paths": cfg.n_paths,
    }
    return ExperimentResult(header, rows, summary)


# -- bias-bounds -----------------------------------------------------------


def bias_bounds(cfg: ExperimentConfig) -> ExperimentResult:
    model = build_model(cfg)
    sched = model.schedule
    data = build_family(cfg.family, sched)
    pairs = est.sample_with_r0(model, None, cfg.n_paths, cfg.n_steps, cfg.seed, scheme=cfg.scheme)
    ode = est.ode_log_likelihood(model, pairs.x0, cfg.n_steps)
    elbo, _ = est.elbo_values(model, pairs.x0, cfg.elbo_samples, cfg.seed)
    R, RU, RL = est.gap_and_kl_bounds(model, None, pairs, ode, elbo)
    ref = model.family if isinstance(model, MismatchedScore) else data
    EX, EY = est.bias_integrals(model, ref, None, max(2, 16 * cfg.n_paths), cfg.seed)
    reports = [R, RU, RL, EX, EY]
    if isinstance(model, PerturbedScore):
        reports.append(est.EstimateReport("E_Y_closed_form", est.constant_bias_closed_form(sched, model.offset), 0.0, 1))
    corr = float(np.corrcoef(pairs.r0, ode)[0, 1]) if cfg.n_paths > 2 else float("nan")
    reports.append(est.EstimateReport("corr_r0_ode", corr, 0.0, cfg.n_paths))
    h = cfg.hash()
    rows = [[r.estimator_id, fmt(r.value), fmt(r.std_error), r.n, cfg.seed, h] for r in reports]
    return ExperimentResult(list(est.CSV_HEADER), rows, {r.estimator_id: r.value for r in reports})


# -- mode tracking ---------------------------------------------------------


def _anchor(cfg, fam):
    sched = fam.schedule
    t = float(sched.time_from_lambda(cfg.anchor_lambda))
    x = np.asarray(cfg.anchor_x, dtype=float).reshape(fam.dim)
    return t, x


def _grid(cfg, fam):
    lo, hi = cfg.grid_bounds
    return GridSpec(tuple((lo, hi) for _ in range(fam.dim)), (cfg.grid_points,) * fam.dim)


def mode_curve(cfg: ExperimentConfig) -> ExperimentResult:
    fam = build_family(cfg.family, build_schedule(cfg))
    sched = fam.schedule
    t, x_t = _anchor(cfg, fam)
    s_end = float(sched.time_from_lambda(cfg.lambda_end))
    grid = _grid(cfg, fam)
    tg = TimeGrid.build(sched, t, s_end, cfg.n_steps, "refined-anchor")
    rhs = make_ode_rhs(System("mode-ode", ExactScore(fam), anchor=(t, x_t)))
    stopped = None
    try:
        traj = integrate_ode(rhs, tg, x_t[None])
        times, ys = traj.times, traj.x[:, 0]
    except SingularModeError as exc:
        stopped = {"s": exc.s, "condition": exc.condition}
        # rerun up to the last node before the singular point
        keep = tg.times[tg.times > exc.s] if tg.direction == "reverse" else tg.times[tg.times < exc.s]
        traj = integrate_ode(rhs, TimeGrid(keep), x_t[None]) if len(keep) > 1 else None
        times = keep if traj is not None else tg.times[:1]
        ys = traj.x[:, 0] if traj is not None else x_t[None]
    h = cfg.hash()
    rows, worst = [], 0.0
    cell = float(np.max(grid.cell))
    for k, s in enumerate(times):
        if k == 0:
            y_grid = x_t
        else:
            y_grid, _ = denoising_grid_argmax(fam, None, x_t, t, float(s), grid)
        off = float(np.max(np.abs(ys[k] - y_grid))) / cell
        worst = max(worst, off if k else 0.0)
        rows.append([fmt(sched.lam(s)), fmt(s), ";".join(map(fmt, ys[k])), ";".join(map(fmt, y_grid)), fmt(off), h])
    header = ["lambda_s", "s", "y_ode", "y_grid", "cells_off", "config_hash"]
    return ExperimentResult(header, rows, {"max_cells_off": worst, "stopped": stopped, "grid_cell": cell})


def nonsmooth_demo(cfg: ExperimentConfig) -> ExperimentResult:
    fam = build_family(cfg.family, build_schedule(cfg))
    t, x_t = _anchor(cfg, fam)
    a, b, step = cfg.jump_scan
    scan = a + step * np.arange(int(math.floor((b - a) / step + 1e-9)) + 1)
    grid = _grid(cfg, fam)
    res = detect_mode_jump(fam, None, x_t, t, scan, grid, cfg.jump_threshold)
    header = ["found", "lambda_star", "left_mode", "right_mode", "displacement", "grid_cell", "config_hash"]
    row = [
        fmt(res.found),
        fmt(res.lambda_star),
        fmt(float(res.left_mode[0])),
        fmt(float(res.right_mode[0])),
        fmt(res.displacement),
        fmt(float(grid.cell[0])),
        cfg.hash(),
    ]
    return ExperimentResult(header, [row], dict(zip(header[:-1], [res.found, res.lambda_star, float(res.left_mode[0]), float(res.right_mode[0]), res.displacement, float(grid.cell[0])])))


# -- high-probability sampling ----------------------------------------------


def high_probability_samples(cfg: ExperimentConfig, fam=None):
    """Algorithm: base sampler from ``T`` down to the threshold, then the HP-ODE to 0.

    Returns ``{threshold_lambda: (y0, logp_y0)}``. The tracked log-density starts at
    the prior's and is carried through both legs.
    """
    if fam is None:
        fam = build_family(cfg.family, build_schedule(cfg))
    sched = fam.schedule
    T = sched.horizon
    model = ExactScore(fam)
    xT = math.sqrt(sched.sigma_T_sq) * rng.normals(cfg.seed, rng.INITIAL, cfg.n_paths, fam.dim)
    aT = est.gaussian_logpdf(xT, 0.0, sched.sigma_T_sq)
    out = {}
    for lam in cfg.thresholds:
        t = float(sched.time_from_lambda(lam))
        x, a = xT, aT
        if t < T:
            grid = TimeGrid.build(sched, T, t, _leg_steps(cfg, sched, T, t))
            if cfg.base_sampler == "sde":
                rhs = make_sde_rhs(System("approx-reverse-sde", model))
                _, xs, auxs = run_sde_paths(rhs, grid, x, a, cfg.seed, cfg.scheme)
                x, a = xs[-1], auxs[-1]
            else:
                traj = integrate_ode(make_ode_rhs(System("pf-ode", model)), grid, x, a, store=False)
                x, a = traj.x_final, traj.aux_final
        if t > 0:
            grid = TimeGrid.build(sched, t, 0.0, _leg_steps(cfg, sched, t, 0.0))
            traj = integrate_ode(make_ode_rhs(System("hp-ode", model)), grid, x, a, store=False)
            x, a = traj.x_final, traj.aux_final
        out[float(lam)] = (x, a)
    return out


def hp_sample(cfg: ExperimentConfig) -> ExperimentResult:
    fam = build_family(cfg.family, build_schedule(cfg))
    res = high_probability_samples(cfg, fam)
    h = cfg.hash()
    header = ["threshold_lambda", "path"] + [f"y0_{i}" for i in range(fam.dim)] + ["logp_y0", "seed", "config_hash"]
    rows = []
    for lam, (y, a) in res.items():
        for p in range(len(y)):
            rows.append([fmt(lam), p] + [fmt(v) for v in y[p]] + [fmt(a[p]), cfg.seed, h])
    return ExperimentResult(header, rows, {"thresholds": list(res)})


def sample_spread(y) -> float:
    return float(np.trace(np.atleast_2d(np.cov(y, rowvar=False))))


def tradeoff(cfg: ExperimentConfig) -> ExperimentResult:
    fam = build_family(cfg.family, build_schedule(cfg))
    res = high_probability_samples(cfg, fam)
    h = cfg.hash()
    header = ["threshold_lambda", "n", "spread", "mean_logp_y0", "mean_logp_exact", "config_hash"]
    rows, summary = [], {}
    for lam, (y, a) in res.items():
        spread = sample_spread(y)
        exact = est.fmean(fam.log_density(0.0, y))
        rows.append([fmt(lam), len(y), fmt(spread), fmt(est.fmean(a)), fmt(exact), h])
        summary[str(lam)] = spread
    return ExperimentResult(header, rows, {"spread": summary})


def hp_vs_samples(cfg: ExperimentConfig) -> ExperimentResult:
    fam = build_family(cfg.family, build_schedule(cfg))
    sched = fam.schedule
    h = cfg.hash()
    header = ["threshold_lambda", "anchor", "fraction", "config_hash"]
    rows, summary = [], {}
    for j, lam in enumerate(cfg.thresholds):
        t = float(sched.time_from_lambda(lam))
        x_t = est._prior_draws(fam, t, cfg.seed, cfg.n_anchors, j * cfg.n_anchors)
        fr = est.higher_likelihood_fractions(fam, x_t, t, cfg.K, cfg.n_steps, cfg.seed, cfg.scheme)
        for m, v in enumerate(fr):
            rows.append([fmt(float(lam)), m, fmt(v), h])
        summary[str(float(lam))] = est.fmean(fr)
    return ExperimentResult(header, rows, {"mean_fraction": summary})


# -- beta invariance -------------------------------------------------------


def beta_samples(fam, beta, n, n_steps, seed, offset, scheme="euler-maruyama"):
    sched = fam.schedule
    xT = math.sqrt(sched.sigma_T_sq) * rng.normals(seed, rng.INITIAL, n, fam.dim, offset)
    rhs = make_sde_rhs(System("beta-reverse", ExactScore(fam), beta=beta))
    grid = TimeGrid.build(sched, sched.horizon, 0.0, n_steps)
    x0 = np.empty_like(xT)
    for a in range(0, n, 4096):
        b = min(a + 4096, n)
        x0[a:b] = integrate_sde(rhs, grid, xT[a:b], None, seed, scheme, path_offset=offset + a, store=False).x_final
    return x0


def beta_invariance(cfg: ExperimentConfig) -> ExperimentResult:
    fam = build_family(cfg.family, build_schedule(cfg))
    n = cfg.n_paths
    ref = beta_samples(fam, 0.5, n, cfg.n_steps, cfg.seed, 0, cfg.scheme)
    alt = beta_samples(fam, cfg.beta, n, cfg.n_steps, cfg.seed, n, cfg.scheme)
    ks = ks_2samp(ref[:, 0], alt[:, 0])
    header = ["beta_ref", "beta", "n", "ks_statistic", "p_value", "config_hash"]
    row = [fmt(0.5), fmt(float(cfg.beta)), n, fmt(float(ks.statistic)), fmt(float(ks.pvalue)), cfg.hash()]
    return ExperimentResult(header, [row], {"ks_statistic": float(ks.statistic)})


RUNNERS = {
    "track-likelihood": track_likelihood,
    "bias-bounds": bias_bounds,
    "mode-curve": mode_curve,
    "nonsmooth-demo": nonsmooth_demo,
    "hp-sample": hp_sample,
    "tradeoff": tradeoff,
    "hp-vs-samples": hp_vs_samples,
    "beta-invariance": beta_invariance,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return RUNNERS[cfg.experiment](cfg)
