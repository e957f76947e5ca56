"""Brute-force ground truth for the analytic machinery.

Grid maximisation of denoising posteriors, jump detection along a log-SNR scan,
quadrature normalisation and Richardson finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.integrate import simpson

from .density import GaussianMixture
from .errors import DomainError, UnsupportedConfigurationError
from .schedule import NoiseSchedule, bridge

MAX_POINTS_1D = 20_000
MAX_POINTS_2D = 512


@dataclass(frozen=True)
class GridSpec:
    bounds: tuple  # ((lo, hi), ...) one pair per dimension
    points: tuple  # points per dimension

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.bounds)
        points = tuple(int(p) for p in np.atleast_1d(self.points))
        if len(points) == 1 and len(bounds) > 1:
            points = points * len(bounds)
        if len(bounds) != len(points) or not 1 <= len(bounds) <= 2:
            raise DomainError("grids are 1D or 2D with one (lo, hi) and one count per axis")
        for lo, hi in bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise DomainError(f"bad grid bounds ({lo}, {hi})")
        cap = MAX_POINTS_1D if len(points) == 1 else MAX_POINTS_2D
        if any(p < 8 or p > cap for p in points):
            raise DomainError(f"points per axis must be in [8, {cap}]")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "points", points)

    @classmethod
    def line(cls, lo: float, hi: float, n: int) -> "GridSpec":
        return cls(((lo, hi),), (n,))

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def cell(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.bounds, self.points)])

    def axes(self):
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.bounds, self.points)]

    def nodes(self) -> np.ndarray:
        """All grid nodes, shape ``(prod(points), dim)``, first axis varying slowest."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.bounds, tuple((n - 1) * factor + 1 for n in self.points))


def denoising_log_posterior(family: GaussianMixture, x_t, t: float, s: float, y) -> np.ndarray:
    """``log p(x_t | y) + log p_s(y)``: the denoising log-density up to ``-log p_t(x_t)``."""
    sched = family.schedule
    b = bridge(sched, s, t)
    y = np.asarray(y, dtype=float)
    x_t = np.asarray(x_t, dtype=float).reshape(family.dim)
    r2 = np.sum((x_t - b.f_tilde * y) ** 2, axis=-1)
    log_kernel = -0.5 * family.dim * np.log(2.0 * np.pi * b.g_tilde_sq) - 0.5 * r2 / b.g_tilde_sq
    return log_kernel + family.log_density(s, y)


def denoising_grid_argmax(family: GaussianMixture, sched: NoiseSchedule | None, x_t, t: float, s: float, grid: GridSpec):
    """Grid maximiser of ``p(x_s | x_t)``; ties go to the smallest flat index."""
    if sched is not None and sched != family.schedule:
        raise DomainError("family and schedule disagree")
    if family.dim > 2:
        raise UnsupportedConfigurationError("grid search supports D <= 2 only")
    if grid.dim != family.dim:
        raise DomainError("grid and family dimensions differ")
    nodes = grid.nodes()
    vals = denoising_log_posterior(family, x_t, t, s, nodes)
    i = int(np.argmax(vals))
    return nodes[i].copy(), float(vals[i])


def newton_polish(family: GaussianMixture, x_t, t: float, s: float, y0, iters: int = 50, tol: float = 1e-12):
    """Local maximiser of the denoising posterior by damped Newton from ``y0``."""
    b = bridge(family.schedule, s, t)
    x_t = np.asarray(x_t, dtype=float).reshape(family.dim)
    y = np.asarray(y0, dtype=float).reshape(family.dim).copy()
    eye = np.eye(family.dim)

    def objective(v):
        return float(denoising_log_posterior(family, x_t, t, s, v[None])[0])

    val = objective(y)
    for _ in range(iters):
        d = family.derivatives(s, y[None])
        grad = d.score[0] + b.phi * x_t - b.psi * y
        hess = d.hessian[0] - b.psi * eye
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = grad
        if grad @ step <= 0:  # not an ascent direction; fall back to gradient
            step = grad / (np.linalg.norm(grad) + 1e-300)
        alpha = 1.0
        while alpha > 1e-12:
            cand = y + alpha * step
            cv = objective(cand)
            if cv >= val:
                break
            alpha *= 0.5
        else:
            break
        moved = np.linalg.norm(cand - y)
        y, val = cand, cv
        if moved < tol * (1.0 + np.linalg.norm(y)):
            break
    return y, val


class JumpResult(NamedTuple):
    found: bool
    lambda_star: float
    left_mode: np.ndarray  # mode just before the jump (smaller s, higher log-SNR)
    right_mode: np.ndarray  # mode just after the jump
    displacement: float
    lambdas: np.ndarray  # scan in order of increasing s
    modes: np.ndarray


def detect_mode_jump(
    family: GaussianMixture,
    sched: NoiseSchedule | None,
    x_t,
    t: float,
    lambda_scan: Sequence[float],
    grid: GridSpec,
    threshold: float = 0.5,
) -> JumpResult:
    """Largest single-step move of the grid mode along a scan of ``lambda_s``.

    ``lambda_star`` is the midpoint of the bracketing scan values. Below ``threshold``
    the result has ``found=False``.
    """
    if family.dim != 1:
        raise UnsupportedConfigurationError("jump detection is 1D only")
    sched = family.schedule
    lam_t = float(sched.lam(t))
    lams = np.sort(np.asarray(lambda_scan, dtype=float))[::-1]
    if len(lams) < 2:
        raise DomainError("scan needs at least two log-SNR values")
    if np.any(lams <= lam_t):
        raise DomainError("scan values must exceed the anchor log-SNR")
    times = sched.time_from_lambda(lams)
    modes = np.array([denoising_grid_argmax(family, None, x_t, t, float(s), grid)[0] for s in times])
    moves = np.linalg.norm(np.diff(modes, axis=0), axis=1)
    k = int(np.argmax(moves))
    found = bool(moves[k] > threshold)
    lam_star = 0.5 * (lams[k] + lams[k + 1]) if found else float("nan")
    return JumpResult(found, float(lam_star), modes[k], modes[k + 1], float(moves[k]), lams, modes)


def quadrature_mass(family: GaussianMixture, t: float, grid: GridSpec) -> float:
    """Simpson integral of ``p_t`` over the grid (1D or 2D)."""
    axes = grid.axes()
    dens = np.exp(family.log_density(t, grid.nodes())).reshape(grid.points)
    for ax in reversed(axes):
        dens = simpson(dens, x=ax, axis=-1)
    return float(dens)


ORDERS = ("score", "hessian", "laplacian", "grad_laplacian")


def _richardson(fn, x, h):
    """Richardson-extrapolated central differences of ``fn`` along each axis of ``x``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = 1.0

        def central(step):
            return (np.asarray(fn(x + step * e)) - np.asarray(fn(x - step * e))) / (2.0 * step)

        cols.append((4.0 * central(0.5 * h) - central(h)) / 3.0)
    return np.stack(cols, axis=-1)


def finite_difference(family: GaussianMixture, t: float, x, order: str, h: float | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(family.dim)
    if h is None:
        h = 1e-4 * (1.0 + float(np.max(np.abs(x))))
    if order == "score":
        return _richardson(lambda v: family.log_density(t, v), x, h)
    if order == "hessian":
        return _richardson(lambda v: family.score(t, v), x, h)
    if order == "laplacian":
        return np.trace(_richardson(lambda v: family.score(t, v), x, h))
    if order == "grad_laplacian":
        return _richardson(lambda v: family.laplacian(t, v), x, h)
    raise DomainError(f"order must be one of {ORDERS}")


def finite_diff_check(family: GaussianMixture, t: float, x, order: str, h: float | None = None, floor: float = 1e-3) -> float:
    """Max abs deviation from finite differences, relative to ``max(|analytic|, floor)``."""
    x = np.asarray(x, dtype=float).reshape(family.dim)
    fd = finite_difference(family, t, x, order, h)
    analytic = getattr(family, order)(t, x)
    scale = max(float(np.max(np.abs(analytic))), floor)
    return float(np.max(np.abs(np.asarray(analytic) - fd))) / scale
