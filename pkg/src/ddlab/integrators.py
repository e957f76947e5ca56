"""Fixed-step integrators for augmented states ``(x, aux)``.

Deterministic systems use Heun's method. Stochastic systems use Euler-Maruyama,
optionally with the Milstein correction on the auxiliary channel: its noise loading
depends on ``x``, so plain Euler-Maruyama only reaches strong order one half there,
while ``x`` itself has additive noise and is already order one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import DomainError, IntegrationError
from .schedule import NoiseSchedule

SPACINGS = ("uniform-t", "uniform-lambda", "refined-anchor")
SCHEMES = ("euler-maruyama", "milstein")


def _refined_fraction(n: int, head: float, density: float) -> np.ndarray:
    """Nodes on [0, 1] with ``density`` times more points in ``[0, head]`` than elsewhere."""
    u = np.linspace(0.0, 1.0, n + 1)
    w_head = head * density
    total = w_head + (1.0 - head)
    c = u * total
    out = np.where(c <= w_head, c / density, head + (c - w_head))
    out[0], out[-1] = 0.0, 1.0
    return out


@dataclass(frozen=True, eq=False)
class TimeGrid:
    times: np.ndarray
    spacing: str = "uniform-t"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 2:
            raise DomainError("a grid needs at least two nodes")
        steps = np.diff(t)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise DomainError("grid nodes must be strictly monotone")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def build(
        cls,
        sched: NoiseSchedule,
        t_start: float,
        t_end: float,
        n_steps: int = 1024,
        spacing: str = "uniform-lambda",
        head: float = 0.01,
        density: float = 10.0,
    ) -> "TimeGrid":
        """Grid from ``t_start`` to ``t_end`` (either direction), endpoints exact.

        ``refined-anchor`` is uniform in log-SNR except that the first ``head``
        fraction of the log-SNR interval, next to ``t_start``, is ``density`` times denser.
        """
        if int(n_steps) < 1:
            raise DomainError("n_steps must be at least 1")
        n = int(n_steps)
        t0 = float(sched.check_time(t_start))
        t1 = float(sched.check_time(t_end))
        if t0 == t1:
            raise DomainError("grid endpoints coincide")
        if spacing == "uniform-t":
            u = np.linspace(0.0, 1.0, n + 1)
        elif spacing in ("uniform-lambda", "refined-anchor"):
            # linear log-SNR makes both spacings affine in t
            u = np.linspace(0.0, 1.0, n + 1) if spacing == "uniform-lambda" else _refined_fraction(n, head, density)
        else:
            raise DomainError(f"unknown spacing {spacing!r}")
        times = t0 + (t1 - t0) * u
        times[0], times[-1] = t0, t1
        return cls(times, spacing)

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def direction(self) -> str:
        return "forward" if self.times[-1] > self.times[0] else "reverse"

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at every node (or only the two endpoints when not stored)."""

    times: np.ndarray  # (M,)
    x: np.ndarray  # (M, N, D)
    aux: np.ndarray  # (M, N)
    seed: int | None = None
    path_offset: int = 0

    @property
    def x_final(self) -> np.ndarray:
        return self.x[-1]

    @property
    def aux_final(self) -> np.ndarray:
        return self.aux[-1]


def _as_state(x0, aux0):
    x = np.array(x0, dtype=float, ndmin=2)
    aux = np.zeros(len(x)) if aux0 is None else np.array(aux0, dtype=float, ndmin=1).copy()
    if aux.shape != (len(x),):
        raise DomainError(f"aux must have shape ({len(x)},)")
    return x, aux


def _check_finite(x, aux, node):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(aux))):
        raise IntegrationError("non-finite state", node)


def integrate_ode(rhs, grid: TimeGrid, x0, aux0=None, store: bool = True) -> Trajectory:
    """Heun (explicit trapezoid) steps of ``rhs(t, x, aux) -> (dx, daux)``."""
    x, aux = _as_state(x0, aux0)
    _check_finite(x, aux, 0)
    ts = grid.times
    xs, auxs = [x.copy()], [aux.copy()]
    for k in range(grid.n_steps):
        h = ts[k + 1] - ts[k]
        dx1, da1 = rhs(ts[k], x, aux)
        xp, ap = x + h * dx1, aux + h * da1
        dx2, da2 = rhs(ts[k + 1], xp, ap)
        x = x + 0.5 * h * (dx1 + dx2)
        aux = aux + 0.5 * h * (da1 + da2)
        _check_finite(x, aux, k + 1)
        if store:
            xs.append(x.copy())
            auxs.append(aux.copy())
    if not store:
        xs.append(x)
        auxs.append(aux)
        times = ts[[0, -1]]
    else:
        times = ts
    return Trajectory(np.asarray(times), np.stack(xs), np.stack(auxs))


def integrate_sde(
    rhs,
    grid: TimeGrid,
    x0,
    aux0=None,
    seed: int = 0,
    scheme: str = "euler-maruyama",
    path_offset: int = 0,
    increments: np.ndarray | None = None,
    store: bool = True,
) -> Trajectory:
    """Stochastic steps of ``rhs(t, x, aux, jac) -> SdeRates`` with one shared ``dW`` per step.

    ``dW`` for step ``k`` and path ``p`` is ``sqrt(|dt|)`` times row ``path_offset + p``
    of the counter-based block ``(seed, k)``. Pass ``increments`` of shape
    ``(n_steps, N, D)`` to supply the Brownian increments directly.
    """
    if scheme not in SCHEMES:
        raise DomainError(f"unknown scheme {scheme!r}")
    seed = rng.check_seed(seed)
    milstein = scheme == "milstein"
    x, aux = _as_state(x0, aux0)
    n, dim = x.shape
    _check_finite(x, aux, 0)
    if increments is not None:
        increments = np.asarray(increments, dtype=float)
        if increments.shape != (grid.n_steps, n, dim):
            raise DomainError(f"increments must have shape {(grid.n_steps, n, dim)}")
    ts = grid.times
    xs, auxs = [x.copy()], [aux.copy()]
    for k in range(grid.n_steps):
        h = ts[k + 1] - ts[k]
        if increments is None:
            dW = np.sqrt(abs(h)) * rng.step_normals(seed, k, n, dim, path_offset)
        else:
            dW = increments[k]
        r = rhs(ts[k], x, aux, jac=milstein)
        x_new = x + h * r.drift_x + r.diffusion * dW
        aux = aux + h * r.drift_aux + r.diffusion * np.einsum("nd,nd->n", r.aux_loading, dW)
        if milstein and r.diffusion > 0:
            J = r.aux_loading_jac
            quad = np.einsum("ni,nij,nj->n", dW, J, dW) - abs(h) * np.trace(J, axis1=1, axis2=2)
            aux = aux + 0.5 * r.diffusion**2 * quad
        x = x_new
        _check_finite(x, aux, k + 1)
        if store:
            xs.append(x.copy())
            auxs.append(aux.copy())
    if not store:
        xs.append(x)
        auxs.append(aux)
        times = ts[[0, -1]]
    else:
        times = ts
    return Trajectory(np.asarray(times), np.stack(xs), np.stack(auxs), seed, path_offset)
