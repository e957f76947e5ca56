"""Right-hand sides of the density-augmented SDEs and ODEs.

Every evaluator works on a batch: ``x`` has shape ``(N, D)`` and the scalar
auxiliary channel ``aux`` has shape ``(N,)``. Time is a scalar. Stochastic systems
return :class:`SdeRates`; the Brownian increment ``dW`` (one ``D``-vector per path)
drives ``x`` through ``diffusion * dW`` and the auxiliary channel through
``diffusion * aux_loading . dW``, so both share the same noise.

Reverse-time systems are written in forward-time notation: the integrator steps
with negative ``dt`` and uses ``sqrt(|dt|)`` for the noise scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .errors import DomainError, SingularModeError
from .schedule import bridge
from .score_models import ScoreModel

SINGULAR_COND = 1e12


class SdeRates(NamedTuple):
    drift_x: np.ndarray  # (N, D)
    drift_aux: np.ndarray  # (N,)
    diffusion: float  # scalar multiplying dW for x and for the aux loading
    aux_loading: np.ndarray  # (N, D)
    aux_loading_jac: np.ndarray | None = None  # (N, D, D): d(aux_loading)/dx


class OdeRates(NamedTuple):
    drift_x: np.ndarray
    drift_aux: np.ndarray


KINDS = (
    "reverse-sde",
    "forward-sde",
    "pf-ode",
    "approx-reverse-sde",
    "approx-forward-sde",
    "beta-forward",
    "beta-reverse",
    "mode-ode",
    "hp-ode",
)


@dataclass(frozen=True, eq=False)
class System:
    """An augmented system: the score model plus kind-specific parameters.

    Exact-score kinds differentiate ``model.family`` directly, so a perturbation on
    the model is ignored by them. ``beta`` may be a constant or a function of ``t``.
    ``anchor`` is ``(t_anchor, x_anchor)`` for the mode and HP kinds.
    """

    kind: str
    model: ScoreModel
    beta: float | Callable[[float], float] | None = None
    anchor: tuple | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown system kind {self.kind!r}")
        if self.kind.startswith("beta") and self.beta is None:
            raise DomainError("beta systems need a beta value or function")
        if self.kind in ("mode-ode", "hp-ode") and self.anchor is not None:
            t_anchor = float(self.anchor[0])
            if not 0.0 < t_anchor <= self.schedule.horizon:
                raise DomainError("anchor time must lie in (0, T]")

    @property
    def family(self):
        return self.model.family

    @property
    def schedule(self):
        return self.model.family.schedule

    @property
    def dim(self) -> int:
        return self.model.dim

    def beta_at(self, t: float) -> float:
        b = self.beta(t) if callable(self.beta) else self.beta
        b = float(b)
        if not b >= 0.0:
            raise DomainError(f"beta must be non-negative, got {b}")
        return b


def _coeffs(system: System, t):
    sched = system.schedule
    return float(sched.f(t)), float(sched.g_sq(t))


def _sq(v):
    return np.einsum("nd,nd->n", v, v)


def _exact(system, t, x, jac):
    fam = system.family
    if jac:
        d = fam.derivatives(t, x)
        return d.score, d.laplacian, d.hessian
    s, lap = fam.score_and_laplacian(t, x)
    return s, lap, None


def rhs_reverse_sde_aug(system: System, t, x, aux=None, jac: bool = False) -> SdeRates:
    f, g2 = _coeffs(system, t)
    s, _, hess = _exact(system, t, x, jac)
    return SdeRates(f * x - g2 * s, -f * system.dim - 0.5 * g2 * _sq(s), np.sqrt(g2), s, hess)


def rhs_forward_sde_aug(system: System, t, x, aux=None, jac: bool = False) -> SdeRates:
    f, g2 = _coeffs(system, t)
    s, lap, hess = _exact(system, t, x, jac)
    # -div(f x - g^2 score) + g^2/2 |score|^2
    F = -f * system.dim + g2 * lap + 0.5 * g2 * _sq(s)
    return SdeRates(f * x, F, np.sqrt(g2), s, hess)


def rhs_pf_ode_aug(system: System, t, x, aux=None) -> OdeRates:
    f, g2 = _coeffs(system, t)
    m = system.model
    s = m.score(t, x)
    return OdeRates(f * x - 0.5 * g2 * s, -f * system.dim + 0.5 * g2 * m.divergence(t, x))


def _model_terms(system, t, x, jac):
    m = system.model
    return m.score(t, x), (m.jacobian(t, x) if jac else None)


def rhs_approx_reverse_sde_aug(system: System, t, x, aux=None, jac: bool = False) -> SdeRates:
    f, g2 = _coeffs(system, t)
    s, J = _model_terms(system, t, x, jac)
    return SdeRates(f * x - g2 * s, -f * system.dim - 0.5 * g2 * _sq(s), np.sqrt(g2), s, J)


def rhs_approx_forward_sde_aug(system: System, t, x, aux=None, jac: bool = False) -> SdeRates:
    f, g2 = _coeffs(system, t)
    s, J = _model_terms(system, t, x, jac)
    div = system.model.divergence(t, x)
    return SdeRates(f * x, -f * system.dim + g2 * (0.5 * _sq(s) + div), np.sqrt(g2), s, J)


def rhs_beta_sde_aug(system: System, t, x, aux=None, direction: str = "reverse", jac: bool = False) -> SdeRates:
    """Augmented dynamics of the SDE family sharing the marginals ``p_t`` for any ``beta >= 0``."""
    f, g2 = _coeffs(system, t)
    beta = system.beta_at(t)
    s, lap, hess = _exact(system, t, x, jac)
    D = system.dim
    if direction == "forward":
        drift = f * x - (0.5 - beta) * g2 * s
        daux = -f * D + (0.5 + beta) * g2 * lap + beta * g2 * _sq(s)
    elif direction == "reverse":
        drift = f * x - (0.5 + beta) * g2 * s
        daux = -(f * D + (beta - 0.5) * g2 * lap + beta * g2 * _sq(s))
    else:
        raise DomainError(f"direction must be 'forward' or 'reverse', got {direction!r}")
    return SdeRates(drift, daux, np.sqrt(2.0 * beta * g2), s, hess)


def cov_rate(f1_rate, f2_rate, div_f1, score):
    """Log-density rate of a particle moving with ``f2`` through the marginals of the flow ``f1``."""
    f1 = np.asarray(f1_rate, dtype=float)
    f2 = np.asarray(f2_rate, dtype=float)
    s = np.asarray(score, dtype=float)
    if f1.shape != f2.shape or f1.shape != s.shape:
        raise DomainError(f"shape mismatch: {f1.shape}, {f2.shape}, {s.shape}")
    return -np.asarray(div_f1, dtype=float) + np.sum((f2 - f1) * s, axis=-1)


def rhs_hp_ode_aug(system: System, s, y, aux=None) -> OdeRates:
    f, g2 = _coeffs(system, s)
    score, lap = system.family.score_and_laplacian(s, y)
    pf = f * y - 0.5 * g2 * score
    hp = f * y - g2 * score
    div_pf = f * system.dim - 0.5 * g2 * lap
    return OdeRates(hp, cov_rate(pf, hp, div_pf, score))


def _check_anchor(system):
    if system.anchor is None:
        raise DomainError("mode-tracking needs an anchor (t_anchor, x_anchor)")
    return float(system.anchor[0])


def rhs_mode_ode(system: System, s, y) -> np.ndarray:
    """``dy/ds`` of the mode-tracking curve; the HP-ODE drift plus a third-order correction."""
    t_anchor = _check_anchor(system)
    s = float(s)
    if s > t_anchor:
        raise DomainError(f"mode ODE is defined for s <= t_anchor, got s={s}")
    y = np.asarray(y, dtype=float)
    f, g2 = _coeffs(system, s)
    d = system.family.derivatives(s, y)
    base = f * y - g2 * d.score
    sched = system.schedule
    # at the anchor psi is infinite and the correction vanishes
    if s >= t_anchor or float(sched.lam(s)) <= float(sched.lam(t_anchor)):
        return base
    psi = bridge(sched, s, t_anchor).psi
    if not np.isfinite(psi):
        return base
    A = d.hessian - psi * np.eye(system.dim)
    corr = np.empty_like(y)
    for i in range(len(y)):
        cond = np.linalg.cond(A[i])
        if not cond < SINGULAR_COND:
            raise SingularModeError(s, y[i], cond)
        corr[i] = scipy.linalg.solve(A[i], d.grad_laplacian[i], assume_a="sym")
    return base - 0.5 * g2 * corr


def make_sde_rhs(system: System, direction: str | None = None):
    """Bind a stochastic system into ``rhs(t, x, aux, jac) -> SdeRates``."""
    table = {
        "reverse-sde": rhs_reverse_sde_aug,
        "forward-sde": rhs_forward_sde_aug,
        "approx-reverse-sde": rhs_approx_reverse_sde_aug,
        "approx-forward-sde": rhs_approx_forward_sde_aug,
    }
    if system.kind in table:
        fn = table[system.kind]
        return lambda t, x, aux, jac=False: fn(system, t, x, aux, jac=jac)
    if system.kind in ("beta-forward", "beta-reverse"):
        d = direction or system.kind.split("-")[1]
        return lambda t, x, aux, jac=False: rhs_beta_sde_aug(system, t, x, aux, direction=d, jac=jac)
    raise DomainError(f"{system.kind!r} is not a stochastic system")


def make_ode_rhs(system: System):
    """Bind a deterministic system into ``rhs(t, x, aux) -> OdeRates``."""
    if system.kind == "pf-ode":
        return lambda t, x, aux: rhs_pf_ode_aug(system, t, x, aux)
    if system.kind == "hp-ode":
        return lambda t, x, aux: rhs_hp_ode_aug(system, t, x, aux)
    if system.kind == "mode-ode":
        return lambda t, x, aux: OdeRates(rhs_mode_ode(system, t, x), np.zeros(len(x)))
    raise DomainError(f"{system.kind!r} is not a deterministic system")
