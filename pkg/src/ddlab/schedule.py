r"""Variance-preserving noise schedule with log-SNR linear in time.

The forward process is :math:`p(x_t \mid x) = \mathcal{N}(\alpha_t x, \sigma_t^2 I)` with
:math:`\lambda_t = \log(\alpha_t^2 / \sigma_t^2)` decreasing linearly from
``lambda_max`` at ``t = 0`` to ``lambda_min`` at ``t = horizon``. Under VP,
:math:`\alpha_t^2 = \mathrm{sigmoid}(\lambda_t)` and :math:`\sigma_t^2 = \mathrm{sigmoid}(-\lambda_t)`,
so every coefficient of the linear SDE ``dx = f x dt + g dW`` has a closed form.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import DomainError

# slack for times produced by round-tripping through log-SNR
_TIME_SLACK = 1e-12


class Coefficients(NamedTuple):
    alpha: np.ndarray
    sigma: np.ndarray
    lam: np.ndarray
    f: np.ndarray
    g_sq: np.ndarray


class BridgeCoefficients(NamedTuple):
    """Gaussian kernel ``p(x_t | x_s) = N(f_tilde x_s, g_tilde_sq I)`` for ``s < t``.

    ``psi = f_tilde**2 / g_tilde_sq`` and ``phi = f_tilde / g_tilde_sq`` are the
    coefficients of the denoising log-posterior gradient in ``x_s``.
    """

    f_tilde: float
    g_tilde_sq: float
    psi: float
    phi: float


@dataclass(frozen=True)
class NoiseSchedule:
    lambda_max: float = 10.0
    lambda_min: float = -10.0
    horizon: float = 1.0
    kind: str = "vp-linear-lambda"

    def __post_init__(self):
        if self.kind != "vp-linear-lambda":
            raise DomainError(f"unknown schedule kind {self.kind!r}")
        if not (np.isfinite(self.lambda_max) and np.isfinite(self.lambda_min)):
            raise DomainError("log-SNR endpoints must be finite")
        if not self.lambda_max > self.lambda_min:
            raise DomainError("lambda_max must exceed lambda_min (SNR must decrease)")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")

    @property
    def dlam_dt(self) -> float:
        return (self.lambda_min - self.lambda_max) / self.horizon

    def check_time(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(~np.isfinite(t)) or np.any(t < -_TIME_SLACK) or np.any(t > self.horizon + _TIME_SLACK):
            raise DomainError(f"time outside [0, {self.horizon}]")
        return np.clip(t, 0.0, self.horizon)

    def lam(self, t):
        t = self.check_time(t)
        return self.lambda_max + self.dlam_dt * t

    def alpha_sq(self, t):
        return expit(self.lam(t))

    def sigma_sq(self, t):
        return expit(-self.lam(t))

    def alpha(self, t):
        return np.sqrt(self.alpha_sq(t))

    def sigma(self, t):
        return np.sqrt(self.sigma_sq(t))

    def f(self, t):
        """Drift coefficient ``d log alpha_t / dt``."""
        return 0.5 * self.sigma_sq(t) * self.dlam_dt

    def g_sq(self, t):
        """Squared diffusion ``-(d lambda / dt) sigma_t^2``."""
        return -self.dlam_dt * self.sigma_sq(t)

    def time_from_lambda(self, lam):
        lam = np.asarray(lam, dtype=float)
        lo, hi = self.lambda_min, self.lambda_max
        span = hi - lo
        if np.any(~np.isfinite(lam)) or np.any(lam < lo - 1e-12 * span) or np.any(lam > hi + 1e-12 * span):
            raise DomainError(f"log-SNR outside [{lo}, {hi}]")
        t = (self.lambda_max - lam) / (self.lambda_max - self.lambda_min) * self.horizon
        return np.clip(t, 0.0, self.horizon)

    @property
    def t_floor(self) -> float:
        return 0.0

    @property
    def sigma_T_sq(self) -> float:
        return float(expit(-self.lambda_min))


def eval_schedule(sched: NoiseSchedule, t) -> Coefficients:
    lam = sched.lam(t)
    a2 = expit(lam)
    s2 = expit(-lam)
    return Coefficients(
        alpha=np.sqrt(a2),
        sigma=np.sqrt(s2),
        lam=lam,
        f=0.5 * s2 * sched.dlam_dt,
        g_sq=-sched.dlam_dt * s2,
    )


def bridge(sched: NoiseSchedule, s: float, t: float) -> BridgeCoefficients:
    s = float(sched.check_time(s))
    t = float(sched.check_time(t))
    if not s < t:
        raise DomainError(f"bridge needs s < t, got s={s}, t={t}")
    lam_s, lam_t = float(sched.lam(s)), float(sched.lam(t))
    if not lam_s > lam_t:
        raise DomainError("bridge endpoints too close to resolve in log-SNR")
    # 1 - exp(lam_t - lam_s), exact for nearby times
    gap = -np.expm1(lam_t - lam_s)
    alpha_s_sq = float(expit(lam_s))
    f_tilde = float(np.sqrt(expit(lam_t) / alpha_s_sq))
    g_tilde_sq = float(expit(-lam_t)) * gap
    psi = float(np.exp(lam_t)) / (alpha_s_sq * gap)
    return BridgeCoefficients(f_tilde, g_tilde_sq, psi, f_tilde / g_tilde_sq)


def time_from_lambda(sched: NoiseSchedule, lam):
    return sched.time_from_lambda(lam)
