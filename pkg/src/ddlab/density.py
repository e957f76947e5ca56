"""Isotropic Gaussian mixtures diffused by the linear SDE.

Component ``i`` of the data distribution is ``N(mu_i, c_i I)``; at time ``t`` it is
``N(alpha_t mu_i, (alpha_t^2 c_i + sigma_t^2) I)``. All derivatives of ``log p_t``
up to the gradient of the Laplacian are closed-form sums over posterior
responsibilities, computed in log space.

Shapes: ``x`` is ``(..., D)``; ``t`` is a scalar or broadcasts against ``x.shape[:-1]``.
Outputs drop the trailing axis for scalars (``(...,)``) and keep it for vectors.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import expit, logsumexp

from .errors import DomainError
from .schedule import NoiseSchedule

_LOG_2PI = float(np.log(2.0 * np.pi))
MAX_DIM = 8


class _Parts(NamedTuple):
    logp: np.ndarray  # (N,)
    resp: np.ndarray  # (N, K)
    u: np.ndarray  # (N, K, D): (mean_i - x) / var_i
    var: np.ndarray  # (N, K)
    batch: tuple


class GaussianMixture:
    """Data distribution ``sum_i w_i N(mu_i, c_i I)`` and its diffused marginals."""

    def __init__(self, weights, means, variances, schedule: NoiseSchedule | None = None):
        w = np.atleast_1d(np.asarray(weights, dtype=float))
        mu = np.asarray(means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        c = np.atleast_1d(np.asarray(variances, dtype=float))
        if w.ndim != 1 or mu.ndim != 2 or c.ndim != 1:
            raise DomainError("weights (K,), means (K, D) and variances (K,) expected")
        if not (len(w) == len(mu) == len(c)) or len(w) == 0:
            raise DomainError("weights, means and variances disagree on component count")
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise DomainError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise DomainError(f"weights sum to {w.sum()}, expected 1")
        if np.any(c <= 0) or not np.all(np.isfinite(c)):
            raise DomainError("component variances must be positive")
        if not np.all(np.isfinite(mu)):
            raise DomainError("means must be finite")
        if not 1 <= mu.shape[1] <= MAX_DIM:
            raise DomainError(f"dimension must be in [1, {MAX_DIM}]")
        self.weights = w
        self.log_weights = np.log(w)
        self.means = mu
        self.variances = c
        self.schedule = schedule if schedule is not None else NoiseSchedule()
        for arr in (self.weights, self.log_weights, self.means, self.variances):
            arr.setflags(write=False)

    @classmethod
    def renormalized(cls, weights, means, variances, schedule=None):
        w = np.asarray(weights, dtype=float)
        return cls(w / w.sum(), means, variances, schedule)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def __repr__(self):
        return f"GaussianMixture(K={self.n_components}, D={self.dim})"

    def component_params(self, t):
        """Means ``(K, D)`` and variances ``(K,)`` of the diffused components at scalar ``t``."""
        lam = float(self.schedule.lam(t))
        a2, s2 = expit(lam), expit(-lam)
        return np.sqrt(a2) * self.means, a2 * self.variances + s2

    # -- core evaluation -------------------------------------------------

    def _parts(self, t, x) -> _Parts:
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim:
            raise DomainError(f"expected trailing dimension {self.dim}, got shape {x.shape}")
        batch = x.shape[:-1]
        xf = x.reshape(-1, self.dim)
        t = np.asarray(t, dtype=float)
        lam = self.schedule.lam(t)
        if lam.ndim == 0:
            a2, s2 = expit(lam), expit(-lam)
            var = np.broadcast_to(a2 * self.variances + s2, (len(xf), self.n_components))
            diff = np.sqrt(a2) * self.means[None] - xf[:, None, :]
        else:
            lam = np.broadcast_to(lam, batch).reshape(-1)
            a2, s2 = expit(lam), expit(-lam)
            var = a2[:, None] * self.variances[None] + s2[:, None]
            diff = np.sqrt(a2)[:, None, None] * self.means[None] - xf[:, None, :]
        sq = np.einsum("nkd,nkd->nk", diff, diff)
        logj = self.log_weights - 0.5 * self.dim * (_LOG_2PI + np.log(var)) - 0.5 * sq / var
        logp = logsumexp(logj, axis=1)
        resp = np.exp(logj - logp[:, None])
        return _Parts(logp, resp, diff / var[..., None], var, batch)

    def log_density(self, t, x):
        p = self._parts(t, x)
        return p.logp.reshape(p.batch)

    def score(self, t, x):
        p = self._parts(t, x)
        s = np.einsum("nk,nkd->nd", p.resp, p.u)
        return s.reshape(p.batch + (self.dim,))

    def _score_lap(self, p: _Parts):
        s = np.einsum("nk,nkd->nd", p.resp, p.u)
        a = np.einsum("nkd,nkd->nk", p.u, p.u) - self.dim / p.var
        lap = np.einsum("nk,nk->n", p.resp, a) - np.einsum("nd,nd->n", s, s)
        return s, a, lap

    def _hessian(self, p: _Parts, s):
        outer = np.einsum("nk,nki,nkj->nij", p.resp, p.u, p.u)
        diag = np.einsum("nk,nk->n", p.resp, 1.0 / p.var)
        eye = np.eye(self.dim)
        return outer - diag[:, None, None] * eye - np.einsum("ni,nj->nij", s, s)

    def hessian(self, t, x):
        p = self._parts(t, x)
        s = np.einsum("nk,nkd->nd", p.resp, p.u)
        return self._hessian(p, s).reshape(p.batch + (self.dim, self.dim))

    def laplacian(self, t, x):
        p = self._parts(t, x)
        return self._score_lap(p)[2].reshape(p.batch)

    def score_and_laplacian(self, t, x):
        p = self._parts(t, x)
        s, _, lap = self._score_lap(p)
        return s.reshape(p.batch + (self.dim,)), lap.reshape(p.batch)

    def grad_laplacian(self, t, x):
        return self.derivatives(t, x).grad_laplacian

    def derivatives(self, t, x) -> "Derivatives":
        """Everything up to third order from a single responsibility pass."""
        p = self._parts(t, x)
        s, a, lap = self._score_lap(p)
        hess = self._hessian(p, s)
        # d/dx of sum_i r_i a_i - |s|^2 with dr_i = r_i (u_i - s), da_i = -2 u_i / var_i
        centred = p.u - s[:, None, :]
        grad_lap = (
            np.einsum("nk,nkd->nd", p.resp * a, centred)
            - 2.0 * np.einsum("nk,nkd->nd", p.resp / p.var, p.u)
            - 2.0 * np.einsum("nij,nj->ni", hess, s)
        )
        b, d = p.batch, self.dim
        return Derivatives(
            p.logp.reshape(b),
            s.reshape(b + (d,)),
            hess.reshape(b + (d, d)),
            lap.reshape(b),
            grad_lap.reshape(b + (d,)),
        )

    # -- sampling --------------------------------------------------------

    def sample_p0(self, rng: np.random.Generator, n: int | None = None):
        return self.sample_pt(0.0, rng, n)

    def sample_pt(self, t, rng: np.random.Generator, n: int | None = None):
        """Exact ancestral samples from ``p_t``; shape ``(D,)`` if ``n`` is None else ``(n, D)``."""
        m = 1 if n is None else int(n)
        mean, var = self.component_params(t)
        k = rng.choice(self.n_components, size=m, p=self.weights)
        z = rng.standard_normal((m, self.dim))
        out = mean[k] + np.sqrt(var[k])[:, None] * z
        return out[0] if n is None else out

    # moments of p_t, used by tests and sanity checks
    def mean(self, t=0.0):
        mean, _ = self.component_params(t)
        return self.weights @ mean

    def covariance(self, t=0.0):
        mean, var = self.component_params(t)
        m = self.weights @ mean
        second = np.einsum("k,ki,kj->ij", self.weights, mean, mean) + np.sum(self.weights * var) * np.eye(self.dim)
        return second - np.outer(m, m)


class Derivatives(NamedTuple):
    log_density: np.ndarray
    score: np.ndarray
    hessian: np.ndarray
    laplacian: np.ndarray
    grad_laplacian: np.ndarray


def standard_normal_family(dim: int = 1, schedule: NoiseSchedule | None = None) -> GaussianMixture:
    """``N(0, I)`` data: stationary under any VP schedule."""
    return GaussianMixture([1.0], np.zeros((1, dim)), [1.0], schedule)


def fokker_planck_residual(fam: GaussianMixture, t: float, x, h: float = 1e-5):
    r"""``d/dt log p_t(x)`` by central differences minus the log-form Fokker-Planck right side.

    The right side is ``-f D + g^2/2 Lap log p - score . (f x - g^2/2 score)``.
    """
    sched = fam.schedule
    t = float(t)
    if t - h < 0.0 or t + h > sched.horizon:
        raise DomainError(f"t={t} too close to the ends of [0, {sched.horizon}] for step {h}")
    x = np.asarray(x, dtype=float)
    dlogp = (fam.log_density(t + h, x) - fam.log_density(t - h, x)) / (2.0 * h)
    f, g2 = float(sched.f(t)), float(sched.g_sq(t))
    d = fam.derivatives(t, x)
    drift = f * x - 0.5 * g2 * d.score
    rhs = -f * fam.dim + 0.5 * g2 * d.laplacian - np.sum(d.score * drift, axis=-1)
    return dlogp - rhs
