"""Score oracles ``s(t, x)`` with exact divergence.

Approximation error is built in by construction so that it is known exactly:
a :class:`MismatchedScore` is the exact score of a *different* mixture, and a
:class:`PerturbedScore` adds a constant vector field ``eps * b`` to the exact score.
"""

from __future__ import annotations

import numpy as np

from .density import GaussianMixture
from .errors import DomainError


class ScoreModel:
    """Base class. ``family`` is the mixture whose derivatives the model uses."""

    variant = "abstract"

    def __init__(self, family: GaussianMixture):
        self.family = family

    @property
    def dim(self) -> int:
        return self.family.dim

    @property
    def schedule(self):
        return self.family.schedule

    def score(self, t, x):
        return self.family.score(t, x)

    def divergence(self, t, x):
        return self.family.laplacian(t, x)

    def jacobian(self, t, x):
        """``d s / d x``, needed by the Milstein correction of the log-density channel."""
        return self.family.hessian(t, x)

    def __repr__(self):
        return f"{type(self).__name__}({self.family!r})"


class ExactScore(ScoreModel):
    variant = "exact"


class MismatchedScore(ScoreModel):
    """Exact score of ``q_t``, the diffusion of another mixture ``q_0``."""

    variant = "mismatched"


class PerturbedScore(ScoreModel):
    variant = "perturbed"

    def __init__(self, family: GaussianMixture, bias, eps: float):
        super().__init__(family)
        b = np.asarray(bias, dtype=float).reshape(-1)
        if b.shape != (family.dim,):
            raise DomainError(f"bias must have shape ({family.dim},)")
        if not np.isfinite(eps):
            raise DomainError("eps must be finite")
        self.bias = b
        self.eps = float(eps)

    @property
    def offset(self) -> np.ndarray:
        return self.eps * self.bias

    def score(self, t, x):
        return self.family.score(t, x) + self.offset

    # constant field: divergence and jacobian are those of the exact score


def model_score(m: ScoreModel, t, x):
    return m.score(t, x)


def model_divergence(m: ScoreModel, t, x):
    return m.divergence(t, x)
