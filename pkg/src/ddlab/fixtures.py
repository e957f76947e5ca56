"""Named test distributions shared by tests, experiments and the CLI."""

from __future__ import annotations

import numpy as np

from .density import GaussianMixture, standard_normal_family
from .schedule import NoiseSchedule

# three-component 1D mixture with a discontinuous denoising-mode curve;
# the published weights sum to 0.998 and are renormalised here
FIX_C_WEIGHTS_PUBLISHED = (0.274, 0.274, 0.45)
FIX_C_MEANS = (-2.5, -1.5, 1.0)
FIX_C_VARIANCE = 0.1
FIX_C_ANCHOR_X = -2.5
FIX_C_ANCHOR_LAMBDA = -8.0


def stationary(dim: int = 1, schedule: NoiseSchedule | None = None) -> GaussianMixture:
    return standard_normal_family(dim, schedule)


def fix_b(schedule: NoiseSchedule | None = None) -> GaussianMixture:
    """Symmetric bimodal 1D mixture ``0.5 N(-2, 0.25) + 0.5 N(2, 0.25)``."""
    return GaussianMixture([0.5, 0.5], [[-2.0], [2.0]], [0.25, 0.25], schedule)


def fix_c(schedule: NoiseSchedule | None = None) -> GaussianMixture:
    return GaussianMixture.renormalized(
        FIX_C_WEIGHTS_PUBLISHED, np.array(FIX_C_MEANS)[:, None], [FIX_C_VARIANCE] * 3, schedule
    )


def gaussian_d4(schedule: NoiseSchedule | None = None) -> GaussianMixture:
    """Single isotropic Gaussian in four dimensions."""
    return GaussianMixture([1.0], [[0.5, -0.3, 0.2, 0.1]], [0.5], schedule)


def four_blobs(schedule: NoiseSchedule | None = None) -> GaussianMixture:
    """2D mixture on the corners of a square; the bottom-left component is heaviest."""
    means = [[-2.0, -2.0], [2.0, -2.0], [-2.0, 2.0], [2.0, 2.0]]
    return GaussianMixture([0.4, 0.2, 0.2, 0.2], means, [0.3] * 4, schedule)


FIXTURES = {
    "stationary": stationary,
    "fix-b": fix_b,
    "fix-c": fix_c,
    "gaussian-d4": gaussian_d4,
    "four-blobs": four_blobs,
}
