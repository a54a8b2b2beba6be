from typing import TypeAlias

import numpy as np
import numpy.typing as npt


__all__ = [
    "VERSION",
    "FloatArray",
    "ComplexArray",
    "DEFAULT_SIGMA_FACTOR",
    "DEFAULT_PAD_FACTOR",
    "DEFAULT_SPECTRAL_FLOOR",
    "SINGULAR_DISTANCE",
    "MAX_CONDITION",
    "DEFAULT_NOISE_FLOOR",
    "DEFAULT_TAU",
    "MOROZOV_TOLERANCE",
]


VERSION = "0.1.0"

FloatArray: TypeAlias = npt.NDArray[np.float64]
ComplexArray: TypeAlias = npt.NDArray[np.complex128]

# sigma = DEFAULT_SIGMA_FACTOR / T, i.e. the damping weight drops by e^-2 over the record
DEFAULT_SIGMA_FACTOR = 2.0

DEFAULT_PAD_FACTOR = 2

# frequencies where |pulse spectrum| falls below this fraction of its max are skipped by the forward solver
DEFAULT_SPECTRAL_FLOOR = 1e-6

# kernel evaluations closer than this are rejected
SINGULAR_DISTANCE = 1e-8

MAX_CONDITION = 1e14

# lower bound of the Morozov target, as a fraction of the trial norm
DEFAULT_NOISE_FLOOR = 1e-3

DEFAULT_TAU = 0.6

# bisection stops once |residual - target| <= MOROZOV_TOLERANCE * target
MOROZOV_TOLERANCE = 1e-3
