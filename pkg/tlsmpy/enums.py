from enum import Enum


__all__ = [
    "BaseStrEnum",
    "WaveMode",
    "PulseKind",
    "LayoutKind",
    "WindowKind",
    "StudyKind",
    "IndicatorKind",
    "CombinationRule",
    "MorozovStatus",
]


class BaseStrEnum(str, Enum):
    """
    Base class for str enums.
    """

    def __str__(self) -> str:
        return self.value

    def __repr__(self) -> str:
        return str(self)


class WaveMode(BaseStrEnum):
    """
    Polarization of the 2D wave problem.
    """

    ANTIPLANE = "antiplane"  # scalar shear, displacement dimension 1
    INPLANE = "inplane"  # elastic P-SV, displacement dimension 2

    @property
    def dimension(self) -> int:
        return 1 if self is WaveMode.ANTIPLANE else 2


class PulseKind(BaseStrEnum):
    """
    Excitation waveforms.
    """

    TONE_BURST = "tone_burst"
    GAUSSIAN_DERIVATIVE = "gaussian_derivative"


class LayoutKind(BaseStrEnum):
    """
    Placement of sources and receivers.
    """

    RING = "ring"
    LINE = "line"


class WindowKind(BaseStrEnum):
    """
    Spectral taper used when synthesizing time signals.
    """

    NONE = "none"
    TUKEY = "tukey"


class StudyKind(BaseStrEnum):
    """
    Sensing studies a scenario can run.
    """

    FULL = "full"
    SPARSE = "sparse"
    PARTIAL_APERTURE = "partial_aperture"
    ONE_SIDED = "one_sided"
    EVOLUTION = "evolution"
    STIFFNESS_SWEEP = "stiffness_sweep"


class IndicatorKind(BaseStrEnum):
    """
    Which imaging functionals to compute.
    """

    TLSM = "tlsm"
    FLSM = "flsm"
    BOTH = "both"


class CombinationRule(BaseStrEnum):
    """
    How per-frequency LSM maps are merged.
    """

    ARITHMETIC_MEAN = "arithmetic_mean"
    GEOMETRIC_MEAN = "geometric_mean"


class MorozovStatus(BaseStrEnum):
    """
    Outcome of a discrepancy-principle search.
    """

    CONVERGED = "converged"
    UNINFORMATIVE = "uninformative"  # target >= |rhs|, nothing to fit
    LOWER_BOUND = "lower_bound"  # target below the unregularized residual
