from dataclasses import dataclass, field
from typing import List, Optional

from tlsmpy.constants import (
    DEFAULT_NOISE_FLOOR,
    DEFAULT_PAD_FACTOR,
    DEFAULT_SPECTRAL_FLOOR,
    DEFAULT_TAU,
)
from tlsmpy.enums import (
    CombinationRule,
    IndicatorKind,
    LayoutKind,
    PulseKind,
    StudyKind,
    WaveMode,
    WindowKind,
)
from tlsmpy.utils import ConfigError
from tlsmpy.config.core import ConfigElement


__all__ = [
    "MediumConfig",
    "PulseConfig",
    "ArcConfig",
    "SceneConfig",
    "LayoutConfig",
    "PlanConfig",
    "NoiseConfig",
    "GridConfig",
    "StudyConfig",
    "InversionConfig",
    "ScenarioConfig",
]


@dataclass(frozen=True)
class MediumConfig(ConfigElement):
    """
    Dimensionless medium, rho = mu = 1.
    """

    mode: WaveMode = WaveMode.ANTIPLANE
    lame_lambda: float = 2.0


@dataclass(frozen=True)
class PulseConfig(ConfigElement):
    """
    Excitation waveform.
    """

    kind: PulseKind = PulseKind.TONE_BURST
    center_frequency: float = 10.0


@dataclass(frozen=True)
class ArcConfig(ConfigElement):
    """
    A straight crack segment with its interface stiffness.
    """

    start: List[float]
    end: List[float]
    # d x d, or a single scalar entry [[k]] meaning k * identity
    stiffness: List[List[float]] = field(default_factory=lambda: [[0.0]])


@dataclass(frozen=True)
class SceneConfig(ConfigElement):
    """
    Crack geometry; an empty arc list is a crack-free scene.
    """

    arcs: List[ArcConfig] = field(default_factory=list)
    # elements per unit length
    quadrature_density: float = 200.0
    # also solve at half the density and record the relative change of the traces
    mesh_check: bool = False


@dataclass(frozen=True)
class LayoutConfig(ConfigElement):
    """
    Sensing geometry and time axis.
    """

    kind: LayoutKind = LayoutKind.RING
    n_sources: int = 8
    n_receivers: int = 32
    n_steps: int = 512
    duration: float = 3.0
    # ring layouts:
    center: List[float] = field(default_factory=lambda: [0.0, 0.0])
    radius: float = 1.0
    start_angle: float = 0.0
    end_angle: Optional[float] = None  # None means a closed ring
    # line layouts:
    source_start: Optional[List[float]] = None
    source_end: Optional[List[float]] = None
    receiver_start: Optional[List[float]] = None
    receiver_end: Optional[List[float]] = None
    # unit source polarizations; default is the single out-of-plane / x1 direction
    polarizations: Optional[List[List[float]]] = None


@dataclass(frozen=True)
class PlanConfig(ConfigElement):
    """
    Damped-transform settings; sigma None means DEFAULT_SIGMA_FACTOR / duration.
    """

    sigma: Optional[float] = None
    pad_factor: int = DEFAULT_PAD_FACTOR
    window: WindowKind = WindowKind.NONE
    window_fraction: float = 0.2
    spectral_floor: float = DEFAULT_SPECTRAL_FLOOR


@dataclass(frozen=True)
class NoiseConfig(ConfigElement):
    """
    Additive white noise; snr_db None or "inf" means noiseless.
    """

    snr_db: Optional[float] = None


@dataclass(frozen=True)
class GridConfig(ConfigElement):
    """
    Sampling grid of trial points and normals.
    """

    region: List[float] = field(default_factory=lambda: [-0.5, 0.5, -0.5, 0.5])
    nx: int = 64
    ny: int = 64
    n_normals: int = 8
    # in-plane only; None means d = n
    polarization: Optional[List[float]] = None


@dataclass(frozen=True)
class StudyConfig(ConfigElement):
    """
    Which sensing study to run.
    """

    kind: StudyKind = StudyKind.FULL
    receiver_counts: List[int] = field(default_factory=lambda: [16, 12, 8])
    aperture_start: float = 0.0
    aperture_end: float = 3.141592653589793
    stages: List[SceneConfig] = field(default_factory=list)
    # scalar interface stiffness applied to every arc of the scene
    stiffness_values: List[float] = field(default_factory=lambda: [0.0, 1.0, 10.0, 100.0])


@dataclass(frozen=True)
class InversionConfig(ConfigElement):
    """
    Regularization and indicator settings.
    """

    indicator: IndicatorKind = IndicatorKind.BOTH
    tau: float = DEFAULT_TAU
    noise_floor: float = DEFAULT_NOISE_FLOOR
    flsm_frequencies: int = 5
    flsm_rule: CombinationRule = CombinationRule.ARITHMETIC_MEAN


@dataclass(frozen=True)
class ScenarioConfig(ConfigElement):
    """
    A complete scenario file.
    """

    medium: MediumConfig = field(default_factory=MediumConfig)
    pulse: PulseConfig = field(default_factory=PulseConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    layout: LayoutConfig = field(default_factory=LayoutConfig)
    plan: PlanConfig = field(default_factory=PlanConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    inversion: InversionConfig = field(default_factory=InversionConfig)
    seed: int = 0
    output_dir: Optional[str] = None
    workers: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.inversion.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), received {self.inversion.tau}")

        if self.study.kind is StudyKind.SPARSE and not self.study.receiver_counts:
            raise ConfigError("A sparse study needs at least one receiver count")

        if self.study.kind is StudyKind.EVOLUTION and not self.study.stages:
            raise ConfigError("An evolution study needs at least one stage scene")

        if self.study.kind is StudyKind.STIFFNESS_SWEEP:
            if not self.study.stiffness_values or min(self.study.stiffness_values) < 0.0:
                raise ConfigError(
                    f"A stiffness sweep needs non-negative stiffness values, received {self.study.stiffness_values}"
                )

        if self.study.kind is StudyKind.ONE_SIDED and self.layout.kind is not LayoutKind.LINE:
            raise ConfigError("A one-sided study needs a line layout")
