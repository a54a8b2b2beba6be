"""
Physical model, excitation, geometry, sensing layout and the damped transform
shared by the forward solver and the inversion.

All quantities are dimensionless with rho = mu = 1 and the specimen size as the
unit of length. Time signals are sampled at t_k = k * dt, k = 1..n_steps; a
signal array of length n_steps holds those samples in order.

The transform convention follows the Laplace-domain framework: a causal signal
x(t) maps to X(s) = int x(t) exp(i s t) dt with s = eta + i sigma, sigma > 0.
Only eta >= 0 is stored since every time signal is real.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.fft import irfft, rfft, rfftfreq
from scipy.signal.windows import tukey

from tlsmpy.constants import (
    ComplexArray,
    DEFAULT_PAD_FACTOR,
    DEFAULT_SIGMA_FACTOR,
    DEFAULT_SPECTRAL_FLOOR,
    FloatArray,
)
from tlsmpy.enums import LayoutKind, PulseKind, WaveMode, WindowKind
from tlsmpy.utils import ConfigError, LayoutError, next_power_of_two
from tlsmpy.config.schema import (
    LayoutConfig,
    MediumConfig,
    PlanConfig,
    PulseConfig,
    SceneConfig,
)


__all__ = [
    "MediumModel",
    "Pulse",
    "CrackArc",
    "CrackScene",
    "SensingLayout",
    "TransformPlan",
    "eval_pulse",
    "pulse_spectrum",
    "make_layout",
    "make_plan",
    "downsample_mask",
    "aperture_mask",
    "plan_from_config",
    "spectral_support",
]

logger = logging.getLogger(__name__)


# ========== MEDIUM AND PULSE ===========:


@dataclass(frozen=True)
class MediumModel:
    """
    Homogeneous isotropic background.
    """

    mode: WaveMode = WaveMode.ANTIPLANE
    lame_lambda: float = 2.0
    density: float = 1.0
    shear_modulus: float = 1.0

    def __post_init__(self) -> None:
        if self.density != 1.0 or self.shear_modulus != 1.0:
            raise ConfigError("The scaling fixes density = shear modulus = 1")

        if self.lame_lambda < 0.0:
            raise ConfigError(f"lame_lambda must be >= 0, received {self.lame_lambda}")

    @property
    def dimension(self) -> int:
        return self.mode.dimension

    @property
    def shear_speed(self) -> float:
        return float(np.sqrt(self.shear_modulus / self.density))

    @property
    def pressure_speed(self) -> float:
        return float(np.sqrt((self.lame_lambda + 2.0 * self.shear_modulus) / self.density))

    @classmethod
    def from_config(cls, config: MediumConfig) -> "MediumModel":
        return cls(mode=config.mode, lame_lambda=config.lame_lambda)


@dataclass(frozen=True)
class Pulse:
    """
    Causal, compactly supported excitation chi(t).
    """

    kind: PulseKind = PulseKind.TONE_BURST
    center_frequency: float = 10.0

    def __post_init__(self) -> None:
        if not self.center_frequency > 0.0:
            raise ConfigError(
                f"center_frequency must be positive, received {self.center_frequency}"
            )

    @property
    def t_end(self) -> float:
        if self.kind is PulseKind.TONE_BURST:
            return 5.0 / self.center_frequency

        return 16.0 * self._gaussian_width

    @property
    def _gaussian_width(self) -> float:
        return 1.0 / (2.0 * np.pi * self.center_frequency)

    @classmethod
    def from_config(cls, config: PulseConfig) -> "Pulse":
        return cls(kind=config.kind, center_frequency=config.center_frequency)


def eval_pulse(p: Pulse, t: float | np.ndarray) -> float | FloatArray:
    """
    chi(t), exactly zero outside the open support (0, t_end).
    """
    t = np.asarray(t, dtype=float)
    inside = (t > 0.0) & (t < p.t_end)
    f = p.center_frequency
    if p.kind is PulseKind.TONE_BURST:
        values = np.sin(0.2 * np.pi * f * t) * np.sin(2.0 * np.pi * f * t)

    else:
        width = p._gaussian_width
        u = (t - 8.0 * width) / width
        values = -u * np.exp(0.5 * (1.0 - u**2))

    result = np.where(inside, values, 0.0)
    return float(result) if result.ndim == 0 else result


# ========== GEOMETRY ===========:


@dataclass(frozen=True, eq=False)
class CrackArc:
    """
    Straight open crack segment with a symmetric PSD interface stiffness.
    """

    start: Tuple[float, float]
    end: Tuple[float, float]
    stiffness: FloatArray

    def __post_init__(self) -> None:
        if self.length <= 0.0:
            raise ConfigError(f"Crack arc {self.start} -> {self.end} has zero length")

        stiffness = np.atleast_2d(np.asarray(self.stiffness, dtype=float))
        tolerance = 1e-12 * (1.0 + np.abs(stiffness).max())
        if stiffness.shape[0] != stiffness.shape[1] or np.abs(stiffness - stiffness.T).max() > tolerance:
            raise ConfigError(f"Stiffness must be symmetric, received {stiffness.tolist()}")

        if np.linalg.eigvalsh(stiffness).min() < -tolerance:
            raise ConfigError(
                f"Stiffness must be positive semidefinite, received {stiffness.tolist()}"
            )

        object.__setattr__(self, "stiffness", stiffness)

    @property
    def length(self) -> float:
        return float(np.hypot(self.end[0] - self.start[0], self.end[1] - self.start[1]))

    @property
    def tangent(self) -> FloatArray:
        return (np.asarray(self.end) - np.asarray(self.start)) / self.length

    @property
    def normal(self) -> FloatArray:
        tx, ty = self.tangent
        return np.array([-ty, tx])

    def stiffness_matrix(self, dimension: int) -> FloatArray:
        if self.stiffness.shape == (1, 1):
            return float(self.stiffness[0, 0]) * np.eye(dimension)

        if self.stiffness.shape != (dimension, dimension):
            raise ConfigError(
                f"Stiffness of shape {self.stiffness.shape} does not fit dimension {dimension}"
            )
        return self.stiffness

    def distance(self, points: np.ndarray) -> FloatArray:
        points = np.atleast_2d(points)
        a = np.asarray(self.start, dtype=float)
        offset = points - a
        along = np.clip(offset @ self.tangent, 0.0, self.length)
        closest = a + along[:, None] * self.tangent
        return np.hypot(*(points - closest).T)

    def sample(self, n: int) -> FloatArray:
        u = np.linspace(0.0, 1.0, n)
        return np.asarray(self.start) + u[:, None] * (np.asarray(self.end) - np.asarray(self.start))


def _segments_intersect(a: CrackArc, b: CrackArc) -> bool:
    def orient(p, q, r) -> float:
        return (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])

    o1 = orient(a.start, a.end, b.start)
    o2 = orient(a.start, a.end, b.end)
    o3 = orient(b.start, b.end, a.start)
    o4 = orient(b.start, b.end, a.end)
    if o1 * o2 < 0 and o3 * o4 < 0:
        return True

    # touching or collinear overlap:
    gap = min(
        a.distance(np.array([b.start, b.end])).min(),
        b.distance(np.array([a.start, a.end])).min(),
    )
    return bool(gap < 1e-12)


@dataclass(frozen=True, eq=False)
class CrackScene:
    """
    Union of non-intersecting crack arcs; also the ground truth of a run.
    """

    arcs: Tuple[CrackArc, ...] = ()
    quadrature_density: float = 200.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "arcs", tuple(self.arcs))
        for i, a in enumerate(self.arcs):
            for b in self.arcs[i + 1:]:
                if _segments_intersect(a, b):
                    raise ConfigError(f"Crack arcs {a.start}->{a.end} and {b.start}->{b.end} intersect")

    @property
    def is_empty(self) -> bool:
        return len(self.arcs) == 0

    def distance(self, points: np.ndarray) -> FloatArray:
        points = np.atleast_2d(points)
        if self.is_empty:
            return np.full(len(points), np.inf)

        return np.min([arc.distance(points) for arc in self.arcs], axis=0)

    def sample(self, spacing: float) -> FloatArray:
        samples = [arc.sample(max(2, int(np.ceil(arc.length / spacing)) + 1)) for arc in self.arcs]
        return np.concatenate(samples) if samples else np.zeros((0, 2))

    @classmethod
    def from_config(cls, config: SceneConfig) -> "CrackScene":
        arcs = [
            CrackArc(
                start=tuple(arc.start),
                end=tuple(arc.end),
                stiffness=np.asarray(arc.stiffness, dtype=float),
            )
            for arc in config.arcs
        ]
        return cls(arcs=tuple(arcs), quadrature_density=config.quadrature_density)


# ========== SENSING LAYOUT ===========:


@dataclass(frozen=True, eq=False)
class SensingLayout:
    """
    Sources on Gamma_i, receivers on Gamma_m, the time axis and the aperture masks.

    Data columns run over (source, polarization) pairs, source-major.
    """

    sources: FloatArray
    receivers: FloatArray
    n_steps: int
    dt: float
    polarizations: FloatArray
    receiver_mask: np.ndarray
    source_mask: np.ndarray
    receiver_weights: FloatArray

    def __post_init__(self) -> None:
        if not self.receiver_mask.any():
            raise LayoutError("Receiver mask selects no receivers")

        if not self.source_mask.any():
            raise LayoutError("Source mask selects no sources")

        for name in ("sources", "receivers", "polarizations", "receiver_mask", "source_mask", "receiver_weights"):
            getattr(self, name).setflags(write=False)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> FloatArray:
        return self.dt * np.arange(1, self.n_steps + 1)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def n_receivers(self) -> int:
        return len(self.receivers)

    @property
    def dimension(self) -> int:
        return self.polarizations.shape[1]

    @property
    def active_receivers(self) -> FloatArray:
        return self.receivers[self.receiver_mask]

    def with_masks(
        self,
        receiver_mask: Optional[np.ndarray] = None,
        source_mask: Optional[np.ndarray] = None,
    ) -> "SensingLayout":
        return SensingLayout(
            sources=self.sources,
            receivers=self.receivers,
            n_steps=self.n_steps,
            dt=self.dt,
            polarizations=self.polarizations,
            receiver_mask=np.array(self.receiver_mask if receiver_mask is None else receiver_mask, dtype=bool),
            source_mask=np.array(self.source_mask if source_mask is None else source_mask, dtype=bool),
            receiver_weights=self.receiver_weights,
        )

    def describe(self) -> dict:
        return {
            "n_sources": self.n_sources,
            "n_receivers": self.n_receivers,
            "n_active_receivers": int(self.receiver_mask.sum()),
            "n_active_sources": int(self.source_mask.sum()),
            "n_steps": self.n_steps,
            "dt": self.dt,
            "duration": self.duration,
            "sources": self.sources.tolist(),
            "receivers": self.receivers.tolist(),
            "polarizations": self.polarizations.tolist(),
            "receiver_mask": self.receiver_mask.astype(int).tolist(),
            "source_mask": self.source_mask.astype(int).tolist(),
        }


def _ring_points(center: Sequence[float], radius: float, n: int, start: float, end: Optional[float]) -> FloatArray:
    if end is None:
        angles = start + 2.0 * np.pi * np.arange(n) / n
    else:
        # open arc, endpoints included:
        angles = np.linspace(start, end, n) if n > 1 else np.array([0.5 * (start + end)])

    return np.column_stack([center[0] + radius * np.cos(angles), center[1] + radius * np.sin(angles)])


def _line_points(start: Sequence[float], end: Sequence[float], n: int) -> FloatArray:
    u = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.5])
    return np.asarray(start, dtype=float) + u[:, None] * (np.asarray(end, dtype=float) - np.asarray(start, dtype=float))


def _arc_length_weights(points: FloatArray, closed: bool) -> FloatArray:
    if len(points) == 1:
        return np.ones(1)

    if closed:
        gaps = np.hypot(*(np.roll(points, -1, axis=0) - points).T)
        weights = 0.5 * (gaps + np.roll(gaps, 1))
    else:
        gaps = np.hypot(*np.diff(points, axis=0).T)
        weights = np.zeros(len(points))
        weights[:-1] += 0.5 * gaps
        weights[1:] += 0.5 * gaps

    return weights / weights.mean()


def make_layout(
    config: LayoutConfig,
    scene: Optional[CrackScene] = None,
    dimension: int = 1,
) -> SensingLayout:
    """
    Deterministic layout with full masks; rejects points lying on a crack.
    """
    if config.n_sources < 1 or config.n_receivers < 1:
        raise LayoutError(
            f"Need at least one source and receiver, received {config.n_sources}/{config.n_receivers}"
        )

    if config.n_steps < 2 or not config.duration > 0.0:
        raise LayoutError(f"Invalid time axis: n_steps={config.n_steps}, duration={config.duration}")

    if config.kind is LayoutKind.RING:
        sources = _ring_points(config.center, config.radius, config.n_sources, config.start_angle, config.end_angle)
        receivers = _ring_points(config.center, config.radius, config.n_receivers, config.start_angle, config.end_angle)
        weights = _arc_length_weights(receivers, closed=config.end_angle is None)

    else:
        needed = (config.source_start, config.source_end, config.receiver_start, config.receiver_end)
        if any(point is None for point in needed):
            raise LayoutError("Line layouts need source_start/end and receiver_start/end")

        sources = _line_points(config.source_start, config.source_end, config.n_sources)
        receivers = _line_points(config.receiver_start, config.receiver_end, config.n_receivers)
        weights = _arc_length_weights(receivers, closed=False)

    if config.polarizations is None:
        polarizations = np.eye(dimension)[:1]
    else:
        polarizations = np.asarray(config.polarizations, dtype=float)
        if polarizations.ndim != 2 or polarizations.shape[1] != dimension:
            raise LayoutError(
                f"Polarizations must be {dimension}-vectors, received {config.polarizations}"
            )
        polarizations = polarizations / np.linalg.norm(polarizations, axis=1, keepdims=True)

    if scene is not None and not scene.is_empty:
        for name, points in (("source", sources), ("receiver", receivers)):
            distance = scene.distance(points)
            on_crack = np.flatnonzero(distance <= 1e-9)
            if on_crack.size:
                raise LayoutError(
                    f"{name} points {points[on_crack].tolist()} lie on a crack arc"
                )

    return SensingLayout(
        sources=sources,
        receivers=receivers,
        n_steps=config.n_steps,
        dt=config.duration / config.n_steps,
        polarizations=polarizations,
        receiver_mask=np.ones(len(receivers), dtype=bool),
        source_mask=np.ones(len(sources), dtype=bool),
        receiver_weights=weights,
    )


def downsample_mask(n_total: int, n_keep: int) -> np.ndarray:
    """
    Uniform subset of n_keep out of n_total indices.
    """
    if not 1 <= n_keep <= n_total:
        raise LayoutError(f"Cannot keep {n_keep} of {n_total} receivers")

    mask = np.zeros(n_total, dtype=bool)
    mask[np.floor(np.arange(n_keep) * n_total / n_keep).astype(int)] = True
    return mask


def aperture_mask(points: FloatArray, center: Sequence[float], start: float, end: float) -> np.ndarray:
    """
    Points whose polar angle about center lies in [start, end] (mod 2 pi).
    """
    angles = np.arctan2(points[:, 1] - center[1], points[:, 0] - center[0])
    relative = np.mod(angles - start, 2.0 * np.pi)
    # a point sitting on the start angle may wrap to just below 2 pi:
    relative = np.where(relative > 2.0 * np.pi - 1e-9, 0.0, relative)
    return relative <= (end - start) + 1e-9


# ========== DAMPED TRANSFORM ===========:


@dataclass(frozen=True)
class TransformPlan:
    """
    Discrete damped Fourier transform on the line s = eta + i sigma.

    Arrays are zero padded to n_pad >= pad_factor * n_steps samples so the
    circular convolutions of the transform equal the linear, causal ones on the
    retained window.
    """

    n_steps: int
    dt: float
    sigma: float
    n_pad: int
    window: WindowKind = WindowKind.NONE
    window_fraction: float = 0.2
    spectral_floor: float = DEFAULT_SPECTRAL_FLOOR
    _window_taper: FloatArray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.sigma >= 0.0:
            raise ConfigError(f"sigma must be non-negative, received {self.sigma}")

        if self.n_pad & (self.n_pad - 1) or self.n_pad < 2 * self.n_steps:
            raise ConfigError(
                f"n_pad must be a power of two >= 2 * n_steps, received {self.n_pad} for {self.n_steps}"
            )

        n_freq = self.n_pad // 2 + 1
        if self.window is WindowKind.TUKEY:
            # keep the low end flat, roll off towards Nyquist:
            taper = tukey(2 * n_freq, alpha=self.window_fraction)[n_freq:]
            taper = taper / taper[0]
        else:
            taper = np.ones(n_freq)
        object.__setattr__(self, "_window_taper", taper)

    @property
    def n_frequencies(self) -> int:
        return self.n_pad // 2 + 1

    @property
    def eta(self) -> FloatArray:
        return 2.0 * np.pi * rfftfreq(self.n_pad, self.dt)

    @property
    def frequencies(self) -> ComplexArray:
        return self.eta + 1j * self.sigma

    @property
    def d_eta(self) -> float:
        return 2.0 * np.pi / (self.n_pad * self.dt)

    @property
    def plancherel_weights(self) -> FloatArray:
        """
        Weights c_j / (n_pad dt) so that sum_j w_j |X_j|^2 equals the damped
        time-domain energy sum_n |x_n exp(-sigma t_n)|^2 dt.
        """
        weights = np.full(self.n_frequencies, 2.0)
        weights[0] = 1.0
        if self.n_pad % 2 == 0:
            weights[-1] = 1.0
        return weights / (self.n_pad * self.dt)

    def damping(self, n: int) -> FloatArray:
        return np.exp(-self.sigma * self.dt * np.arange(n))

    def forward(self, x: np.ndarray, axis: int = -1) -> ComplexArray:
        """
        X(s_j) = dt * sum_n x_n exp(i s_j n dt) for real x indexed from n = 0.
        """
        x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
        if x.shape[-1] > self.n_pad:
            raise ConfigError(f"Signal of length {x.shape[-1]} exceeds n_pad = {self.n_pad}")

        spectrum = self.dt * np.conj(rfft(x * self.damping(x.shape[-1]), n=self.n_pad, axis=-1))
        return np.moveaxis(spectrum, -1, axis)

    def inverse(self, spectrum: np.ndarray, n_out: Optional[int] = None, axis: int = -1) -> FloatArray:
        """
        Real signal x_n, n = 0..n_out-1, whose damped transform is spectrum.
        """
        n_out = self.n_pad if n_out is None else n_out
        spectrum = np.moveaxis(np.asarray(spectrum), axis, -1)
        x = irfft(np.conj(spectrum) / self.dt, n=self.n_pad, axis=-1)[..., :n_out]
        x = x * np.exp(self.sigma * self.dt * np.arange(n_out))
        return np.moveaxis(x, -1, axis)

    def synthesize(self, spectrum: np.ndarray, axis: int = -1) -> FloatArray:
        """
        Samples at t_k = k dt, k = 1..n_steps, of the causal signal with the
        given damped spectrum, with the plan's synthesis window applied.
        """
        spectrum = np.moveaxis(np.asarray(spectrum), axis, -1) * self._window_taper
        full = self.inverse(spectrum, n_out=self.n_steps + 1)
        return np.moveaxis(full[..., 1:], -1, axis)

    def energy(self, spectrum: np.ndarray, axis: int = -1) -> FloatArray:
        spectrum = np.moveaxis(np.asarray(spectrum), axis, -1)
        return np.sum(self.plancherel_weights * np.abs(spectrum) ** 2, axis=-1)

    def undamped(self) -> "TransformPlan":
        """
        The same grid with sigma = 0, i.e. the plain Fourier transform.
        """
        return TransformPlan(
            n_steps=self.n_steps,
            dt=self.dt,
            sigma=0.0,
            n_pad=self.n_pad,
            window=self.window,
            window_fraction=self.window_fraction,
            spectral_floor=self.spectral_floor,
        )

    def describe(self) -> dict:
        return {
            "n_steps": self.n_steps,
            "dt": self.dt,
            "sigma": self.sigma,
            "n_pad": self.n_pad,
            "n_frequencies": self.n_frequencies,
            "window": self.window.value,
            "window_fraction": self.window_fraction,
            "spectral_floor": self.spectral_floor,
        }


def make_plan(
    n_steps: int,
    dt: float,
    sigma: Optional[float] = None,
    pad_factor: int = DEFAULT_PAD_FACTOR,
    window: WindowKind = WindowKind.NONE,
    window_fraction: float = 0.2,
    spectral_floor: float = DEFAULT_SPECTRAL_FLOOR,
) -> TransformPlan:
    if pad_factor < 2:
        raise ConfigError(f"pad_factor must be >= 2, received {pad_factor}")

    if sigma is None:
        sigma = DEFAULT_SIGMA_FACTOR / (n_steps * dt)

    if not sigma > 0.0:
        raise ConfigError(f"sigma must be positive, received {sigma}")

    return TransformPlan(
        n_steps=n_steps,
        dt=dt,
        sigma=sigma,
        n_pad=next_power_of_two(pad_factor * n_steps),
        window=window,
        window_fraction=window_fraction,
        spectral_floor=spectral_floor,
    )


def plan_from_config(config: PlanConfig, layout: SensingLayout) -> TransformPlan:
    return make_plan(
        n_steps=layout.n_steps,
        dt=layout.dt,
        sigma=config.sigma,
        pad_factor=config.pad_factor,
        window=config.window,
        window_fraction=config.window_fraction,
        spectral_floor=config.spectral_floor,
    )


def pulse_spectrum(p: Pulse, plan: TransformPlan) -> ComplexArray:
    """
    Damped transform of chi sampled at t_n = n dt on the padded window.
    """
    support = int(np.ceil(p.t_end / plan.dt)) + 1
    if support > plan.n_pad:
        logger.warning(
            f"Pulse support {p.t_end} exceeds the padded window {plan.n_pad * plan.dt}, it is truncated"
        )
        support = plan.n_pad

    samples = eval_pulse(p, plan.dt * np.arange(support))
    return plan.forward(samples)


def spectral_support(spectrum: ComplexArray, floor: float) -> np.ndarray:
    """
    Frequencies carrying at least floor * max |spectrum|.
    """
    magnitude = np.abs(spectrum)
    peak = magnitude.max()
    if peak == 0.0:
        return np.zeros(len(spectrum), dtype=bool)

    return magnitude >= floor * peak
