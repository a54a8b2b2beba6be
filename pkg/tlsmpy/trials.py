"""
Trial signatures: the receiver traces of a small test crack at z with normal n.

Phi_{z,n}[l, k] = (T(x_m, .; z, n) * chi)(t_k) d, with rows l = component + d * m
over the active receivers only.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional

import numpy as np

from tlsmpy.constants import FloatArray, SINGULAR_DISTANCE
from tlsmpy.config import GridConfig
from tlsmpy.enums import WaveMode
from tlsmpy.greens import displacement_gradient, traction_from_gradient
from tlsmpy.model import MediumModel, Pulse, SensingLayout, TransformPlan, pulse_spectrum
from tlsmpy.utils import LayoutError, canonical_hash


__all__ = [
    "SamplingGrid",
    "TrialSignature",
    "trial_field",
    "batch_trials",
    "trial_cache_key",
]

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 16


@dataclass(frozen=True, eq=False)
class SamplingGrid:
    """
    Regular grid of sampling points over a rectangle, with Q test normals.

    Points are ordered row-major: index = iy * nx + ix.
    """

    region: tuple
    nx: int
    ny: int
    normals: FloatArray
    polarization: Optional[FloatArray] = None

    def __post_init__(self) -> None:
        if self.nx < 1 or self.ny < 1:
            raise LayoutError(f"Grid needs at least one point per axis, received {self.nx} x {self.ny}")

        x0, x1, y0, y1 = self.region
        if x1 < x0 or y1 < y0:
            raise LayoutError(f"Invalid grid region {self.region}")

        normals = np.atleast_2d(np.asarray(self.normals, dtype=float))
        if len(normals) and not np.allclose(np.linalg.norm(normals, axis=1), 1.0):
            raise LayoutError("Grid normals must be unit vectors")

        object.__setattr__(self, "region", tuple(float(v) for v in self.region))
        object.__setattr__(self, "normals", normals)
        if self.polarization is not None:
            object.__setattr__(self, "polarization", np.asarray(self.polarization, dtype=float))

    @property
    def xs(self) -> FloatArray:
        return np.linspace(self.region[0], self.region[1], self.nx)

    @property
    def ys(self) -> FloatArray:
        return np.linspace(self.region[2], self.region[3], self.ny)

    @property
    def points(self) -> FloatArray:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    @property
    def n_points(self) -> int:
        return self.nx * self.ny

    @property
    def n_normals(self) -> int:
        return len(self.normals)

    @property
    def shape(self) -> tuple:
        return self.ny, self.nx

    @property
    def spacing(self) -> tuple:
        hx = (self.region[1] - self.region[0]) / (self.nx - 1) if self.nx > 1 else 0.0
        hy = (self.region[3] - self.region[2]) / (self.ny - 1) if self.ny > 1 else 0.0
        return hx, hy

    def describe(self) -> dict:
        return {
            "region": list(self.region),
            "nx": self.nx,
            "ny": self.ny,
            "normals": self.normals.tolist(),
            "polarization": None if self.polarization is None else self.polarization.tolist(),
        }

    @classmethod
    def from_config(cls, config: GridConfig) -> "SamplingGrid":
        angles = np.pi * np.arange(config.n_normals) / config.n_normals
        return cls(
            region=tuple(config.region),
            nx=config.nx,
            ny=config.ny,
            normals=np.stack([np.cos(angles), np.sin(angles)], axis=1),
            polarization=None if config.polarization is None else np.asarray(config.polarization),
        )


@dataclass(frozen=True, eq=False)
class TrialSignature:
    point_index: int
    normal_index: int
    z: FloatArray
    normal: FloatArray
    values: FloatArray
    is_hole: bool = False


def _polarization(normal: np.ndarray, polarization: Optional[np.ndarray], medium: MediumModel) -> FloatArray:
    if medium.mode is WaveMode.ANTIPLANE:
        return np.ones(1)

    return np.asarray(normal, dtype=float) if polarization is None else np.asarray(polarization, dtype=float)


def _check_points(points: FloatArray, receivers: FloatArray) -> np.ndarray:
    distance = np.hypot(*(points[:, None, :] - receivers[None, :, :]).transpose(2, 0, 1))
    return distance.min(axis=1) < SINGULAR_DISTANCE


def _signatures(
    points: FloatArray,
    normals: FloatArray,
    polarization: Optional[FloatArray],
    receivers: FloatArray,
    chi: np.ndarray,
    plan: TransformPlan,
    medium: MediumModel,
) -> FloatArray:
    """
    Time-domain signatures for every point and normal; (points, normals, rows, n_steps).
    """
    gradient = displacement_gradient(
        receivers[None, :, None, :],
        points[:, None, None, :],
        plan.frequencies[None, None, :],
        medium,
    )
    dimension = medium.dimension
    out = np.empty((len(points), len(normals), len(receivers) * dimension, plan.n_steps))
    for q, normal in enumerate(normals):
        kernel = traction_from_gradient(gradient, normal, medium)
        pol = _polarization(normal, polarization, medium)
        spectrum = chi[:, None] * np.sum(kernel * pol, axis=-1)
        # (points, receivers, frequencies, d) -> (points, rows, frequencies)
        spectrum = np.transpose(spectrum, (0, 1, 3, 2)).reshape(len(points), -1, plan.n_frequencies)
        out[:, q] = plan.synthesize(spectrum)

    return out


def trial_field(
    z: np.ndarray,
    normal: np.ndarray,
    layout: SensingLayout,
    pulse: Pulse,
    plan: TransformPlan,
    medium: MediumModel,
    polarization: Optional[np.ndarray] = None,
) -> TrialSignature:
    """
    A single trial signature at z with unit normal n.
    """
    z = np.asarray(z, dtype=float)
    normal = np.asarray(normal, dtype=float)
    if not np.isclose(np.linalg.norm(normal), 1.0):
        raise ValueError(f"Normal must have unit length, received {normal.tolist()}")

    receivers = layout.active_receivers
    if _check_points(z[None, :], receivers)[0]:
        raise LayoutError(f"Sampling point {z.tolist()} coincides with a receiver")

    values = _signatures(
        z[None, :],
        normal[None, :],
        polarization,
        receivers,
        pulse_spectrum(pulse, plan),
        plan,
        medium,
    )
    return TrialSignature(point_index=0, normal_index=0, z=z, normal=normal, values=values[0, 0])


def trial_cache_key(
    grid: SamplingGrid,
    layout: SensingLayout,
    pulse: Pulse,
    plan: TransformPlan,
    medium: MediumModel,
) -> str:
    return canonical_hash(
        {
            "grid": grid.describe(),
            "layout": layout.describe(),
            "pulse": {"kind": pulse.kind.value, "center_frequency": pulse.center_frequency},
            "plan": plan.describe(),
            "medium": {
                "mode": medium.mode.value,
                "lame_lambda": medium.lame_lambda,
                "density": medium.density,
                "shear_modulus": medium.shear_modulus,
            },
        }
    )


def _chunks(n: int, size: int) -> List[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def _compute_chunk(
    grid: SamplingGrid,
    chunk: slice,
    holes: np.ndarray,
    layout: SensingLayout,
    chi: np.ndarray,
    plan: TransformPlan,
    medium: MediumModel,
) -> FloatArray:
    points = grid.points[chunk]
    receivers = layout.active_receivers
    values = np.zeros((len(points), grid.n_normals, len(receivers) * medium.dimension, plan.n_steps))
    valid = ~holes[chunk]
    if valid.any():
        values[valid] = _signatures(points[valid], grid.normals, grid.polarization, receivers, chi, plan, medium)
    return values


def _yield_chunk(grid: SamplingGrid, chunk: slice, values: FloatArray, holes: np.ndarray) -> Iterator[TrialSignature]:
    points = grid.points
    for offset, index in enumerate(range(chunk.start, chunk.stop)):
        for q, normal in enumerate(grid.normals):
            yield TrialSignature(
                point_index=index,
                normal_index=q,
                z=points[index],
                normal=normal,
                values=values[offset, q],
                is_hole=bool(holes[index]),
            )


def batch_trials(
    grid: SamplingGrid,
    layout: SensingLayout,
    pulse: Pulse,
    plan: TransformPlan,
    medium: MediumModel,
    chunk_size: int = DEFAULT_CHUNK_SIZE,
    cache_dir: Optional[Path] = None,
) -> Iterator[TrialSignature]:
    """
    All trial signatures in enumeration order: points row-major, then normals.

    Points coinciding with a receiver are yielded as holes with zero traces.
    With a cache_dir, signatures are stored under a hash of every input and
    reused on the next call.
    """
    holes = _check_points(grid.points, layout.active_receivers)
    if holes.any():
        logger.warning(f"{int(holes.sum())} sampling points coincide with receivers and are skipped")

    cached = None
    if cache_dir is not None:
        cached = _TrialCache(Path(cache_dir), trial_cache_key(grid, layout, pulse, plan, medium))
        if cached.exists():
            logger.info(f"Reading trial signatures from {cached.data_path}")
            values = cached.load()
            yield from _yield_chunk(grid, slice(0, grid.n_points), values, holes)
            return

    chi = pulse_spectrum(pulse, plan)
    stored = []
    for chunk in _chunks(grid.n_points, chunk_size):
        values = _compute_chunk(grid, chunk, holes, layout, chi, plan, medium)
        if cached is not None:
            stored.append(values)
        yield from _yield_chunk(grid, chunk, values, holes)

    if cached is not None:
        cached.save(np.concatenate(stored))


class _TrialCache:
    def __init__(self, directory: Path, key: str) -> None:
        self.directory = directory
        self.key = key

    @property
    def data_path(self) -> Path:
        return self.directory / f"trials-{self.key}.bin"

    @property
    def header_path(self) -> Path:
        return self.directory / f"trials-{self.key}.json"

    def exists(self) -> bool:
        return self.data_path.exists() and self.header_path.exists()

    def load(self) -> FloatArray:
        header = json.loads(self.header_path.read_text())
        return np.fromfile(self.data_path, dtype="<f8").reshape(header["shape"])

    def save(self, values: FloatArray) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(values, dtype="<f8").tofile(self.data_path)
        self.header_path.write_text(json.dumps({"key": self.key, "shape": list(values.shape)}))
        logger.info(f"Stored {values.shape[0]} trial points in {self.data_path}")

