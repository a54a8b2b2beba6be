"""
Forward scattering by open cracks in the frequency domain.

Anti-plane only. The unknown is the displacement jump phi across the crack,
expanded in continuous piecewise-linear hat functions that vanish at the crack
tips, on a mesh graded towards the tips. The hypersingular traction operator
is used in its integrated-by-parts form

    -<T phi, psi> = int int G psi' phi' - k^2 int int (n_x . n_y) G psi phi

so only the logarithmic singularity of G = (i / 4) H0(k r) has to be handled.
It is split off as -(1 / 2 pi) log r and integrated in closed form on nearby
element pairs. The boundary condition mu T phi - K phi = -t_inc gives the
complex symmetric Galerkin system

    (mu S' - mu k^2 M_G + K M) phi = <t_inc, psi>.

Frequencies are independent and are solved on a thread pool, then the
receiver spectra are synthesized to causal time traces.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from numpy.polynomial.legendre import leggauss
from scipy.special import hankel1

from tlsmpy.constants import ComplexArray, FloatArray, MAX_CONDITION
from tlsmpy.enums import WaveMode
from tlsmpy.greens import traction_kernel
from tlsmpy.model import (
    CrackScene,
    MediumModel,
    Pulse,
    SensingLayout,
    TransformPlan,
    pulse_spectrum,
    spectral_support,
)
from tlsmpy.nearfield import ScatteredDataset
from tlsmpy.utils import SingularSystemError, UnsupportedModeError


__all__ = [
    "CrackDiscretization",
    "CrackSystem",
    "FrequencySolve",
    "ScatteringSolver",
    "discretize",
    "assemble_crack_system",
    "coupling_matrix",
    "load_vector",
    "solve_scattering",
    "add_noise",
]

logger = logging.getLogger(__name__)

EULER_GAMMA = np.euler_gamma

DEFAULT_GAUSS_ORDER = 4

# inner rule for the smooth remainder on nearby element pairs
NEAR_GAUSS_ORDER = 10

MIN_ELEMENTS = 8


def _unit_gauss(order: int) -> tuple:
    """
    Gauss-Legendre rule on [0, 1].
    """
    x, w = leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True, eq=False)
class CrackDiscretization:
    """
    P1 elements over all arcs of a scene.

    element_nodes[e, a] is the unknown carried by local vertex a of element e,
    or -1 at a crack tip.
    """

    element_start: FloatArray
    element_end: FloatArray
    element_arc: np.ndarray
    element_nodes: np.ndarray
    node_points: FloatArray
    node_arc: np.ndarray
    node_offset: FloatArray
    stiffness: FloatArray
    order: int = DEFAULT_GAUSS_ORDER
    assembly: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n_elements = len(self.element_start)
        assembly = np.zeros((2 * n_elements, self.n_unknowns))
        for e, nodes in enumerate(self.element_nodes):
            for a, node in enumerate(nodes):
                if node >= 0:
                    assembly[2 * e + a, node] = 1.0
        object.__setattr__(self, "assembly", assembly)

    @property
    def n_elements(self) -> int:
        return len(self.element_start)

    @property
    def n_unknowns(self) -> int:
        return len(self.node_points)

    @property
    def lengths(self) -> FloatArray:
        return np.hypot(*(self.element_end - self.element_start).T)

    @property
    def tangents(self) -> FloatArray:
        return (self.element_end - self.element_start) / self.lengths[:, None]

    @property
    def normals(self) -> FloatArray:
        return np.stack([-self.tangents[:, 1], self.tangents[:, 0]], axis=1)

    @property
    def midpoints(self) -> FloatArray:
        return 0.5 * (self.element_start + self.element_end)

    def quadrature(self, order: Optional[int] = None) -> tuple:
        """
        Points (E, p, 2), weights (E, p) and basis values (p, 2) of the element rule.
        """
        t, w = _unit_gauss(self.order if order is None else order)
        points = self.element_start[:, None, :] + t[None, :, None] * (self.element_end - self.element_start)[:, None, :]
        weights = self.lengths[:, None] * w[None, :]
        basis = np.stack([1.0 - t, t], axis=1)
        return points, weights, basis


def discretize(
    scene: CrackScene,
    density: Optional[float] = None,
    order: int = DEFAULT_GAUSS_ORDER,
    grading: float = 2.0,
) -> CrackDiscretization:
    """
    Graded mesh with about density elements per unit length on every arc.
    """
    density = scene.quadrature_density if density is None else density
    starts, ends, arcs, nodes = [], [], [], []
    node_points, node_arc, node_offset, stiffness = [], [], [], []

    for index, arc in enumerate(scene.arcs):
        n_elements = max(MIN_ELEMENTS, 2 * int(np.ceil(0.5 * density * arc.length)))
        u = np.linspace(-1.0, 1.0, n_elements + 1)
        offsets = 0.5 * arc.length * (1.0 + np.sign(u) * (1.0 - (1.0 - np.abs(u)) ** grading))
        points = np.asarray(arc.start) + offsets[:, None] * arc.tangent

        first = len(node_points)
        node_points.extend(points[1:-1])
        node_arc.extend([index] * (n_elements - 1))
        node_offset.extend(offsets[1:-1])

        # vertex v of this arc is unknown first + v - 1, tips excluded:
        vertex = np.arange(n_elements + 1) + first - 1
        vertex[0] = vertex[-1] = -1
        starts.append(points[:-1])
        ends.append(points[1:])
        arcs.append(np.full(n_elements, index))
        nodes.append(np.stack([vertex[:-1], vertex[1:]], axis=1))
        stiffness.append(arc.stiffness_matrix(1)[0, 0])

    if not starts:
        raise ValueError("Cannot discretize an empty scene")

    return CrackDiscretization(
        element_start=np.concatenate(starts),
        element_end=np.concatenate(ends),
        element_arc=np.concatenate(arcs),
        element_nodes=np.concatenate(nodes),
        node_points=np.asarray(node_points),
        node_arc=np.asarray(node_arc),
        node_offset=np.asarray(node_offset),
        stiffness=np.asarray(stiffness),
        order=order,
    )


# ========== SINGULAR INTEGRALS ===========:


def _log_primitives(u: FloatArray, q: FloatArray) -> tuple:
    """
    F0 = int log sqrt(u^2 + q^2) du and F1 = int u log sqrt(u^2 + q^2) du.
    """
    rho2 = u**2 + q**2
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rho = np.where(rho2 > 0.0, 0.5 * np.log(rho2), 0.0)
    aq = np.abs(q)
    f0 = u * log_rho - u + aq * np.arctan2(u, aq)
    f1 = 0.5 * rho2 * log_rho - 0.25 * u**2
    return f0, f1


def _log_moments(x: FloatArray, start: FloatArray, tangent: FloatArray, normal: FloatArray, length: FloatArray) -> FloatArray:
    """
    int_element L_b(y) log |x - y| ds_y for both local basis functions; (..., 2).
    """
    offset = x - start
    p = np.sum(offset * tangent, axis=-1)
    q = np.sum(offset * normal, axis=-1)
    f0_hi, f1_hi = _log_primitives(length - p, q)
    f0_lo, f1_lo = _log_primitives(-p, q)
    plain = f0_hi - f0_lo
    # int t log = int (u + p) log with u = t - p
    first = (f1_hi + p * f0_hi) - (f1_lo + p * f0_lo)
    return np.stack([plain - first / length, first / length], axis=-1)


def _regular_part(r: FloatArray, k: complex) -> ComplexArray:
    """
    G + log(r) / (2 pi), continuous at r = 0.
    """
    limit = 0.25j - (np.log(0.5 * k) + EULER_GAMMA) / (2.0 * np.pi)
    small = r < 1e-12
    r_safe = np.where(small, 1.0, r)
    value = 0.25j * hankel1(0, k * r_safe) + np.log(r_safe) / (2.0 * np.pi)
    return np.where(small, limit, value)


def _near_pairs(disc: CrackDiscretization) -> tuple:
    mid = disc.midpoints
    h = disc.lengths
    distance = np.hypot(*(mid[:, None, :] - mid[None, :, :]).transpose(2, 0, 1))
    return np.nonzero(distance < h[:, None] + h[None, :])


def _element_integrals(disc: CrackDiscretization, k: complex) -> tuple:
    """
    I0[e, f] = int_e int_f G and MG[e, f, a, b] = int_e int_f G L_a L_b.
    """
    points, weights, basis = disc.quadrature()
    n_el, order = weights.shape

    x = points.reshape(-1, 2)
    r = np.hypot(*(x[:, None, :] - x[None, :, :]).transpose(2, 0, 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        green = 0.25j * hankel1(0, k * np.where(r > 0.0, r, 1.0))
    green = green.reshape(n_el, order, n_el, order)

    paired = weights[:, :, None, None] * weights[None, None, :, :] * green
    mg = np.einsum("eqfr,qa,rb->efab", paired, basis, basis)

    # nearby pairs: analytic log part plus a finer rule for the remainder
    outer, inner = _near_pairs(disc)
    t_in, w_in = _unit_gauss(NEAR_GAUSS_ORDER)
    basis_in = np.stack([1.0 - t_in, t_in], axis=1)

    x_out = points[outer]
    start = disc.element_start[inner][:, None, :]
    tangent = disc.tangents[inner][:, None, :]
    normal = disc.normals[inner][:, None, :]
    length = disc.lengths[inner][:, None]
    log_part = _log_moments(x_out, start, tangent, normal, length)

    y_in = start + t_in[None, :, None] * (length[:, :, None] * tangent)
    r_in = np.hypot(*(x_out[:, :, None, :] - y_in[:, None, :, :]).transpose(3, 0, 1, 2))
    regular = np.einsum("npi,i,ib->npb", _regular_part(r_in, k), w_in, basis_in) * length[:, :, None]

    inner_moments = regular - log_part / (2.0 * np.pi)
    mg[outer, inner] = np.einsum("np,pa,npb->nab", weights[outer], basis, inner_moments)

    return mg.sum(axis=(2, 3)), mg


# ========== SYSTEM ===========:


@dataclass(frozen=True, eq=False)
class CrackSystem:
    s: complex
    matrix: ComplexArray
    condition: float


def _check_mode(medium: MediumModel) -> None:
    if medium.mode is not WaveMode.ANTIPLANE:
        raise UnsupportedModeError(
            f"Forward crack scattering is implemented for {WaveMode.ANTIPLANE.value} only, received {medium.mode.value}"
        )


def assemble_crack_system(disc: CrackDiscretization, s: complex, medium: MediumModel) -> CrackSystem:
    _check_mode(medium)
    k = s / medium.shear_speed
    mu = medium.shear_modulus

    i0, mg = _element_integrals(disc, k)
    h = disc.lengths
    slope = np.stack([-1.0 / h, 1.0 / h], axis=1)
    alignment = disc.normals @ disc.normals.T

    local = (
        mu * i0[:, :, None, None] * slope[:, None, :, None] * slope[None, :, None, :]
        - mu * k**2 * alignment[:, :, None, None] * mg
    )

    spring = disc.stiffness[disc.element_arc] * h / 6.0
    diagonal = np.arange(disc.n_elements)
    local[diagonal, diagonal] += spring[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])

    flat = local.transpose(0, 2, 1, 3).reshape(2 * disc.n_elements, 2 * disc.n_elements)
    matrix = disc.assembly.T @ flat @ disc.assembly
    matrix = 0.5 * (matrix + matrix.T)

    return CrackSystem(s=complex(s), matrix=matrix, condition=float(np.linalg.cond(matrix)))


def coupling_matrix(disc: CrackDiscretization, points: np.ndarray, s: complex, medium: MediumModel) -> ComplexArray:
    """
    C[m, j] = int T(x_m; y, n_y) psi_j(y) ds_y.

    Row m is both the load vector of a unit point source at x_m and the
    functional giving the scattered field at x_m.
    """
    _check_mode(medium)
    quad_points, weights, basis = disc.quadrature()
    kernel = traction_kernel(
        np.asarray(points, dtype=float)[:, None, None, :],
        quad_points[None, :, :, :],
        disc.normals[None, :, None, :],
        s,
        medium,
    )[..., 0, 0]
    local = np.einsum("meq,eq,qa->mea", kernel, weights, basis)
    return local.reshape(len(points), -1) @ disc.assembly


def load_vector(disc: CrackDiscretization, traction: np.ndarray) -> ComplexArray:
    """
    <t, psi_j> for traction values (E, p) at the element quadrature points.
    """
    _, weights, basis = disc.quadrature()
    local = np.einsum("eq,eq,qa->ea", np.asarray(traction), weights, basis)
    return local.reshape(-1) @ disc.assembly


@dataclass(frozen=True, eq=False)
class FrequencySolve:
    s: complex
    jumps: ComplexArray
    fields: ComplexArray
    condition: float
    residual: float


class ScatteringSolver:
    """
    Scattered receiver traces for every (source, polarization) excitation.
    """

    def __init__(
        self,
        scene: CrackScene,
        layout: SensingLayout,
        pulse: Pulse,
        plan: TransformPlan,
        medium: MediumModel,
        density: Optional[float] = None,
        workers: Optional[int] = None,
    ) -> None:
        _check_mode(medium)
        if plan.n_steps != layout.n_steps or not np.isclose(plan.dt, layout.dt):
            raise ValueError(
                f"Plan ({plan.n_steps}, {plan.dt}) does not match layout ({layout.n_steps}, {layout.dt})"
            )

        self.scene = scene
        self.layout = layout
        self.pulse = pulse
        self.plan = plan
        self.medium = medium
        self.workers = workers
        self.disc = None if scene.is_empty else discretize(scene, density=density)

    def solve_frequency(self, s: complex) -> FrequencySolve:
        system = assemble_crack_system(self.disc, s, self.medium)
        if not system.condition < MAX_CONDITION:
            raise SingularSystemError(
                f"Crack system at s = {s:.6g} has condition number {system.condition:.3e}"
            )

        sources = coupling_matrix(self.disc, self.layout.sources, s, self.medium)
        polarization = self.layout.polarizations[:, 0]
        rhs = (sources.T[:, :, None] * polarization[None, None, :]).reshape(self.disc.n_unknowns, -1)

        jumps = scipy.linalg.solve(system.matrix, rhs, assume_a="sym")
        residual = float(np.linalg.norm(system.matrix @ jumps - rhs) / max(np.linalg.norm(rhs), 1e-300))
        if residual > 1e-8:
            logger.warning(f"Crack solve at s = {s:.6g} left relative residual {residual:.3e}")

        receivers = coupling_matrix(self.disc, self.layout.receivers, s, self.medium)
        return FrequencySolve(
            s=complex(s),
            jumps=jumps,
            fields=receivers @ jumps,
            condition=system.condition,
            residual=residual,
        )

    def run(self) -> ScatteredDataset:
        layout = self.layout
        n_columns = layout.n_sources * len(layout.polarizations)
        metadata = {"scene_arcs": len(self.scene.arcs), "mode": self.medium.mode.value}

        if self.disc is None:
            logger.info("Empty scene, scattered field is zero")
            return ScatteredDataset(
                values=np.zeros((layout.n_receivers, layout.n_steps, n_columns)),
                dt=layout.dt,
                metadata=metadata,
            ).with_layout_masks(layout)

        chi = pulse_spectrum(self.pulse, self.plan)
        active = np.flatnonzero(spectral_support(chi, self.plan.spectral_floor))
        frequencies = self.plan.frequencies
        logger.info(
            f"Solving {len(active)}/{self.plan.n_frequencies} frequencies on "
            f"{self.disc.n_elements} elements, {self.disc.n_unknowns} unknowns"
        )

        spectra = np.zeros((layout.n_receivers, self.plan.n_frequencies, n_columns), dtype=complex)
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            solves = executor.map(self.solve_frequency, frequencies[active])
            for j, solve in zip(active, solves):
                spectra[:, j, :] = chi[j] * solve.fields

        values = self.plan.synthesize(spectra, axis=1)
        metadata.update({"n_elements": self.disc.n_elements, "active_frequencies": int(len(active))})
        return ScatteredDataset(values=values, dt=layout.dt, metadata=metadata).with_layout_masks(layout)


def solve_scattering(
    scene: CrackScene,
    layout: SensingLayout,
    pulse: Pulse,
    plan: TransformPlan,
    medium: MediumModel,
    density: Optional[float] = None,
    workers: Optional[int] = None,
) -> ScatteredDataset:
    solver = ScatteringSolver(
        scene=scene,
        layout=layout,
        pulse=pulse,
        plan=plan,
        medium=medium,
        density=density,
        workers=workers,
    )
    try:
        return solver.run()
    except Exception as e:
        logger.error(f"{type(e).__name__}({e}) while solving the forward problem")
        raise e


def add_noise(data: ScatteredDataset, snr_db: Optional[float], seed: int = 0) -> ScatteredDataset:
    """
    Gaussian noise scaled so that ||data|| / ||noise|| = 10^(snr_db / 20).

    A missing or infinite SNR, or an all-zero signal, returns the data
    unchanged with zero noise level.
    """
    if snr_db is None or np.isinf(snr_db):
        return data

    signal = data.norm()
    if signal == 0.0:
        logger.warning("Not adding noise to an all-zero dataset")
        return data

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(data.values.shape)
    target = signal * 10.0 ** (-snr_db / 20.0)
    noise *= target / np.sqrt(np.sum(noise**2) * data.dt)

    metadata = dict(data.metadata)
    metadata.update({"snr_db": float(snr_db), "seed": int(seed)})
    return ScatteredDataset(
        values=data.values + noise,
        dt=data.dt,
        n_components=data.n_components,
        receiver_mask=data.receiver_mask,
        column_mask=data.column_mask,
        noise_norm=float(target),
        metadata=metadata,
    )
