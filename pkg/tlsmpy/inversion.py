"""
Regularized near-field equations and the imaging indicators built on them.

Every solve goes through a factorization that exposes singular values s,
range coefficients beta of the right-hand side and its out-of-range energy
per frequency j (CausalFactors has one "frequency" of weight dt). Then

    g        = V diag(s / (s^2 + eta)) beta
    res^2    = sum_j w_j (sum_r (eta / (s_r^2 + eta))^2 |beta_r|^2 + |P_perp Phi_j|^2)
    ||g||^2  = sum_j w_j  sum_r  s_r^2 / (s_r^2 + eta)^2 |beta_r|^2

res is increasing and ||g|| decreasing in eta, so the Morozov choice
res(eta) = delta is found by bisection on log eta for a whole batch at once.

The time-domain indicator solves the causal space-time problem exactly; the
frequency-domain comparator solves one undamped problem per frequency.
"""

import logging
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import islice
from typing import Callable, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from tlsmpy.constants import FloatArray, DEFAULT_NOISE_FLOOR, MOROZOV_TOLERANCE
from tlsmpy.enums import CombinationRule, IndicatorKind, MorozovStatus
from tlsmpy.model import TransformPlan
from tlsmpy.nearfield import CausalFactors, NearFieldFactors, ScatteredDataset, causal_factors, spectral_factors
from tlsmpy.trials import SamplingGrid, TrialSignature
from tlsmpy.utils import GridMismatchError, InvalidMapError, RegularizationError, ShapeMismatchError


__all__ = [
    "Factors",
    "TikhonovResult",
    "MorozovResult",
    "IndicatorMap",
    "tikhonov_solve",
    "morozov_select",
    "morozov_batch",
    "tlsm_indicator",
    "flsm_indicator",
    "threshold_map",
]

logger = logging.getLogger(__name__)

Factors = CausalFactors | NearFieldFactors

# bracket of the eta search, relative to the largest squared singular value
ETA_LOWER = 1e-14
ETA_UPPER = 1e8

MAX_BISECTIONS = 200

DEFAULT_TRIAL_CHUNK = 64

_STATUS_CODES = (MorozovStatus.CONVERGED, MorozovStatus.UNINFORMATIVE, MorozovStatus.LOWER_BOUND)


# ========== TIKHONOV ===========:


@dataclass(frozen=True, eq=False)
class TikhonovResult:
    density: np.ndarray
    eta: float
    residual: float
    norm: float


@dataclass(frozen=True, eq=False)
class MorozovResult:
    eta: float
    status: MorozovStatus
    residual: float
    norm: float
    target: float


def _discrepancy(
    sv2: np.ndarray,
    beta2: np.ndarray,
    perp2: np.ndarray,
    weights: np.ndarray,
    eta: np.ndarray,
) -> Tuple[FloatArray, FloatArray]:
    """
    Residual and solution norms for a batch: sv2, beta2 (B, J, r), perp2 (B, J), eta (B,).
    """
    eta = np.asarray(eta, dtype=float)[:, None, None]
    denominator = sv2 + eta
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(denominator > 0.0, eta / denominator, 1.0)
        gain = np.where(denominator > 0.0, sv2 / denominator**2, 0.0)
    residual2 = np.sum(weights * (np.sum(shrink**2 * beta2, axis=-1) + perp2), axis=-1)
    norm2 = np.sum(weights * np.sum(gain * beta2, axis=-1), axis=-1)
    return np.sqrt(residual2), np.sqrt(norm2)


def _check_rhs(factors: Factors, rhs: np.ndarray) -> np.ndarray:
    rhs = np.asarray(rhs)
    if rhs.shape[-2:] != factors.rhs_shape:
        raise ShapeMismatchError(f"Right-hand side {rhs.shape} does not fit factors {factors.rhs_shape}")
    return rhs


def tikhonov_solve(factors: Factors, rhs: np.ndarray, eta: float) -> TikhonovResult:
    """
    The minimizer of ||N g - Phi||^2 + eta ||g||^2.

    rhs is a trace (rows, n_steps) for CausalFactors and a spectrum
    (frequencies, rows) for NearFieldFactors; the density comes back in the
    same domain.
    """
    if not eta > 0.0:
        raise RegularizationError(f"Tikhonov parameter must be positive, received {eta}")

    rhs = _check_rhs(factors, rhs)
    beta, perp2 = factors.project(rhs)
    sv = factors.singular_values
    density = factors.solution(beta, eta)
    residual, norm = _discrepancy(
        sv2=(sv**2)[None],
        beta2=np.abs(beta[None]) ** 2,
        perp2=perp2[None],
        weights=factors.weights,
        eta=np.array([eta]),
    )
    return TikhonovResult(density=density, eta=float(eta), residual=float(residual[0]), norm=float(norm[0]))


# ========== MOROZOV ===========:


def _bisect(
    sv2: np.ndarray,
    beta2: np.ndarray,
    perp2: np.ndarray,
    weights: np.ndarray,
    target: np.ndarray,
) -> Tuple[FloatArray, np.ndarray, FloatArray, FloatArray]:
    batch = len(target)
    total = np.sqrt(np.sum(weights * (np.sum(beta2, axis=-1) + perp2), axis=-1))
    scale = np.broadcast_to(sv2, beta2.shape).reshape(batch, -1).max(axis=1)
    scale = np.where(scale > 0.0, scale, 1.0)

    log_lo = np.log(scale * ETA_LOWER)
    log_hi = np.log(scale * ETA_UPPER)
    floor, _ = _discrepancy(sv2, beta2, perp2, weights, np.exp(log_lo))

    status = np.zeros(batch, dtype=int)
    status[target >= total] = 1
    status[(status == 0) & (floor > target)] = 2

    active = status == 0
    eta = np.where(active, np.exp(0.5 * (log_lo + log_hi)), np.exp(log_lo))
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (log_lo + log_hi)
        eta = np.where(active, np.exp(mid), eta)
        residual, _ = _discrepancy(sv2, beta2, perp2, weights, eta)
        done = np.abs(residual - target) <= MOROZOV_TOLERANCE * target
        active &= ~done
        if not active.any():
            break
        too_large = residual > target
        log_hi = np.where(active & too_large, mid, log_hi)
        log_lo = np.where(active & ~too_large, mid, log_lo)

    residual, norm = _discrepancy(sv2, beta2, perp2, weights, eta)
    uninformative = status == 1
    eta = np.where(uninformative, np.inf, eta)
    residual = np.where(uninformative, total, residual)
    norm = np.where(uninformative, 0.0, norm)
    return eta, status, residual, norm


def morozov_batch(
    factors: Factors,
    rhs: np.ndarray,
    target: np.ndarray,
    separate_frequencies: bool = False,
) -> Tuple[FloatArray, np.ndarray, FloatArray, FloatArray]:
    """
    Morozov parameters for a batch of right-hand sides (B, *factors.rhs_shape).

    Returns eta, status codes (0 converged, 1 uninformative, 2 lower bound),
    residuals and solution norms, each (B,). With separate_frequencies every
    frequency is its own problem, target is (B, J) and results are (B, J).
    """
    beta, perp2 = factors.project(_check_rhs(factors, rhs))
    beta2 = np.abs(beta) ** 2
    sv2 = factors.singular_values**2
    if not separate_frequencies:
        return _bisect(sv2[None], beta2, perp2, factors.weights, np.asarray(target, dtype=float))

    batch, n_freq, rank = beta2.shape
    results = _bisect(
        np.broadcast_to(sv2[None], beta2.shape).reshape(batch * n_freq, 1, rank),
        beta2.reshape(batch * n_freq, 1, rank),
        perp2.reshape(batch * n_freq, 1),
        np.ones(1),
        np.asarray(target, dtype=float).reshape(-1),
    )
    return tuple(r.reshape(batch, n_freq) for r in results)


def morozov_select(factors: Factors, rhs: np.ndarray, delta: float) -> MorozovResult:
    """
    eta with ||N g_eta - Phi|| = delta, within MOROZOV_TOLERANCE.

    delta >= ||Phi|| is uninformative (eta = inf, g = 0); a delta below the
    smallest attainable residual returns the bracket's lower end flagged as a
    lower bound.
    """
    if delta < 0.0:
        raise RegularizationError(f"Noise level must be non-negative, received {delta}")

    eta, status, residual, norm = morozov_batch(factors, np.asarray(rhs)[None], np.array([delta]))
    result = MorozovResult(
        eta=float(eta[0]),
        status=_STATUS_CODES[status[0]],
        residual=float(residual[0]),
        norm=float(norm[0]),
        target=float(delta),
    )
    if result.status is MorozovStatus.LOWER_BOUND:
        logger.warning(
            f"Morozov target {delta:.3e} is below the attainable residual {result.residual:.3e}, "
            f"using eta = {result.eta:.3e}"
        )
    return result


# ========== INDICATOR MAPS ===========:


@dataclass(frozen=True, eq=False)
class IndicatorMap:
    """
    Indicator values over a sampling grid, shaped (ny, nx).
    """

    grid: SamplingGrid
    values: FloatArray
    normal_index: np.ndarray
    holes: np.ndarray
    kind: IndicatorKind = IndicatorKind.TLSM
    mask: Optional[np.ndarray] = None
    tau: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("values", "normal_index", "holes"):
            if getattr(self, name).shape != self.grid.shape:
                raise GridMismatchError(
                    f"{name} of shape {getattr(self, name).shape} does not match grid {self.grid.shape}"
                )

    @property
    def peak(self) -> float:
        return float(self.values.max())

    @property
    def peak_point(self) -> FloatArray:
        iy, ix = np.unravel_index(np.argmax(self.values), self.values.shape)
        return np.array([self.grid.xs[ix], self.grid.ys[iy]])

    def normalized(self) -> FloatArray:
        peak = self.peak
        return self.values / peak if peak > 0.0 else np.zeros_like(self.values)


def threshold_map(indicator: IndicatorMap, tau: float) -> IndicatorMap:
    """
    Keep values above tau times the peak; the peak itself always survives,
    so a constant map (all zeros included) keeps every cell.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"Threshold must lie in (0, 1), received {tau}")

    peak = indicator.peak
    values = indicator.values
    mask = (values > tau * peak) | (values == peak)
    return replace(indicator, values=np.where(mask, values, 0.0), mask=mask, tau=float(tau))


def _batched(items: Iterable, size: int) -> Iterator[List]:
    iterator = iter(items)
    while batch := list(islice(iterator, size)):
        yield batch


def _evaluate_trials(
    trials: Iterable[TrialSignature],
    grid: SamplingGrid,
    evaluate: Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]],
    n_outputs: int,
    chunk_size: int,
    workers: Optional[int],
) -> Tuple[FloatArray, np.ndarray, np.ndarray]:
    """
    Run evaluate on stacked trial traces chunk by chunk, in order.

    Returns norms and status codes (points, normals, n_outputs) and the hole mask.
    """
    shape = (grid.n_points, grid.n_normals, n_outputs)
    norms = np.full(shape, np.inf)
    status = np.ones(shape, dtype=int)
    seen = np.zeros(shape[:2], dtype=bool)
    holes = np.zeros(grid.n_points, dtype=bool)
    points = grid.points

    def place(batch: List[TrialSignature], future) -> None:
        batch_norms, batch_status = future.result()
        for sig, n_b, s_b in zip(batch, batch_norms, batch_status):
            norms[sig.point_index, sig.normal_index] = n_b
            status[sig.point_index, sig.normal_index] = s_b

    window = 2 * (workers or 4)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        pending = deque()
        for batch in _batched(trials, chunk_size):
            live = []
            for sig in batch:
                if not (0 <= sig.point_index < grid.n_points and 0 <= sig.normal_index < grid.n_normals):
                    raise GridMismatchError(
                        f"Trial ({sig.point_index}, {sig.normal_index}) is outside the {grid.n_points} x {grid.n_normals} grid"
                    )
                if not np.allclose(sig.z, points[sig.point_index]):
                    raise GridMismatchError(f"Trial point {sig.z.tolist()} is not grid point {sig.point_index}")
                seen[sig.point_index, sig.normal_index] = True
                if sig.is_hole:
                    holes[sig.point_index] = True
                else:
                    live.append(sig)

            if live:
                stacked = np.stack([sig.values for sig in live])
                pending.append((live, executor.submit(evaluate, stacked)))
            while len(pending) > window:
                place(*pending.popleft())

        while pending:
            place(*pending.popleft())

    if not seen.all():
        raise GridMismatchError(f"Trials cover {int(seen.sum())} of {seen.size} grid entries")

    return norms, status, holes


def _prepare(data: ScatteredDataset, noise_level: Optional[float], noise_floor: float) -> Tuple[ScatteredDataset, float]:
    data = data.masked()
    if data.norm() == 0.0:
        raise InvalidMapError("Scattered data is identically zero, no indicator can be formed")

    epsilon = data.relative_noise() if noise_level is None else noise_level
    return data, max(epsilon, noise_floor)


def _status_counts(status: np.ndarray, holes: np.ndarray) -> dict:
    live = status[~holes]
    return {code.value: int(np.sum(live == index)) for index, code in enumerate(_STATUS_CODES)}


def tlsm_indicator(
    data: ScatteredDataset,
    grid: SamplingGrid,
    trials: Iterable[TrialSignature],
    plan: TransformPlan,
    noise_level: Optional[float] = None,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
    row_weights: Optional[np.ndarray] = None,
    chunk_size: int = DEFAULT_TRIAL_CHUNK,
    workers: Optional[int] = None,
) -> IndicatorMap:
    """
    Time-domain indicator: 1 / min_n ||g_{z,n}|| with one Morozov parameter per trial.

    noise_level is the relative data noise ||noise|| / ||data||, by default
    taken from the dataset. The Morozov target is max(noise_level, noise_floor)
    times the trial norm. The plan only fixes the sampling the trials must share.
    """
    data, relative = _prepare(data, noise_level, noise_floor)
    if data.n_steps != plan.n_steps or not np.isclose(data.dt, plan.dt, rtol=1e-9, atol=0.0):
        raise ShapeMismatchError(
            f"Data sampled as ({data.n_steps}, {data.dt}), plan expects ({plan.n_steps}, {plan.dt})"
        )

    factors = causal_factors(data, row_weights=row_weights)
    scale = 1.0 if row_weights is None else np.sqrt(np.asarray(row_weights, dtype=float))[:, None]

    def evaluate(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if values.shape[1:] != factors.rhs_shape:
            raise ShapeMismatchError(f"Trial traces {values.shape[1:]} do not match data {factors.rhs_shape}")
        rhs = values * scale
        total = np.sqrt(factors.weights[0] * np.sum(rhs**2, axis=(1, 2)))
        _, status, _, norm = morozov_batch(factors, rhs, relative * total)
        return norm[:, None], status[:, None]

    logger.info(
        f"Time-domain indicator on {grid.n_points} points x {grid.n_normals} normals, "
        f"{factors.n_columns * factors.n_steps} space-time unknowns, target {relative:.3e}"
    )
    norms, status, holes = _evaluate_trials(trials, grid, evaluate, 1, chunk_size, workers)
    return _assemble_map(grid, norms[..., 0], status[..., 0], holes, IndicatorKind.TLSM, relative)


def _assemble_map(
    grid: SamplingGrid,
    norms: FloatArray,
    status: np.ndarray,
    holes: np.ndarray,
    kind: IndicatorKind,
    relative: float,
    values: Optional[FloatArray] = None,
    extra: Optional[dict] = None,
) -> IndicatorMap:
    best = np.argmin(norms, axis=1)
    if values is None:
        smallest = norms[np.arange(len(norms)), best]
        with np.errstate(divide="ignore"):
            values = np.where(np.isfinite(smallest) & (smallest > 0.0), 1.0 / smallest, 0.0)

    values = np.where(holes, 0.0, values)
    normal_index = np.where(holes, -1, best)
    counts = _status_counts(status, np.repeat(holes[:, None], status.shape[1], axis=1))
    if counts[MorozovStatus.LOWER_BOUND.value]:
        logger.warning(
            f"{counts[MorozovStatus.LOWER_BOUND.value]} trials hit the lower end of the eta bracket"
        )

    metadata = {"target": relative, "status_counts": counts, "holes": int(holes.sum())}
    metadata.update(extra or {})
    return IndicatorMap(
        grid=grid,
        values=values.reshape(grid.shape),
        normal_index=normal_index.reshape(grid.shape),
        holes=holes.reshape(grid.shape),
        kind=kind,
        metadata=metadata,
    )


def flsm_indicator(
    data: ScatteredDataset,
    grid: SamplingGrid,
    trials: Iterable[TrialSignature],
    plan: TransformPlan,
    n_frequencies: int = 5,
    rule: CombinationRule = CombinationRule.ARITHMETIC_MEAN,
    noise_level: Optional[float] = None,
    noise_floor: float = DEFAULT_NOISE_FLOOR,
    row_weights: Optional[np.ndarray] = None,
    chunk_size: int = DEFAULT_TRIAL_CHUNK,
    workers: Optional[int] = None,
) -> IndicatorMap:
    """
    Multi-frequency comparator: the classical frequency-domain indicator at the
    n_frequencies undamped frequencies carrying the most data energy, each map
    scaled to unit peak and then combined.
    """
    if n_frequencies < 1:
        raise RegularizationError(f"Need at least one frequency, received {n_frequencies}")

    data, relative = _prepare(data, noise_level, noise_floor)
    undamped = plan.undamped()
    factors = spectral_factors(data, undamped, row_weights=row_weights)
    energy = np.sum(np.abs(factors.matrices) ** 2, axis=(1, 2))
    selected = np.argsort(-energy, kind="stable")[:n_frequencies]
    factors = factors.subset(selected, weights=np.ones(len(selected)))
    scale = None if row_weights is None else np.sqrt(np.asarray(row_weights, dtype=float))

    def evaluate(values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if values.shape[1:] != (factors.n_rows, plan.n_steps):
            raise ShapeMismatchError(
                f"Trial traces {values.shape[1:]} do not match data ({factors.n_rows}, {plan.n_steps})"
            )
        rhs = np.transpose(undamped.forward(values), (0, 2, 1))[:, selected]
        if scale is not None:
            rhs = rhs * scale
        total = np.sqrt(np.sum(np.abs(rhs) ** 2, axis=-1))
        _, status, _, norm = morozov_batch(factors, rhs, relative * total, separate_frequencies=True)
        return norm, status

    chosen = undamped.eta[selected]
    logger.info(f"Frequency-domain indicator at eta = {np.round(chosen, 4).tolist()}, rule {rule.value}")
    norms, status, holes = _evaluate_trials(trials, grid, evaluate, len(selected), chunk_size, workers)

    smallest = norms.min(axis=1)
    with np.errstate(divide="ignore"):
        per_frequency = np.where(np.isfinite(smallest) & (smallest > 0.0), 1.0 / smallest, 0.0)
    per_frequency[holes] = 0.0
    peaks = per_frequency.max(axis=0)
    per_frequency = per_frequency / np.where(peaks > 0.0, peaks, 1.0)

    if rule is CombinationRule.GEOMETRIC_MEAN:
        with np.errstate(divide="ignore"):
            combined = np.exp(np.mean(np.log(per_frequency), axis=1))
    else:
        combined = np.mean(per_frequency, axis=1)

    return _assemble_map(
        grid,
        norms[..., 0],
        status[..., 0],
        holes,
        IndicatorKind.FLSM,
        relative,
        values=combined,
        extra={"frequencies": chosen.tolist(), "rule": rule.value},
    )
