"""
The discrete near-field operator.

For data v[l, k, i] (receiver-component row l, time sample k, excitation i) and
a density g[i, j] over excitations and time lags j = 0..n_steps-1,

    (N g)[l, k] = sum_i sum_{j <= k} v[l, k - j, i] g[i, j]

with zero-based k, which is the causal reading of the 1-based sum over
j = 0..k-1 with data index k - j >= 1. The operator is a product in space and
a convolution in time.

Two factorizations feed the regularized solves: the exact space-time one
(causal_factors, an eigen-decomposition of N^T N) and the per-frequency one
(spectral_factors) used by the frequency-domain comparator.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
from numpy.fft import irfft, rfft

from tlsmpy.constants import ComplexArray, FloatArray
from tlsmpy.model import SensingLayout, TransformPlan
from tlsmpy.utils import ShapeMismatchError, next_power_of_two


__all__ = [
    "ScatteredDataset",
    "DensityVector",
    "NearFieldFactors",
    "CausalFactors",
    "apply_nearfield",
    "apply_adjoint",
    "dense_nearfield",
    "spectral_factors",
    "causal_factors",
]

logger = logging.getLogger(__name__)

# eigenvalues of N^T N below this fraction of the largest count as zero
GRAM_CUTOFF = 1e-13


@dataclass(frozen=True, eq=False)
class ScatteredDataset:
    """
    Scattered traces v[l, k, i] with l = component + d * receiver.
    """

    values: FloatArray
    dt: float
    n_components: int = 1
    receiver_mask: Optional[np.ndarray] = None
    column_mask: Optional[np.ndarray] = None
    noise_norm: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 3:
            raise ShapeMismatchError(f"Dataset values must be 3D, received shape {values.shape}")

        if values.shape[0] % self.n_components:
            raise ShapeMismatchError(
                f"{values.shape[0]} rows do not split into {self.n_components} components"
            )

        if not np.all(np.isfinite(values)):
            raise ValueError("Dataset contains non-finite entries")

        n_receivers = values.shape[0] // self.n_components
        receiver_mask = (
            np.ones(n_receivers, dtype=bool)
            if self.receiver_mask is None
            else np.asarray(self.receiver_mask, dtype=bool)
        )
        column_mask = (
            np.ones(values.shape[2], dtype=bool)
            if self.column_mask is None
            else np.asarray(self.column_mask, dtype=bool)
        )
        if receiver_mask.shape != (n_receivers,) or column_mask.shape != (values.shape[2],):
            raise ShapeMismatchError(
                f"Masks {receiver_mask.shape}/{column_mask.shape} do not match data {values.shape}"
            )

        object.__setattr__(self, "values", values)
        object.__setattr__(self, "receiver_mask", receiver_mask)
        object.__setattr__(self, "column_mask", column_mask)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    @property
    def n_columns(self) -> int:
        return self.values.shape[2]

    @property
    def n_receivers(self) -> int:
        return self.n_rows // self.n_components

    @property
    def row_mask(self) -> np.ndarray:
        return np.repeat(self.receiver_mask, self.n_components)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.dt))

    def relative_noise(self) -> float:
        norm = self.norm()
        return self.noise_norm / norm if norm > 0.0 else 0.0

    def with_masks(
        self,
        receiver_mask: Optional[np.ndarray] = None,
        column_mask: Optional[np.ndarray] = None,
    ) -> "ScatteredDataset":
        return ScatteredDataset(
            values=self.values,
            dt=self.dt,
            n_components=self.n_components,
            receiver_mask=self.receiver_mask if receiver_mask is None else receiver_mask,
            column_mask=self.column_mask if column_mask is None else column_mask,
            noise_norm=self.noise_norm,
            metadata=dict(self.metadata),
        )

    def with_layout_masks(self, layout: SensingLayout) -> "ScatteredDataset":
        n_polarizations = len(layout.polarizations)
        return self.with_masks(
            receiver_mask=layout.receiver_mask,
            column_mask=np.repeat(layout.source_mask, n_polarizations),
        )

    def masked(self) -> "ScatteredDataset":
        """
        Only the selected rows and columns, with full masks.

        The noise is white per entry, so its norm shrinks with the square root
        of the share of entries kept.
        """
        values = self.values[self.row_mask][:, :, self.column_mask]
        kept = values.size / self.values.size
        return ScatteredDataset(
            values=values,
            dt=self.dt,
            n_components=self.n_components,
            noise_norm=self.noise_norm * np.sqrt(kept),
            metadata=dict(self.metadata),
        )


@dataclass(frozen=True, eq=False)
class DensityVector:
    """
    Source density g[i, j] over excitations and time lags.
    """

    values: FloatArray
    dt: float

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2) * self.dt))


def _density_values(g: DensityVector | np.ndarray) -> np.ndarray:
    return g.values if isinstance(g, DensityVector) else np.asarray(g)


def apply_nearfield(data: ScatteredDataset, g: DensityVector | np.ndarray) -> FloatArray:
    """
    (N g)[l, k] by zero-padded FFT convolution; returns (rows, n_steps).
    """
    g = _density_values(g)
    if g.shape != (data.n_columns, data.n_steps):
        raise ShapeMismatchError(
            f"Density of shape {g.shape} does not fit data of shape {data.values.shape}"
        )

    n_fft = next_power_of_two(2 * data.n_steps)
    data_spectrum = rfft(data.values, n=n_fft, axis=1)
    density_spectrum = rfft(g, n=n_fft, axis=1)
    product = np.einsum("lfi,if->lf", data_spectrum, density_spectrum)
    return irfft(product, n=n_fft, axis=1)[:, : data.n_steps]


def apply_adjoint(data: ScatteredDataset, r: np.ndarray) -> DensityVector:
    """
    Transpose in space, time-reversed correlation in time.

    Both sides carry the same dt weight, so the adjoint under the weighted
    inner products is the plain transpose.
    """
    r = np.asarray(r)
    if r.shape != (data.n_rows, data.n_steps):
        raise ShapeMismatchError(
            f"Residual of shape {r.shape} does not fit data of shape {data.values.shape}"
        )

    n_fft = next_power_of_two(2 * data.n_steps)
    data_spectrum = rfft(data.values, n=n_fft, axis=1)
    residual_spectrum = rfft(r, n=n_fft, axis=1)
    product = np.einsum("lfi,lf->if", np.conj(data_spectrum), residual_spectrum)
    return DensityVector(values=irfft(product, n=n_fft, axis=1)[:, : data.n_steps], dt=data.dt)


def dense_nearfield(data: ScatteredDataset) -> FloatArray:
    """
    Brute-force block lower-triangular Toeplitz matrix, rows (l, k), columns (i, j).
    """
    n_rows, n_steps, n_columns = data.values.shape
    matrix = np.zeros((n_rows * n_steps, n_columns * n_steps))
    for row in range(n_rows):
        for k in range(n_steps):
            for column in range(n_columns):
                for j in range(k + 1):
                    matrix[row * n_steps + k, column * n_steps + j] = data.values[row, k - j, column]

    return matrix


class NearFieldFactors:
    """
    Per-frequency matrices N(s_j) of shape (rows, columns) with their thin SVDs.

    weights[j] are the Plancherel weights turning per-frequency squared norms
    into the damped time-domain energy.
    """

    def __init__(self, matrices: np.ndarray, weights: Optional[np.ndarray] = None) -> None:
        matrices = np.asarray(matrices, dtype=complex)
        if matrices.ndim != 3:
            raise ShapeMismatchError(f"Factors must be (frequencies, rows, columns), received {matrices.shape}")

        self.matrices = matrices
        self.weights = np.ones(len(matrices)) if weights is None else np.asarray(weights, dtype=float)
        if self.weights.shape != (len(matrices),):
            raise ShapeMismatchError(
                f"{self.weights.shape} weights for {len(matrices)} frequencies"
            )

        self.u, self.singular_values, self.vh = np.linalg.svd(matrices, full_matrices=False)

    @property
    def n_frequencies(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_rows(self) -> int:
        return self.matrices.shape[1]

    @property
    def n_columns(self) -> int:
        return self.matrices.shape[2]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.singular_values > 0.0)

    def subset(self, indices: np.ndarray, weights: Optional[np.ndarray] = None) -> "NearFieldFactors":
        return NearFieldFactors(
            matrices=self.matrices[indices],
            weights=self.weights[indices] if weights is None else weights,
        )

    def project(self, rhs: np.ndarray) -> tuple:
        """
        Range coefficients beta = U^H rhs and the squared out-of-range part,
        for rhs of shape (..., frequencies, rows).
        """
        beta = np.einsum("jlr,...jl->...jr", np.conj(self.u), rhs)
        total = np.sum(np.abs(rhs) ** 2, axis=-1)
        perp2 = np.maximum(total - np.sum(np.abs(beta) ** 2, axis=-1), 0.0)
        return beta, perp2

    @property
    def rhs_shape(self) -> tuple:
        return self.n_frequencies, self.n_rows

    def solution(self, beta: np.ndarray, eta: float) -> ComplexArray:
        """
        Density spectrum V diag(s / (s^2 + eta)) beta, shaped (frequencies, columns).
        """
        sv = self.singular_values
        return np.einsum("jrc,jr->jc", np.conj(self.vh), sv / (sv**2 + eta) * beta)

    def apply(self, density_spectrum: np.ndarray) -> ComplexArray:
        return np.einsum("jlc,...jc->...jl", self.matrices, density_spectrum)


def spectral_factors(
    data: ScatteredDataset,
    plan: TransformPlan,
    row_weights: Optional[np.ndarray] = None,
) -> NearFieldFactors:
    """
    Damped DFT of every (l, i) trace, without the dt factor, so that the
    damped transform of N g equals N(s_j) times that of g.

    row_weights (one per row) scale rows by their square root, giving the
    receiver arc-length quadrature of the L2(Gamma_m) norm.
    """
    if data.n_steps != plan.n_steps:
        raise ShapeMismatchError(f"Data has {data.n_steps} steps, plan expects {plan.n_steps}")

    matrices = plan.forward(data.values, axis=1) / plan.dt
    matrices = np.transpose(matrices, (1, 0, 2))
    if row_weights is not None:
        matrices = matrices * np.sqrt(np.asarray(row_weights, dtype=float))[None, :, None]

    return NearFieldFactors(matrices=matrices, weights=plan.plancherel_weights)


def _causal_gram(values: np.ndarray) -> FloatArray:
    """
    N^T N without forming N, as (columns, n_steps, columns, n_steps).

    For lags j <= j' = j + d the entry is sum_l sum_{m <= n_steps - 1 - j'}
    v[l, m + d, i] v[l, m, i'], a running sum over m for every d.
    """
    n_rows, n_steps, n_columns = values.shape
    gram = np.zeros((n_columns, n_steps, n_columns, n_steps))
    for lag in range(n_steps):
        later = np.arange(lag, n_steps)
        earlier = later - lag
        overlap = np.einsum("lmi,lmk->mik", values[:, lag:], values[:, : n_steps - lag])
        block = np.cumsum(overlap, axis=0)[n_steps - 1 - later]
        gram[:, earlier, :, later] = block
        gram[:, later, :, earlier] = np.transpose(block, (0, 2, 1))

    return gram


class CausalFactors:
    """
    N^T N = V diag(s^2) V^T for the causal space-time operator.

    Seen through project() the operator looks like NearFieldFactors with a
    single frequency of weight dt, so both share the Tikhonov and Morozov
    machinery. beta = diag(1/s) V^T N^T Phi are the coefficients of Phi along
    the left singular vectors.
    """

    def __init__(self, data: ScatteredDataset) -> None:
        self.data = data
        self.weights = np.array([data.dt])
        self._n_fft = next_power_of_two(2 * data.n_steps)
        self._spectrum = np.conj(rfft(data.values, n=self._n_fft, axis=1))

        size = data.n_columns * data.n_steps
        eigenvalues, self.vectors = scipy.linalg.eigh(_causal_gram(data.values).reshape(size, size))
        eigenvalues, self.vectors = eigenvalues[::-1], self.vectors[:, ::-1]
        eigenvalues = np.maximum(eigenvalues, 0.0)
        eigenvalues[eigenvalues <= GRAM_CUTOFF * eigenvalues[0]] = 0.0
        self.singular_values = np.sqrt(eigenvalues)[None]

    @property
    def n_rows(self) -> int:
        return self.data.n_rows

    @property
    def n_steps(self) -> int:
        return self.data.n_steps

    @property
    def n_columns(self) -> int:
        return self.data.n_columns

    @property
    def is_zero(self) -> bool:
        return not np.any(self.singular_values > 0.0)

    @property
    def rhs_shape(self) -> tuple:
        return self.n_rows, self.n_steps

    def adjoint(self, rhs: np.ndarray) -> FloatArray:
        """
        N^T rhs for rhs of shape (..., rows, n_steps), flattened to (..., columns * n_steps).
        """
        spectrum = rfft(rhs, n=self._n_fft, axis=-1)
        product = np.einsum("lfi,...lf->...if", self._spectrum, spectrum)
        correlation = irfft(product, n=self._n_fft, axis=-1)[..., : self.n_steps]
        return correlation.reshape(*correlation.shape[:-2], -1)

    def project(self, rhs: np.ndarray) -> tuple:
        """
        beta (..., 1, rank) and the squared part of rhs outside the range (..., 1).
        """
        rhs = np.asarray(rhs, dtype=float)
        sv = self.singular_values[0]
        coefficients = self.adjoint(rhs) @ self.vectors
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.where(sv > 0.0, coefficients / sv, 0.0)

        total = np.sum(rhs**2, axis=(-2, -1))
        perp2 = np.maximum(total - np.sum(beta**2, axis=-1), 0.0)
        return beta[..., None, :], perp2[..., None]

    def solution(self, beta: np.ndarray, eta: float) -> FloatArray:
        """
        Density g[i, j] = V diag(s / (s^2 + eta)) beta.
        """
        sv = self.singular_values[0]
        density = self.vectors @ (sv / (sv**2 + eta) * beta[0])
        return density.reshape(self.n_columns, self.n_steps)

    def apply(self, density: np.ndarray) -> FloatArray:
        return apply_nearfield(self.data, density)


def causal_factors(data: ScatteredDataset, row_weights: Optional[np.ndarray] = None) -> CausalFactors:
    """
    Factor the space-time operator of data, rows scaled by the square root of
    row_weights as in spectral_factors.
    """
    if row_weights is not None:
        scale = np.sqrt(np.asarray(row_weights, dtype=float))
        if scale.shape != (data.n_rows,):
            raise ShapeMismatchError(f"{scale.shape} row weights for {data.n_rows} rows")
        data = ScatteredDataset(
            values=data.values * scale[:, None, None],
            dt=data.dt,
            n_components=data.n_components,
            noise_norm=data.noise_norm,
            metadata=dict(data.metadata),
        )

    size = data.n_columns * data.n_steps
    logger.debug(f"Factoring the {size} x {size} space-time normal matrix")
    return CausalFactors(data)
