import numpy as np
import pytest

from tlsmpy.model import make_plan
from tlsmpy.nearfield import (
    DensityVector,
    NearFieldFactors,
    ScatteredDataset,
    apply_adjoint,
    apply_nearfield,
    causal_factors,
    dense_nearfield,
    spectral_factors,
)
from tlsmpy.utils import ShapeMismatchError


N_RECEIVERS = 4
N_SOURCES = 3
N_STEPS = 64
DT = 0.05


def _dataset(seed: int = 0, n_components: int = 1, support: int = N_STEPS) -> ScatteredDataset:
    rng = np.random.default_rng(seed)
    values = np.zeros((N_RECEIVERS * n_components, N_STEPS, N_SOURCES))
    values[:, :support] = rng.standard_normal((N_RECEIVERS * n_components, support, N_SOURCES))
    return ScatteredDataset(values=values, dt=DT, n_components=n_components)


def _density(seed: int = 1, support: int = N_STEPS) -> np.ndarray:
    g = np.zeros((N_SOURCES, N_STEPS))
    g[:, :support] = np.random.default_rng(seed).standard_normal((N_SOURCES, support))
    return g


def test_matches_dense_operator() -> None:
    data = _dataset()
    g = _density()
    expected = dense_nearfield(data) @ g.ravel()
    result = apply_nearfield(data, g).ravel()
    assert np.linalg.norm(result - expected) <= 1e-10 * np.linalg.norm(expected)


def test_dense_operator_is_block_lower_triangular() -> None:
    matrix = dense_nearfield(_dataset()).reshape(N_RECEIVERS, N_STEPS, N_SOURCES, N_STEPS)
    above_diagonal = np.arange(N_STEPS)[:, None] < np.arange(N_STEPS)[None, :]
    assert np.all(matrix.transpose(0, 2, 1, 3)[:, :, above_diagonal] == 0.0)


def test_adjoint_identity() -> None:
    data = _dataset()
    g = _density()
    r = np.random.default_rng(2).standard_normal((N_RECEIVERS, N_STEPS))

    lhs = np.sum(apply_nearfield(data, g) * r)
    adjoint = apply_adjoint(data, r)
    rhs = np.sum(g * adjoint.values)
    assert lhs == pytest.approx(rhs, rel=1e-10)
    assert adjoint.dt == DT
    np.testing.assert_allclose(adjoint.values.ravel(), dense_nearfield(data).T @ r.ravel(), atol=1e-10)


def test_accepts_density_vectors() -> None:
    data = _dataset()
    g = _density()
    np.testing.assert_array_equal(apply_nearfield(data, DensityVector(values=g, dt=DT)), apply_nearfield(data, g))
    assert DensityVector(values=g, dt=DT).norm() == pytest.approx(np.sqrt(np.sum(g**2) * DT))


def test_masking_commutes_with_the_operator() -> None:
    data = _dataset(n_components=2)
    g = _density()
    receiver_mask = np.array([True, False, True, True])
    column_mask = np.array([True, True, False])
    masked = data.with_masks(receiver_mask=receiver_mask, column_mask=column_mask)

    full = apply_nearfield(data, np.where(column_mask[:, None], g, 0.0))
    reduced = apply_nearfield(masked.masked(), g[column_mask])
    np.testing.assert_allclose(reduced, full[masked.row_mask], atol=1e-12)
    assert masked.masked().values.shape == (6, N_STEPS, 2)


def test_operator_is_causal() -> None:
    data = _dataset()
    g = _density()
    g[:, :10] = 0.0
    out = apply_nearfield(data, g)
    assert np.abs(out[:, :10]).max() <= 1e-12

    late = data.values.copy()
    late[:, 40:] += 1.0
    changed = apply_nearfield(ScatteredDataset(values=late, dt=DT), _density())
    np.testing.assert_allclose(changed[:, :40], apply_nearfield(data, _density())[:, :40], atol=1e-12)


def test_spectral_factors_diagonalize_the_operator() -> None:
    half = N_STEPS // 2
    data = _dataset(support=half)
    g = _density(support=half)
    plan = make_plan(n_steps=N_STEPS, dt=DT)

    factors = spectral_factors(data, plan)
    assert (factors.n_frequencies, factors.n_rows, factors.n_columns) == (plan.n_frequencies, N_RECEIVERS, N_SOURCES)

    expected = plan.forward(apply_nearfield(data, g), axis=1).T
    result = factors.apply(plan.forward(g, axis=1).T)
    assert np.linalg.norm(result - expected) <= 1e-10 * np.linalg.norm(expected)


def test_spectral_factors_apply_row_weights() -> None:
    data = _dataset()
    plan = make_plan(n_steps=N_STEPS, dt=DT)
    weights = np.array([1.0, 4.0, 0.25, 1.0])
    plain = spectral_factors(data, plan)
    weighted = spectral_factors(data, plan, row_weights=weights)
    np.testing.assert_allclose(weighted.matrices, plain.matrices * np.sqrt(weights)[None, :, None])
    np.testing.assert_allclose(weighted.weights, plan.plancherel_weights)


def test_projection_splits_the_energy() -> None:
    factors = spectral_factors(_dataset(), make_plan(n_steps=N_STEPS, dt=DT))
    rng = np.random.default_rng(3)
    rhs = rng.standard_normal((factors.n_frequencies, N_RECEIVERS)) + 1j * rng.standard_normal(
        (factors.n_frequencies, N_RECEIVERS)
    )
    beta, perp2 = factors.project(rhs)
    np.testing.assert_allclose(
        np.sum(np.abs(beta) ** 2, axis=-1) + perp2,
        np.sum(np.abs(rhs) ** 2, axis=-1),
        rtol=1e-10,
    )
    assert np.all(perp2 >= 0.0)


def test_causal_factors_diagonalize_the_normal_matrix() -> None:
    data = _dataset(support=N_STEPS // 2)
    factors = causal_factors(data)
    matrix = dense_nearfield(data)

    sv = factors.singular_values[0]
    assert factors.singular_values.shape == (1, N_SOURCES * N_STEPS)
    assert np.all(np.diff(sv) <= 0.0)
    gram = (factors.vectors * sv**2) @ factors.vectors.T
    assert np.linalg.norm(gram - matrix.T @ matrix) <= 1e-9 * np.linalg.norm(matrix.T @ matrix)
    np.testing.assert_array_equal(factors.weights, [DT])


def test_causal_projection_splits_the_energy() -> None:
    data = _dataset()
    factors = causal_factors(data)
    rhs = np.random.default_rng(5).standard_normal((3, N_RECEIVERS, N_STEPS))

    np.testing.assert_allclose(factors.adjoint(rhs[0]), apply_adjoint(data, rhs[0]).values.ravel(), atol=1e-10)
    beta, perp2 = factors.project(rhs)
    assert beta.shape == (3, 1, N_SOURCES * N_STEPS)
    np.testing.assert_allclose(np.sum(beta**2, axis=-1) + perp2, np.sum(rhs**2, axis=(1, 2))[:, None], rtol=1e-9)
    assert np.all(perp2 >= 0.0)


def test_causal_factors_apply_row_weights() -> None:
    data = _dataset()
    g = _density()
    weights = np.array([1.0, 4.0, 0.25, 1.0])
    weighted = causal_factors(data, row_weights=weights)
    np.testing.assert_allclose(weighted.apply(g), np.sqrt(weights)[:, None] * apply_nearfield(data, g), atol=1e-10)
    assert weighted.rhs_shape == (N_RECEIVERS, N_STEPS)

    with pytest.raises(ShapeMismatchError):
        causal_factors(data, row_weights=np.ones(N_RECEIVERS + 1))


def test_subset_and_zero_factors() -> None:
    factors = NearFieldFactors(np.zeros((3, 2, 2)))
    assert factors.is_zero
    assert factors.subset(np.array([0, 2])).n_frequencies == 2
    assert not spectral_factors(_dataset(), make_plan(n_steps=N_STEPS, dt=DT)).is_zero
    assert causal_factors(ScatteredDataset(values=np.zeros((2, 8, 2)), dt=DT)).is_zero


def test_shape_validation() -> None:
    data = _dataset()
    with pytest.raises(ShapeMismatchError):
        apply_nearfield(data, np.zeros((N_SOURCES + 1, N_STEPS)))

    with pytest.raises(ShapeMismatchError):
        apply_adjoint(data, np.zeros((N_RECEIVERS, N_STEPS - 1)))

    with pytest.raises(ShapeMismatchError):
        ScatteredDataset(values=np.zeros((4, 8)), dt=DT)

    with pytest.raises(ShapeMismatchError):
        ScatteredDataset(values=np.zeros((3, 8, 2)), dt=DT, n_components=2)

    with pytest.raises(ShapeMismatchError):
        ScatteredDataset(values=np.zeros((4, 8, 2)), dt=DT, receiver_mask=np.ones(3, dtype=bool))

    with pytest.raises(ShapeMismatchError):
        spectral_factors(data, make_plan(n_steps=N_STEPS // 2, dt=DT))

    bad = np.zeros((4, 8, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ScatteredDataset(values=bad, dt=DT)


def test_dataset_norms() -> None:
    data = ScatteredDataset(values=np.ones((2, 4, 1)), dt=0.25, noise_norm=0.5)
    assert data.norm() == pytest.approx(np.sqrt(8 * 0.25))
    assert data.relative_noise() == pytest.approx(0.5 / np.sqrt(2.0))
    assert ScatteredDataset(values=np.zeros((2, 4, 1)), dt=0.25).relative_noise() == 0.0


def test_masking_keeps_the_relative_noise() -> None:
    rng = np.random.default_rng(6)
    signal = np.zeros((32, 128, 2))
    signal[:, 20:60] = np.sin(np.linspace(0.0, 6.0, 40))[None, :, None]
    noise = rng.standard_normal(signal.shape)
    noise *= 10.0 ** (-30.0 / 20.0) * np.linalg.norm(signal) / np.linalg.norm(noise)
    data = ScatteredDataset(values=signal + noise, dt=DT, noise_norm=np.sqrt(np.sum(noise**2) * DT))

    receiver_mask = np.zeros(32, dtype=bool)
    receiver_mask[::4] = True
    sparse = data.with_masks(receiver_mask=receiver_mask).masked()
    assert sparse.noise_norm == pytest.approx(0.5 * data.noise_norm)
    assert sparse.relative_noise() == pytest.approx(data.relative_noise(), rel=0.1)

    kept_noise = noise[receiver_mask][:, :, :1]
    one_column = data.with_masks(receiver_mask=receiver_mask, column_mask=np.array([True, False])).masked()
    assert one_column.noise_norm == pytest.approx(np.sqrt(np.sum(kept_noise**2) * DT), rel=0.1)
