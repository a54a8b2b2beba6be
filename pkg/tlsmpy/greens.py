"""
Frequency-domain fundamental solutions of the 2D background and causal
synthesis of point-source fields.

For s = eta + i sigma the displacement dyadic Pi(x, s; y) solves
    mu Lap u + (lam + mu) grad div u + rho s^2 u = -delta(x - y) e
(only the first term in anti-plane mode), i.e. it is built from
(i / 4) H0(k r) with k = s / c. Im k > 0 makes every kernel decay.

The normal-traction dyadic T(x, s; y, n)[i, p] is the i-th displacement at x
radiated by a unit displacement jump in direction p across a line element at y
with normal n: T_ip = C_pjkl n_j d Pi_ik / d y_l.
"""

from typing import Tuple

import numpy as np
from scipy.special import hankel1

from tlsmpy.constants import ComplexArray, FloatArray, SINGULAR_DISTANCE
from tlsmpy.enums import WaveMode
from tlsmpy.model import MediumModel, Pulse, TransformPlan, pulse_spectrum
from tlsmpy.utils import SingularEvaluationError


__all__ = [
    "displacement_kernel",
    "displacement_gradient",
    "traction_kernel",
    "traction_from_gradient",
    "greens_disp",
    "greens_traction",
    "synthesize_pointsource_timeseries",
]


def _separation(x: np.ndarray, y: np.ndarray) -> Tuple[FloatArray, FloatArray]:
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.hypot(d[..., 0], d[..., 1])
    if np.any(r < SINGULAR_DISTANCE):
        raise SingularEvaluationError(
            f"Kernel evaluated at coincident points (min distance {r.min():.3e})"
        )
    return d, r


def _elastic_profiles(r: FloatArray, s: ComplexArray, medium: MediumModel) -> Tuple[ComplexArray, ...]:
    """
    Radial profiles A, B of Pi = (i / 4 mu) (A I + B rr) and their r-derivatives.
    """
    ks = s / medium.shear_speed
    kp = s / medium.pressure_speed
    h0s, h1s = hankel1(0, ks * r), hankel1(1, ks * r)
    h0p, h1p = hankel1(0, kp * r), hankel1(1, kp * r)
    ratio = (kp / ks) ** 2

    c = (ks * h1s - kp * h1p) / (ks**2 * r)
    a = h0s - c
    b = -h0s + ratio * h0p + 2.0 * c

    dc = (ks**2 * h0s - kp**2 * h0p) / (ks**2 * r) - 2.0 * c / r
    da = -ks * h1s - dc
    db = ks * h1s - ratio * kp * h1p + 2.0 * dc
    return a, b, da, db


def displacement_kernel(
    x: np.ndarray,
    y: np.ndarray,
    s: complex | np.ndarray,
    medium: MediumModel,
) -> ComplexArray:
    """
    Pi(x, s; y) for broadcastable points (..., 2) and frequencies (...); returns (..., d, d).
    """
    d, r = _separation(x, y)
    s = np.asarray(s, dtype=complex)
    scale = 0.25j / medium.shear_modulus

    if medium.mode is WaveMode.ANTIPLANE:
        k = s / medium.shear_speed
        return (scale * hankel1(0, k * r))[..., None, None]

    a, b, _, _ = _elastic_profiles(r, s, medium)
    unit = d / r[..., None]
    outer = unit[..., :, None] * unit[..., None, :]
    return scale * (a[..., None, None] * np.eye(2) + b[..., None, None] * outer)


def displacement_gradient(
    x: np.ndarray,
    y: np.ndarray,
    s: complex | np.ndarray,
    medium: MediumModel,
) -> ComplexArray:
    """
    D[..., i, j, l] = d Pi_ij / d y_l.
    """
    d, r = _separation(x, y)
    s = np.asarray(s, dtype=complex)
    scale = 0.25j / medium.shear_modulus
    unit = d / r[..., None]

    if medium.mode is WaveMode.ANTIPLANE:
        k = s / medium.shear_speed
        # d/dy H0(k |x - y|) = k H1(k r) (x - y) / r
        radial = scale * k * hankel1(1, k * r)
        return (radial[..., None] * unit)[..., None, None, :]

    a, b, da, db = _elastic_profiles(r, s, medium)
    eye = np.eye(2)
    u_i = unit[..., :, None, None]
    u_j = unit[..., None, :, None]
    u_l = unit[..., None, None, :]
    a, b, da, db = (v[..., None, None, None] for v in (a, b, da, db))
    inv_r = 1.0 / r[..., None, None, None]

    d_wrt_x = (
        da * u_l * eye[:, :, None]
        + db * u_i * u_j * u_l
        + b * inv_r * (eye[:, None, :] * u_j + eye[None, :, :] * u_i - 2.0 * u_i * u_j * u_l)
    )
    # Pi depends on x - y only:
    return -scale * d_wrt_x


def traction_kernel(
    x: np.ndarray,
    y: np.ndarray,
    n: np.ndarray,
    s: complex | np.ndarray,
    medium: MediumModel,
) -> ComplexArray:
    """
    T(x, s; y, n) for broadcastable inputs; returns (..., d, d).
    """
    return traction_from_gradient(displacement_gradient(x, y, s, medium), n, medium)


def traction_from_gradient(gradient: ComplexArray, n: np.ndarray, medium: MediumModel) -> ComplexArray:
    """
    Contract a displacement gradient with the elasticity tensor and a normal.
    """
    n = np.asarray(n, dtype=float)
    n1, n2 = n[..., 0], n[..., 1]
    mu = medium.shear_modulus

    if medium.mode is WaveMode.ANTIPLANE:
        return mu * (gradient[..., 0] * n1[..., None, None] + gradient[..., 1] * n2[..., None, None])

    lam = medium.lame_lambda
    divergence = gradient[..., 0, 0] + gradient[..., 1, 1]
    # n_l dPi_ip/dy_l and n_k dPi_ik/dy_p
    along_normal = gradient[..., 0] * n1[..., None, None] + gradient[..., 1] * n2[..., None, None]
    transposed = (
        gradient[..., :, 0, :] * n1[..., None, None] + gradient[..., :, 1, :] * n2[..., None, None]
    )
    return lam * divergence[..., :, None] * n[..., None, :] + mu * (along_normal + transposed)


def greens_disp(x: np.ndarray, y: np.ndarray, s: complex, medium: MediumModel) -> ComplexArray:
    """
    Single-point displacement dyadic, a d x d matrix.
    """
    return displacement_kernel(np.asarray(x, dtype=float), np.asarray(y, dtype=float), s, medium)


def greens_traction(
    x: np.ndarray,
    y: np.ndarray,
    n: np.ndarray,
    s: complex,
    medium: MediumModel,
) -> ComplexArray:
    """
    Single-point normal-traction dyadic, a d x d matrix; n must be a unit vector.
    """
    n = np.asarray(n, dtype=float)
    if not np.isclose(np.linalg.norm(n), 1.0, rtol=0.0, atol=1e-12):
        raise ValueError(f"Normal must have unit length, received {n.tolist()}")

    return traction_kernel(np.asarray(x, dtype=float), np.asarray(y, dtype=float), n, s, medium)


def synthesize_pointsource_timeseries(
    x: np.ndarray,
    y: np.ndarray,
    polarization: np.ndarray,
    pulse: Pulse,
    plan: TransformPlan,
    medium: MediumModel,
) -> FloatArray:
    """
    u(x, t_k; y, p) = (Pi * chi)(t_k) p, returned as (d, n_steps).
    """
    frequencies = plan.frequencies
    kernel = displacement_kernel(
        np.asarray(x, dtype=float)[None, :],
        np.asarray(y, dtype=float)[None, :],
        frequencies,
        medium,
    )
    spectrum = pulse_spectrum(pulse, plan)[:, None] * (kernel @ np.asarray(polarization, dtype=float))
    return plan.synthesize(spectrum.T)
