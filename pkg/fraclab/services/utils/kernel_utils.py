"""Closed-form pieces of the 1D hypersingular quadrature.

With y = h t the kernel |y|^{-1-2s} dy becomes h^{-2s} t^{-1-2s} dt, so every
weight below is a function of s and integer cell indices only; the physical
scale h^{-2s} is applied by the caller.
"""
from __future__ import annotations

import numpy as np
from scipy import special

from fraclab.core.exceptions import DomainError


def check_order(s: float) -> None:
    if not (0.0 < s < 1.0):
        raise DomainError(f"order s must lie in (0, 1), got {s}")


def constant_cs(s: float) -> float:
    """Normalization c_{1,s} = 4^s s Gamma((1+2s)/2) / (sqrt(pi) Gamma(1-s))."""
    check_order(s)
    return float(
        4.0**s * s * special.gamma(0.5 + s) / (np.sqrt(np.pi) * special.gamma(1.0 - s))
    )


def _moment0(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
    # int_a^b t^{-1-2s} dt
    return (a ** (-2.0 * s) - b ** (-2.0 * s)) / (2.0 * s)


def _moment1(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
    # int_a^b t^{-2s} dt
    if abs(s - 0.5) < 1e-14:
        return np.log(b / a)
    return (b ** (1.0 - 2.0 * s) - a ** (1.0 - 2.0 * s)) / (1.0 - 2.0 * s)


def hat_weights(kmax: int, s: float) -> np.ndarray:
    """omega_k = int phi_k(t) t^{-1-2s} dt over [1, inf) for k = 1..kmax.

    phi_k is the unit hat centred at t = k; for k = 1 only its right half lies
    in [1, inf). Index 0 of the result is unused and set to 0.
    """
    k = np.arange(1, kmax + 1, dtype=float)
    omega = np.zeros(kmax + 1)
    # falling half on [k, k+1]: phi = (k + 1) - t
    falling = (k + 1.0) * _moment0(k, k + 1.0, s) - _moment1(k, k + 1.0, s)
    omega[1:] = falling
    if kmax >= 2:
        kr = k[1:]
        # rising half on [k-1, k]: phi = t - (k - 1)
        rising = _moment1(kr - 1.0, kr, s) - (kr - 1.0) * _moment0(kr - 1.0, kr, s)
        omega[2:] += rising
    return omega


def near_cell_weight(s: float) -> float:
    """Coefficient of 2u_i - u_{i+1} - u_{i-1} from the quadratic interpolant on [0, h]."""
    return 1.0 / (2.0 - 2.0 * s)


def tail_weight(s: float) -> float:
    """Diagonal coefficient from int_1^inf t^{-1-2s} dt on both sides."""
    return 1.0 / s


def kernel_coefficients(kmax: int, s: float) -> np.ndarray:
    """Dimensionless off-diagonal couplings a_k (k >= 1) of the discrete operator.

    The operator reads (A u)_i = c_s h^{-2s} (d u_i - sum_k a_k (u_{i+k} + u_{i-k})).
    a_k is positive and strictly decreasing in k.
    """
    a = hat_weights(kmax, s)
    if kmax >= 1:
        a[1] += near_cell_weight(s)
    return a


def diagonal_coefficient(s: float) -> float:
    return 2.0 * near_cell_weight(s) + tail_weight(s)


def poisson_constant(s: float) -> float:
    """p_{1,s} = Gamma(s + 1/2) / (sqrt(pi) Gamma(s)) = 1 / B(1/2, s)."""
    check_order(s)
    return float(1.0 / special.beta(0.5, s))


def extension_constant(s: float) -> float:
    """d_s = 2^{2s-1} Gamma(s) / Gamma(1-s)."""
    check_order(s)
    return float(2.0 ** (2.0 * s - 1.0) * special.gamma(s) / special.gamma(1.0 - s))


def critical_exponent(s: float) -> float:
    """2*_s - 1 in dimension one; infinite when 2s >= 1."""
    check_order(s)
    if 2.0 * s >= 1.0:
        return float("inf")
    return 2.0 / (1.0 - 2.0 * s) - 1.0
