from __future__ import annotations

from typing import Tuple

import numpy as np

from fraclab.core.exceptions import FitError


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights on n (odd) equispaced nodes."""
    w = np.full(n, 2.0)
    w[1:-1:2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3.0


def richardson(coarse: np.ndarray, fine: np.ndarray, order: float) -> np.ndarray:
    """One Richardson step for values sampled at spacing 2h (coarse) and h (fine)."""
    factor = 2.0**order
    return (factor * np.asarray(fine) - np.asarray(coarse)) / (factor - 1.0)


def restrict_to_coarse(fine_values: np.ndarray) -> np.ndarray:
    """Fine-grid values at the nodes shared with the grid of half the resolution."""
    return np.asarray(fine_values)[::2]


def centered_derivative(values: np.ndarray, h: float, excluded_cells: int = 2) -> np.ndarray:
    """Fourth-order centred first derivative, zero exterior.

    The outermost ``excluded_cells`` nodes on each side are set to 0; callers
    treat them as outside the region where the derivative is meaningful.
    """
    u = np.concatenate([[0.0, 0.0], np.asarray(values, dtype=float), [0.0, 0.0]])
    d = (-u[4:] + 8.0 * u[3:-1] - 8.0 * u[1:-3] + u[:-4]) / (12.0 * h)
    if excluded_cells > 0:
        d[:excluded_cells] = 0.0
        d[-excluded_cells:] = 0.0
    return d


def boundary_power_fit(
    x: np.ndarray,
    w: np.ndarray,
    s: float,
    window: float,
    side: int = 1,
    min_distance: float = 0.0,
) -> Tuple[float, float, float]:
    """Fit w = psi d^s (1 + a d), d = 1 - |x|, on the nodes with min_distance < d <= window.

    Returns (psi, a, relative rms residual). ``side`` selects x > 0 (+1) or x < 0 (-1).
    """
    d = 1.0 - np.abs(x)
    mask = (d > max(min_distance, 1e-14)) & (d <= window + 1e-14) & (np.sign(x) == side)
    if np.count_nonzero(mask) < 4:
        raise FitError(
            f"boundary window {window} holds only {np.count_nonzero(mask)} nodes"
        )
    dm = d[mask]
    basis = np.column_stack([dm**s, dm ** (s + 1.0)])
    coef, *_ = np.linalg.lstsq(basis, w[mask], rcond=None)
    fitted = basis @ coef
    scale = float(np.sqrt(np.mean(w[mask] ** 2))) or 1.0
    rel = float(np.sqrt(np.mean((fitted - w[mask]) ** 2)) / scale)
    psi = float(coef[0])
    a = float(coef[1] / coef[0]) if coef[0] != 0 else float("nan")
    return psi, a, rel


def l2_distance(u: np.ndarray, v: np.ndarray, h: float) -> float:
    return float(np.sqrt(h * np.sum((np.asarray(u) - np.asarray(v)) ** 2)))


def alignment(a: np.ndarray, b: np.ndarray, weight: np.ndarray | None = None) -> float:
    """|<a, b>| / (|a| |b|) in the (optionally weighted) nodal inner product."""
    wgt = np.ones_like(a) if weight is None else weight
    num = abs(float(np.sum(wgt * a * b)))
    den = float(np.sqrt(np.sum(wgt * a * a) * np.sum(wgt * b * b)))
    return num / den if den > 0 else 0.0


def count_sign_changes(values: np.ndarray, tol: float = 0.0) -> int:
    v = np.asarray(values)
    v = v[np.abs(v) > tol]
    if v.size < 2:
        return 0
    return int(np.count_nonzero(np.sign(v[1:]) != np.sign(v[:-1])))
