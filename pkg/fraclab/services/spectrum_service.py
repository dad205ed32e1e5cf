import logging
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel
from scipy import linalg, special

from fraclab.core.config import settings
from fraclab.core.exceptions import (
    DomainError,
    EigenSolverError,
    InsufficientSpectrumError,
)
from fraclab.schemas.grid_schemas import FracOp, GridFunction
from fraclab.schemas.state_schemas import (
    EigenPair,
    GroundState,
    HopfReport,
    Sector,
    SpectrumResult,
)
from fraclab.services.groundstate_service import (
    even_folded_matrix,
    odd_folded_matrix,
    residual,
    unfold,
)
from fraclab.services.operator_service import derivative
from fraclab.services.utils.quadrature_utils import boundary_power_fit

logger = logging.getLogger(__name__)


def _weight(state: GroundState) -> np.ndarray:
    """u^{p-1} on the full grid (zero at the boundary nodes)."""
    u = np.maximum(state.u.values, 0.0)
    weight = u ** (state.p - 1.0)
    weight[0] = weight[-1] = 0.0
    return weight


def _sector_system(
    op: FracOp, state: GroundState, sector: Sector
) -> Tuple[np.ndarray, np.ndarray]:
    """Symmetric stiffness and diagonal mass of the generalized problem in a sector."""
    grid = op.grid
    weight = _weight(state)
    lam = state.lam
    if sector == "full":
        K = op.A + lam * np.eye(op.size)
        M = weight[grid.interior]
    elif sector == "even":
        doubling = np.full(grid.center, 2.0)
        doubling[0] = 1.0
        K = doubling[:, None] * (even_folded_matrix(op) + lam * np.eye(grid.center))
        K = 0.5 * (K + K.T)
        M = doubling * weight[grid.center : grid.n - 1]
    elif sector == "odd":
        K = odd_folded_matrix(op) + lam * np.eye(grid.center - 1)
        K = 0.5 * (K + K.T)
        M = weight[grid.center + 1 : grid.n - 1]
    else:
        raise DomainError(f"unknown sector {sector}")
    if np.any(M <= 0.0):
        raise DomainError("weight u^{p-1} must be positive at interior nodes")
    return K, M


def _to_full(op: FracOp, sector: Sector, z: np.ndarray) -> np.ndarray:
    if sector == "full":
        full = np.zeros(op.grid.n)
        full[op.grid.interior] = z
        return full
    return unfold(op.grid, z, parity=sector)


def _normalize(w: np.ndarray, weight: np.ndarray, h: float) -> np.ndarray:
    norm = np.sqrt(h * np.sum(weight * w * w))
    w = w / norm
    pivot = int(np.argmax(np.abs(w)))
    if pivot < len(w) // 2:
        pivot = len(w) - 1 - pivot
    return w if w[pivot] >= 0 else -w


def weighted_eigs(op: FracOp, state: GroundState, sector: Sector, k: int) -> SpectrumResult:
    """k smallest Lambda of (-Delta)^s w + lambda w = Lambda u^{p-1} w in a parity sector."""
    if k < 1:
        raise DomainError("k must be at least 1")
    K, M = _sector_system(op, state, sector)
    if k > len(M):
        raise DomainError(f"k={k} exceeds the {sector} sector dimension {len(M)}")
    scale = 1.0 / np.sqrt(M)
    H = scale[:, None] * K * scale[None, :]
    try:
        values, vectors = linalg.eigh(H, subset_by_index=[0, k - 1])
    except (linalg.LinAlgError, ValueError) as e:
        logger.error(f"Weighted eigensolve failed in {sector} sector: {e}")
        raise EigenSolverError(str(e)) from e

    weight = _weight(state)
    parity = "none" if sector == "full" else sector
    pairs = []
    for value, y in zip(values, vectors.T):
        w = _normalize(_to_full(op, sector, scale * y), weight, op.grid.h)
        if sector != "full":
            w = 0.5 * (w + (1.0 if sector == "even" else -1.0) * w[::-1])
        pairs.append(
            EigenPair(
                value=float(value),
                sector=sector,
                w=GridFunction(grid=op.grid, values=w, parity=parity),
            )
        )
    logger.info(
        f"Weighted spectrum ({sector}, k={k}) for p={state.p}: "
        + ", ".join(f"{pair.value:.6f}" for pair in pairs)
    )
    return SpectrumResult(eigenpairs=pairs, base=state, sector=sector, k=k)


def rayleigh_quotient(op: FracOp, state: GroundState, w: GridFunction) -> float:
    """([w]^2 + lambda int w^2) / int u^{p-1} w^2 with nodal sums."""
    wi = w.values[op.grid.interior]
    numerator = float(wi @ (op.A @ wi)) + state.lam * float(wi @ wi)
    denominator = float(np.sum(_weight(state) * w.values**2))
    return numerator / denominator


def weighted_inner(state: GroundState, a: np.ndarray, b: np.ndarray) -> float:
    return float(state.grid.h * np.sum(_weight(state) * a * b))


def nonradial_gap(spec: SpectrumResult, p: float) -> float:
    """min over odd-sector Lambda minus p."""
    if spec.sector != "odd":
        raise DomainError("nonradial_gap needs an odd-sector spectrum")
    if not spec.eigenpairs:
        raise InsufficientSpectrumError("empty spectrum")
    return float(np.min(spec.values) - p)


def discrete_translation_mode(state: GroundState) -> GridFunction:
    """u' by fourth-order differences; the outermost three cells are zeroed."""
    return derivative(state.u, excluded_cells=3)


class ConstrainedMinimum(BaseModel):
    gap: float
    value: float
    w: GridFunction
    constraint_residual: float


def constrained_minimum(op: FracOp, state: GroundState) -> ConstrainedMinimum:
    """Minimum odd Rayleigh quotient subject to int u^{p-1} u' w = 0."""
    if state.domain_kind != "line":
        raise DomainError("the translation-mode constraint applies to line states")
    K, M = _sector_system(op, state, "odd")
    scale = 1.0 / np.sqrt(M)
    H = scale[:, None] * K * scale[None, :]
    grid = op.grid
    du = discrete_translation_mode(state).values[grid.center + 1 : grid.n - 1]
    q = np.sqrt(M) * du
    Q, _ = linalg.qr(q[:, None], mode="full")
    basis = Q[:, 1:]
    try:
        values, vectors = linalg.eigh(basis.T @ H @ basis, subset_by_index=[0, 0])
    except (linalg.LinAlgError, ValueError) as e:
        raise EigenSolverError(str(e)) from e
    y = basis @ vectors[:, 0]
    w = _normalize(_to_full(op, "odd", scale * y), _weight(state), grid.h)
    w = 0.5 * (w - w[::-1])
    full_du = discrete_translation_mode(state).values
    constraint = abs(weighted_inner(state, full_du, w))
    value = float(values[0])
    logger.info(
        f"Constrained odd minimum {value:.6f} (gap {value - state.p:.3e}), "
        f"constraint residual {constraint:.2e}"
    )
    return ConstrainedMinimum(
        gap=value - state.p,
        value=value,
        w=GridFunction(grid=grid, values=w, parity="odd"),
        constraint_residual=constraint,
    )


def constrained_gap(op: FracOp, state: GroundState, p: Optional[float] = None) -> float:
    result = constrained_minimum(op, state)
    return result.value - (state.p if p is None else p)


def morse_index(spec: SpectrumResult, p: float, margin: float = 0.0) -> int:
    """#{k : Lambda_k < p - margin}; the computed list must reach past p."""
    values = spec.values
    if values.size == 0 or values[-1] < p - margin:
        raise InsufficientSpectrumError(
            f"all {values.size} computed eigenvalues lie below p={p}; request more"
        )
    return int(np.count_nonzero(values < p - margin))


def hopf_check(state: GroundState) -> HopfReport:
    """Positivity of v = -u' on x > 0 and of v(x)/x near the origin."""
    grid = state.grid
    recomputed = residual(state)
    if state.u.parity != "even" or recomputed > 10.0 * settings.residual_tol:
        reason = "check requires a converged even state"
        logger.warning(f"Hopf check rejected input: {reason} (residual {recomputed:.2e})")
        return HopfReport(
            passed=False,
            min_positive_v=float("nan"),
            min_ratio=float("nan"),
            ratio_near_zero=float("nan"),
            reason=reason,
        )
    x = grid.nodes
    v = -discrete_translation_mode(state).values
    inside = (x > grid.h * 1.5) & (x < grid.half_width - 3.5 * grid.h)
    min_v = float(np.min(v[inside]))
    near = (x > 0.0) & (x <= 0.1 * grid.half_width)
    ratios = v[near] / x[near]
    min_ratio = float(np.min(ratios))
    passed = min_v > 0.0 and min_ratio > settings.hopf_threshold
    reason = "" if passed else "v = -u' fails to be positive with linear growth at 0"
    return HopfReport(
        passed=passed,
        min_positive_v=min_v,
        min_ratio=min_ratio,
        ratio_near_zero=float(ratios[0]),
        reason=reason,
    )


def boundary_derivative_relation(
    state: GroundState, w: GridFunction, eigenvalue: Optional[float] = None
) -> Tuple[float, float]:
    """(psi_w(1), value predicted from interior integrals) for an even eigenfunction w on the ball.

    For (-Delta)^s w + lambda w = Lambda u^(p-1) w with Lambda != 1,

        2 Gamma(1+s)^2 psi_u psi_w = -(Lambda - p) int x u^(p-1) u' w - 2 s lambda int u w.

    ``eigenvalue`` defaults to p, where the first term drops out.
    """
    if state.domain_kind != "ball" or not state.psi_boundary:
        raise DomainError("relation needs a ball state with a fitted boundary derivative")
    scale = float(np.max(np.abs(w.values)))
    if w.parity == "odd" or not np.allclose(w.values, w.values[::-1], atol=1e-6 * scale):
        raise DomainError("relation holds for even eigenfunctions")
    w = w.with_values(0.5 * (w.values + w.values[::-1]))
    eigenvalue = state.p if eigenvalue is None else eigenvalue
    if abs(eigenvalue - 1.0) < 1e-6:
        raise DomainError("Lambda = 1 belongs to u itself; use the integration-by-parts pairing")
    psi_w, _, _ = boundary_power_fit(
        w.grid.nodes,
        w.values,
        state.s,
        settings.boundary_window,
        side=1,
        min_distance=settings.boundary_skip_cells * w.grid.h,
    )
    h = state.grid.h
    u = state.u.values
    x = state.grid.nodes
    moment = h * float(np.sum(x * u ** (state.p - 1.0) * derivative(state.u).values * w.values))
    coupling = h * float(np.sum(u * w.values))
    gamma_sq = special.gamma(1.0 + state.s) ** 2
    predicted = (-(eigenvalue - state.p) * moment - 2.0 * state.s * state.lam * coupling) / (
        2.0 * gamma_sq * state.psi_boundary
    )
    logger.debug(
        f"Boundary relation at Lambda={eigenvalue:.6f}: psi_w={psi_w:.6e}, predicted={predicted:.6e}"
    )
    return psi_w, predicted
