import logging
from typing import List, Tuple

import numpy as np

from fraclab.core.config import settings
from fraclab.core.exceptions import GridMismatchError, PreconditionError, SingularInputError
from fraclab.schemas.grid_schemas import FracOp, Grid1D, GridFunction
from fraclab.schemas.report_schemas import PiconeReport
from fraclab.schemas.state_schemas import GroundState
from fraclab.services.operator_service import assemble, bilinear, derivative, kernel_weight
from fraclab.services.utils.kernel_utils import check_order

logger = logging.getLogger(__name__)


def kernel_gap(x: float, y: float, s: float) -> float:
    """|x - y|^{-1-2s} - (x + y)^{-1-2s}: kernel minus its reflection, for x, y > 0."""
    check_order(s)
    if x <= 0 or y <= 0:
        raise SingularInputError(f"kernel_gap needs x, y > 0, got ({x}, {y})")
    if x == y:
        raise SingularInputError("kernel_gap is singular on the diagonal x = y")
    return abs(x - y) ** (-1.0 - 2.0 * s) - (x + y) ** (-1.0 - 2.0 * s)


def smoothstep(t: np.ndarray) -> np.ndarray:
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def build_cutoff(k: float, grid: Grid1D) -> GridFunction:
    """zeta_k(x) = 1 - chi(k (1 - |x| / L)); chi = 1 on (-1, 1), 0 outside (-2, 2)."""
    if k < 1:
        raise PreconditionError("cutoff", f"level k must be >= 1, got {k}")
    r = k * (1.0 - np.abs(grid.nodes) / grid.half_width)
    chi = 1.0 - smoothstep(np.abs(r) - 1.0)
    return GridFunction(grid=grid, values=1.0 - chi, parity="even")


def discrete_potential(op: FracOp, v: GridFunction) -> GridFunction:
    """V = (A v) / v on the nodes where v != 0 (zero elsewhere)."""
    av = np.zeros(op.grid.n)
    av[op.grid.interior] = op.A @ v.values[op.grid.interior]
    potential = np.divide(av, v.values, out=np.zeros_like(av), where=np.abs(v.values) > 0)
    return GridFunction(grid=op.grid, values=potential, parity="even" if v.parity == "odd" else "none")


def linearized_pair(state: GroundState) -> Tuple[GridFunction, GridFunction]:
    """v = -u' and V = p u^(p-1) - lambda, so that (-Delta)^s v = V v away from the truncation."""
    if state.domain_kind != "line":
        raise PreconditionError("line state", "v = -u' solves the linearization only on the line")
    v = derivative(state.u, excluded_cells=3)
    v = v.with_values(-v.values)
    values = state.p * np.maximum(state.u.values, 0.0) ** (state.p - 1.0) - state.lam
    values[[0, -1]] = 0.0
    return v, state.u.with_values(values, parity="even")


def pointwise_identity_gap(wx: float, wy: float, vx: float, vy: float) -> float:
    """(w(x)-w(y))^2 - w(x)^2 (v(x)-v(y))/v(x) + w(y)^2 (v(x)-v(y))/v(y) - v(x)v(y)(w(x)/v(x)-w(y)/v(y))^2."""
    lhs = (wx - wy) ** 2 - wx**2 * (vx - vy) / vx + wy**2 * (vx - vy) / vy
    rhs = vx * vy * (wx / vx - wy / vy) ** 2
    return lhs - rhs


def _check_hypotheses(w: GridFunction, v: GridFunction, ratio_cap: float) -> np.ndarray:
    grid = w.grid
    scale = 1e-12 * (1.0 + np.max(np.abs(w.values)))
    if np.max(np.abs(w.values + w.values[::-1])) > scale:
        raise PreconditionError("w antisymmetric", "w is not odd")
    vscale = 1e-12 * (1.0 + np.max(np.abs(v.values)))
    if np.max(np.abs(v.values + v.values[::-1])) > vscale:
        raise PreconditionError("v antisymmetric", "v is not odd")
    positive = np.arange(grid.center + 1, grid.n - 1)
    support = positive[np.abs(w.values[positive]) > 0.0]
    if support.size and np.any(v.values[support] <= 0.0):
        raise PreconditionError("v positive on the half-line", "v <= 0 somewhere on supp w, x > 0")
    if w.values[0] != 0.0 or w.values[-1] != 0.0:
        raise PreconditionError("w compactly supported", "w does not vanish at the boundary")
    ratio = np.zeros(grid.n)
    ratio[support] = w.values[support] / v.values[support]
    if support.size and np.max(np.abs(ratio[support])) > ratio_cap:
        raise PreconditionError(
            "w/v continuous", f"|w/v| exceeds the cap {ratio_cap:.1e}"
        )
    return ratio


def _quadrant_kernel(op: FracOp, v: GridFunction, ratio: np.ndarray) -> np.ndarray:
    """H_ij = (K_{|i-j|} - K_{i+j}) v_i v_j (r_i - r_j)^2 over node pairs x_i, x_j > 0."""
    grid = op.grid
    idx = np.arange(grid.center + 1, grid.n - 1)
    offsets = idx - grid.center
    r = ratio[idx]
    vv = v.values[idx]
    direct = kernel_weight(op, np.abs(offsets[:, None] - offsets[None, :]))
    reflected = kernel_weight(op, offsets[:, None] + offsets[None, :])
    gap = direct - reflected
    np.fill_diagonal(gap, 0.0)
    return gap * vv[:, None] * vv[None, :] * (r[:, None] - r[None, :]) ** 2


def picone_kernel(w: GridFunction, v: GridFunction, s: float) -> np.ndarray:
    """Discrete H on the quadrant, rows and columns ordered by increasing x > 0."""
    ratio = _check_hypotheses(w, v, settings.picone_ratio_cap)
    return _quadrant_kernel(assemble(w.grid, s), v, ratio)


def picone_residual(
    w: GridFunction,
    v: GridFunction,
    Vpot: GridFunction,
    s: float,
    grid: Grid1D,
    cutoff_level: float = 0.0,
    ratio_cap: float | None = None,
) -> PiconeReport:
    """Both sides of [w]^2 - int V w^2 = iint_{x,y>0} H, by independent code paths.

    lhs uses the Gagliardo pairing and nodal quadrature; rhs sums the quadrant
    kernel with the discrete coupling weights of the operator, so the
    singular cell is shared by both sides.
    """
    for f in (w, v, Vpot):
        if f.grid != grid:
            raise GridMismatchError("picone inputs must share the grid")
    cap = settings.picone_ratio_cap if ratio_cap is None else ratio_cap
    ratio = _check_hypotheses(w, v, cap)
    op = assemble(grid, s)

    lhs = bilinear(op, w, w) - grid.h * float(np.sum(Vpot.values * w.values**2))
    H = _quadrant_kernel(op, v, ratio)
    rhs = grid.h * float(H.sum())

    h_min = float(H.min())
    report = PiconeReport(
        lhs=lhs,
        rhs=rhs,
        residual=abs(lhs - rhs),
        h_min=h_min,
        cutoff_level=cutoff_level,
    )
    logger.info(
        f"Picone audit s={s}: lhs={lhs:.6e} rhs={rhs:.6e} residual={report.residual:.2e}"
    )
    return report


def cutoff_energy_sequence(op: FracOp, w: GridFunction, levels: List[float]) -> List[float]:
    """[zeta_k w]^2 for each k; tends to [w]^2 as k grows."""
    energies = []
    for k in levels:
        zeta = build_cutoff(k, op.grid)
        energies.append(bilinear(op, zeta * w, zeta * w))
    return energies
