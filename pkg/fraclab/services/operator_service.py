import logging
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy import linalg

from fraclab.core.exceptions import GridMismatchError
from fraclab.schemas.grid_schemas import FracOp, Grid1D, GridFunction
from fraclab.services.utils.kernel_utils import (
    check_order,
    constant_cs,
    diagonal_coefficient,
    kernel_coefficients,
)
from fraclab.services.utils.quadrature_utils import centered_derivative, simpson_weights

logger = logging.getLogger(__name__)

__all__ = [
    "constant_cs",
    "assemble",
    "apply",
    "bilinear",
    "integrate",
    "derivative",
    "kernel_weight",
    "first_dirichlet_eigenpair",
]


@lru_cache(maxsize=16)
def _assemble_cached(grid: Grid1D, s: float) -> FracOp:
    m = grid.n - 2
    c_s = constant_cs(s)
    scale = c_s * grid.h ** (-2.0 * s)
    a = kernel_coefficients(m - 1, s)
    column = np.empty(m)
    column[0] = diagonal_coefficient(s)
    column[1:] = -a[1:]
    A = scale * linalg.toeplitz(column)
    A.setflags(write=False)
    mass = np.full(m, grid.h)
    logger.info(
        f"Assembled fractional operator: s={s}, n={grid.n}, L={grid.half_width}, h={grid.h:.3e}"
    )
    return FracOp(s=s, grid=grid, A=A, mass=mass, c_s=c_s)


def assemble(grid: Grid1D, s: float) -> FracOp:
    """Dense (-Delta)^s on the interior nodes, zero exterior folded into the diagonal."""
    check_order(s)
    return _assemble_cached(grid, float(s))


def kernel_weight(op: FracOp, k: np.ndarray) -> np.ndarray:
    """Coupling between nodes k cells apart, also for k beyond the matrix size.

    Returned in physical units so that -kernel_weight(op, |i-j|) is A[i, j].
    """
    k = np.asarray(k, dtype=int)
    kmax = int(np.max(k, initial=1))
    a = kernel_coefficients(max(kmax, 1), op.s)
    return op.c_s * op.grid.h ** (-2.0 * op.s) * a[k]


def _check_grid(op: FracOp, *functions: GridFunction) -> None:
    for f in functions:
        if f.grid != op.grid:
            raise GridMismatchError(
                f"function grid {f.grid.key()} differs from operator grid {op.grid.key()}"
            )


def apply(op: FracOp, u: GridFunction) -> GridFunction:
    """Discrete (-Delta)^s u at interior nodes; the boundary entries are 0."""
    _check_grid(op, u)
    out = np.zeros(op.grid.n)
    out[op.grid.interior] = op.A @ u.values[op.grid.interior]
    parity = u.parity
    if parity != "none":
        # Reflection commutes with A; restore exact symmetry lost to round-off.
        out = 0.5 * (out + (1.0 if parity == "even" else -1.0) * out[::-1])
    return GridFunction(grid=op.grid, values=out, parity=parity)


def bilinear(op: FracOp, u: GridFunction, v: GridFunction) -> float:
    """Discrete Gagliardo pairing [u, v]_s = h v^T A u."""
    _check_grid(op, u, v)
    ui = u.values[op.grid.interior]
    vi = v.values[op.grid.interior]
    return float(vi @ (op.A @ ui)) * op.grid.h


def integrate(f: GridFunction) -> float:
    """Composite Simpson quadrature of f over [-L, L]."""
    weights = simpson_weights(f.grid.n, f.grid.h)
    return float(weights @ f.values)


def first_dirichlet_eigenpair(op: FracOp) -> Tuple[float, GridFunction]:
    """lambda_1 and the positive first eigenfunction (max value 1)."""
    vals, vecs = linalg.eigh(op.A, subset_by_index=[0, 0])
    e1 = vecs[:, 0]
    e1 = e1 / e1[np.argmax(np.abs(e1))]
    values = np.zeros(op.grid.n)
    values[op.grid.interior] = e1
    values = 0.5 * (values + values[::-1])
    return float(vals[0]), GridFunction(grid=op.grid, values=values, parity="even")


def dirichlet_eigenvalues(op: FracOp, k: int) -> np.ndarray:
    return linalg.eigh(op.A, eigvals_only=True, subset_by_index=[0, k - 1])


def derivative(u: GridFunction, excluded_cells: int = 2) -> GridFunction:
    """u' by fourth-order centered differences, zero on the outermost cells."""
    values = centered_derivative(u.values, u.grid.h, excluded_cells=excluded_cells)
    parity = {"even": "odd", "odd": "even"}.get(u.parity, "none")
    if parity != "none":
        values = 0.5 * (values + (1.0 if parity == "even" else -1.0) * values[::-1])
    return GridFunction(grid=u.grid, values=values, parity=parity)
