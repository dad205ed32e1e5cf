import numpy as np

from fraclab.schemas.grid_schemas import Grid1D, GridFunction


def torsion(grid: Grid1D, s: float = 0.5) -> GridFunction:
    """(1 - x^2)_+^s, whose s-Laplacian is constant on the ball."""
    return GridFunction.from_callable(
        grid, lambda x: np.clip(1.0 - x * x, 0.0, None) ** s, parity="even"
    )


def odd_bump(grid: Grid1D) -> GridFunction:
    return GridFunction.from_callable(grid, lambda x: np.sin(np.pi * x), parity="odd")
