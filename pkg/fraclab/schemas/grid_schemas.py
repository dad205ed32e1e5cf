from typing import Literal

import numpy as np
from pydantic import BaseModel, field_validator, model_validator

from fraclab.core.exceptions import GridMismatchError

DomainKind = Literal["ball", "line"]
Parity = Literal["even", "odd", "none"]


class Grid1D(BaseModel):
    """Uniform symmetric mesh on [-L, L] with an odd node count so x = 0 is a node."""

    half_width: float
    n: int
    domain_kind: DomainKind = "ball"

    class Config:
        frozen = True

    @field_validator("n")
    @classmethod
    def _odd_and_large_enough(cls, v: int) -> int:
        if v < 9 or v % 2 == 0:
            raise ValueError(f"node count must be odd and >= 9, got {v}")
        return v

    @model_validator(mode="after")
    def _check_half_width(self) -> "Grid1D":
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if self.domain_kind == "ball" and self.half_width != 1.0:
            raise ValueError("ball grids have half_width exactly 1")
        return self

    @classmethod
    def ball(cls, n: int) -> "Grid1D":
        return cls(half_width=1.0, n=n, domain_kind="ball")

    @classmethod
    def line(cls, n: int, half_width: float) -> "Grid1D":
        return cls(half_width=half_width, n=n, domain_kind="line")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        # Built from integer offsets so node[i] == -node[n-1-i] bit for bit.
        offsets = np.arange(self.n) - (self.n - 1) // 2
        return offsets * self.h

    @property
    def center(self) -> int:
        return (self.n - 1) // 2

    @property
    def interior(self) -> slice:
        return slice(1, self.n - 1)

    def key(self) -> tuple:
        return (self.half_width, self.n, self.domain_kind)


class GridFunction(BaseModel):
    """Nodal values on a Grid1D; the function is zero outside [-L, L]."""

    grid: Grid1D
    values: np.ndarray
    parity: Parity = "none"

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode="after")
    def _check_shape_and_parity(self) -> "GridFunction":
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.n,):
            raise ValueError(
                f"expected {self.grid.n} values, got shape {values.shape}"
            )
        scale = 1e-12 * (1.0 + float(np.max(np.abs(values), initial=0.0)))
        if self.parity == "even" and np.max(np.abs(values - values[::-1])) > scale:
            raise ValueError("values are not even")
        if self.parity == "odd" and np.max(np.abs(values + values[::-1])) > scale:
            raise ValueError("values are not odd")
        self.values = values
        return self

    @classmethod
    def from_callable(cls, grid: Grid1D, f, parity: Parity = "none") -> "GridFunction":
        values = np.asarray(f(grid.nodes), dtype=float)
        if parity == "even":
            values = 0.5 * (values + values[::-1])
        elif parity == "odd":
            values = 0.5 * (values - values[::-1])
        return cls(grid=grid, values=values, parity=parity)

    @classmethod
    def zeros(cls, grid: Grid1D, parity: Parity = "even") -> "GridFunction":
        return cls(grid=grid, values=np.zeros(grid.n), parity=parity)

    def with_values(self, values: np.ndarray, parity: Parity | None = None) -> "GridFunction":
        return GridFunction(
            grid=self.grid, values=values, parity=self.parity if parity is None else parity
        )

    def __mul__(self, other: "GridFunction") -> "GridFunction":
        if other.grid != self.grid:
            raise GridMismatchError("cannot multiply functions on different grids")
        parities = {self.parity, other.parity}
        if "none" in parities:
            parity = "none"
        else:
            parity = "even" if self.parity == other.parity else "odd"
        return GridFunction(grid=self.grid, values=self.values * other.values, parity=parity)


class SchemeInfo(BaseModel):
    singular_cell: str = "closed-form second difference on [0, h]"
    tail: str = "analytic integral of the zero exterior"
    far_field: str = "exact kernel moments of the piecewise-linear interpolant"


class FracOp(BaseModel):
    """Dense discrete (-Delta)^s acting on the interior nodes of a grid."""

    s: float
    grid: Grid1D
    A: np.ndarray
    mass: np.ndarray
    c_s: float
    scheme: SchemeInfo = SchemeInfo()

    class Config:
        arbitrary_types_allowed = True

    @property
    def size(self) -> int:
        return self.A.shape[0]
