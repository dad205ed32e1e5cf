from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel

from fraclab.schemas.grid_schemas import DomainKind, GridFunction

Sector = Literal["even", "odd", "full"]


class SolveOptions(BaseModel):
    tol: Optional[float] = None
    max_iter: Optional[int] = None
    check_truncation: bool = False
    truncation_tol: float = 1e-4
    initial_guess: Optional[np.ndarray] = None

    class Config:
        arbitrary_types_allowed = True


class GroundState(BaseModel):
    u: GridFunction
    s: float
    lam: float
    p: float
    domain_kind: DomainKind
    residual_norm: float
    psi_boundary: Optional[float] = None
    newton_iters: int = 0
    jacobian_condition: Optional[float] = None
    decay_exponent: Optional[float] = None
    truncation_shift: Optional[float] = None

    @property
    def grid(self):
        return self.u.grid

    @property
    def peak(self) -> float:
        return float(self.u.values[self.u.grid.center])


class EigenPair(BaseModel):
    value: float
    sector: Sector
    w: GridFunction


class SpectrumResult(BaseModel):
    eigenpairs: List[EigenPair]
    base: GroundState
    sector: Sector
    k: int

    @property
    def values(self) -> np.ndarray:
        return np.array([pair.value for pair in self.eigenpairs])


class HopfReport(BaseModel):
    passed: bool
    min_positive_v: float
    min_ratio: float
    ratio_near_zero: float
    reason: str = ""
