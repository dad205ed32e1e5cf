from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel

from fraclab.schemas.grid_schemas import DomainKind, Grid1D, GridFunction
from fraclab.schemas.state_schemas import GroundState


class PiconeReport(BaseModel):
    lhs: float
    rhs: float
    residual: float
    h_min: float
    cutoff_level: float = 0.0

    @property
    def relative_residual(self) -> float:
        return self.residual / max(abs(self.lhs), abs(self.rhs), 1e-300)


class ExtensionField(BaseModel):
    """W(x, t) on xgrid x tgrid; row 0 is the trace t = 0."""

    W: np.ndarray
    xgrid: Grid1D
    tgrid: np.ndarray
    s: float
    trace: GridFunction

    class Config:
        arbitrary_types_allowed = True

    @property
    def x(self) -> np.ndarray:
        return self.xgrid.nodes

    @property
    def t(self) -> np.ndarray:
        return np.concatenate([[0.0], self.tgrid])


class BoundaryDerivative(BaseModel):
    psi_right: float
    psi_left: float
    fit_residual: float
    correction_right: float


class NodalDomain(BaseModel):
    label: int
    sign: int
    cells: int
    energy: float
    trace_measure: float
    trace_integral: float


class NodalDecomposition(BaseModel):
    labels: np.ndarray
    domain_count: int
    domains: List[NodalDomain]
    threshold: float

    class Config:
        arbitrary_types_allowed = True


class BranchPoint(BaseModel):
    p: float
    state: GroundState
    lambda1: float
    lambda2_full: float
    odd_gap: float
    even_gap: float
    morse_index: int
    min_normalized_gap: float
    jacobian_condition: Optional[float] = None


class StepStatistics(BaseModel):
    accepted: int = 0
    rejected: int = 0
    halvings: int = 0
    arclength_attempts: int = 0
    continuity_ratios: List[float] = []
    failure_p: Optional[float] = None
    failure_reason: str = ""


class Branch(BaseModel):
    points: List[BranchPoint]
    s: float
    lam: float
    domain_kind: DomainKind
    stats: StepStatistics
    bifurcation_flag: bool = False


class BoundReport(BaseModel):
    passed: bool
    sup_ratio: float
    poincare_ok: List[bool]
    holder_ok: List[bool]
    rescaled_peaks: List[float]
    details: Dict[str, float] = {}


class PohozaevReport(BaseModel):
    """Terms of int x u' fw = -int x w' fu - 2 Gamma(1+s)^2 psi_u psi_w - (1-2s)[u, w]."""

    lhs: float
    mixed: float
    boundary: float
    gagliardo: float
    residual: float
    scale: float

    @property
    def terms(self) -> List[float]:
        return [self.lhs, self.mixed, self.boundary, self.gagliardo]

    @property
    def relative_residual(self) -> float:
        return self.residual / self.scale if self.scale > 0 else self.residual


class CriterionResult(BaseModel):
    group: str
    name: str
    passed: bool
    metrics: Dict[str, float] = {}
    message: str = ""


class VerifyReport(BaseModel):
    version: str
    tolerance_scale: float
    groups: List[str]
    entries: List[CriterionResult]

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    @property
    def failures(self) -> List[str]:
        return [f"{entry.group}:{entry.name}" for entry in self.entries if not entry.passed]
