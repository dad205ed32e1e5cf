from typing import List, Literal, Optional

from pydantic import BaseModel, field_validator, model_validator

from fraclab.schemas.grid_schemas import DomainKind
from fraclab.schemas.state_schemas import Sector
from fraclab.services.utils.kernel_utils import critical_exponent

Command = Literal["solve", "spectrum", "picone", "extend", "branch", "verify"]
TraceKind = Literal["lorentzian", "torsion", "ground_state", "eigenfunction"]


class RunConfig(BaseModel):
    """Parameters of one CLI command, from a JSON file and/or flags."""

    command: Command
    domain: DomainKind = "ball"
    s: float = 0.5
    lam: Optional[float] = None
    p: float = 2.0
    n: int = 1025
    half_width: Optional[float] = None
    tol: Optional[float] = None
    seed: int = 0
    output_dir: Optional[str] = None
    format: Literal["csv", "json"] = "csv"
    plot: bool = False
    check_truncation: bool = False

    # spectrum
    sector: Sector = "full"
    k: int = 3

    # picone
    cutoff_level: float = 8.0

    # extend
    trace: TraceKind = "lorentzian"
    x_window: Optional[float] = None

    # branch
    p_start: float = 1.2
    p_end: float = 4.0

    # verify
    only: Optional[List[str]] = None
    tolerance_scale: float = 1.0
    n_fine: int = 2049

    class Config:
        extra = "forbid"

    @field_validator("s")
    @classmethod
    def _order_in_range(cls, v: float) -> float:
        if not (0.0 < v < 1.0):
            raise ValueError(f"s must lie in (0, 1), got {v}")
        return v

    @field_validator("n", "n_fine")
    @classmethod
    def _odd_node_count(cls, v: int) -> int:
        if v < 9 or v % 2 == 0:
            raise ValueError(f"node counts must be odd and >= 9, got {v}")
        return v

    @field_validator("k")
    @classmethod
    def _positive_k(cls, v: int) -> int:
        if v < 1:
            raise ValueError("k must be at least 1")
        return v

    @field_validator("half_width")
    @classmethod
    def _positive_half_width(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and v <= 0:
            raise ValueError("half_width must be positive")
        return v

    @field_validator("tolerance_scale")
    @classmethod
    def _nonnegative_scale(cls, v: float) -> float:
        if v < 0:
            raise ValueError("tolerance_scale must be nonnegative")
        return v

    @field_validator("cutoff_level")
    @classmethod
    def _cutoff_at_least_one(cls, v: float) -> float:
        if v < 1:
            raise ValueError("cutoff_level must be >= 1")
        return v

    @model_validator(mode="after")
    def _check_exponents(self) -> "RunConfig":
        p_crit = critical_exponent(self.s)
        exponents = [self.p_start, self.p_end] if self.command == "branch" else [self.p]
        for p in exponents:
            if not (1.0 < p < p_crit):
                raise ValueError(f"p={p} outside the subcritical range (1, {p_crit})")
        if self.command == "branch" and self.p_end < self.p_start:
            raise ValueError("p_end must not be below p_start")
        if self.domain == "line" and self.lam is not None and self.lam <= 0:
            raise ValueError("line problems need lambda > 0")
        return self
