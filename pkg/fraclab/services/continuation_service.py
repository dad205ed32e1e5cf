import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import linalg

from fraclab.core.config import settings
from fraclab.core.exceptions import DomainError, FracLabError, NonConvergenceError
from fraclab.schemas.grid_schemas import FracOp, Grid1D, GridFunction
from fraclab.schemas.report_schemas import (
    BoundReport,
    Branch,
    BranchPoint,
    StepStatistics,
)
from fraclab.schemas.state_schemas import GroundState, SolveOptions
from fraclab.services.groundstate_service import (
    GroundStateSolver,
    even_folded_matrix,
    rescaled_profile,
    unfold,
)
from fraclab.services.operator_service import assemble, first_dirichlet_eigenpair
from fraclab.services.spectrum_service import (
    constrained_gap,
    discrete_translation_mode,
    morse_index,
    weighted_eigs,
    weighted_inner,
)
from fraclab.services.utils.kernel_utils import check_order, critical_exponent
from fraclab.services.utils.quadrature_utils import alignment

logger = logging.getLogger(__name__)

__all__ = [
    "ContinuationService",
    "bound_diagnostic",
    "branch_rows",
    "critical_exponent",
    "trace_branch",
    "uniqueness_probe",
]


class ContinuationService:
    """Natural-parameter continuation in p with a secant predictor and Newton corrector."""

    def __init__(self, options: Optional[SolveOptions] = None):
        self.options = options or SolveOptions()
        self.solver = GroundStateSolver(self.options)
        self.corrector_max_iter = settings.corrector_max_iter
        self.dp_min = settings.dp_min
        self.dp_max = settings.dp_max
        self.last_error_message: Optional[str] = None

    def trace_branch(
        self, s: float, lam: float, p_start: float, p_end: float, grid: Grid1D
    ) -> Branch:
        check_order(s)
        p_end = self._cap_end(s, p_start, p_end)
        stats = StepStatistics()
        op = assemble(grid, s)

        if grid.domain_kind == "ball":
            first = self.solver.solve_ball(s, lam, p_start, grid)
        else:
            first = self.solver.solve_line(s, p_start, grid, lam=lam)
        first = self.solver.newton_solve(op, lam, p_start, first.u.values, with_condition=True)
        points = [self._branch_point(op, first)]
        flag = self._is_degenerate(points[-1])
        stats.accepted = 1

        dp = min(settings.dp_initial, p_end - p_start)
        fast_accepts = 0
        previous_rate: Optional[float] = None
        while not flag and points[-1].p < p_end - 1e-12:
            current = points[-1]
            dp = min(dp, p_end - current.p)
            p_next = current.p + dp
            guess = self._secant_guess(points, p_next)
            try:
                state = self.solver.newton_solve(
                    op, lam, p_next, guess, max_iter=self.corrector_max_iter, with_condition=True
                )
            except NonConvergenceError as e:
                stats.rejected += 1
                logger.debug(f"Corrector rejected p={p_next:.6f}: {e}")
                if dp / 2.0 >= self.dp_min:
                    dp /= 2.0
                    stats.halvings += 1
                    fast_accepts = 0
                    continue
                state = self._arclength_step(op, points, stats)
                if state is None:
                    stats.failure_p = p_next
                    stats.failure_reason = self.last_error_message or str(e)
                    logger.error(
                        f"Branch s={s} lambda={lam} stopped at p={current.p:.6f}: "
                        f"{stats.failure_reason}"
                    )
                    break

            point = self._branch_point(op, state)
            rate = float(np.max(np.abs(state.u.values - current.state.u.values))) / (
                point.p - current.p
            )
            if previous_rate is not None and previous_rate > 0:
                stats.continuity_ratios.append(rate / previous_rate)
            previous_rate = rate
            points.append(point)
            stats.accepted += 1
            logger.info(
                f"Branch point p={point.p:.6f}: u(0)={state.peak:.6f}, Lambda_1={point.lambda1:.6f}, "
                f"Lambda_2={point.lambda2_full:.6f}, odd gap={point.odd_gap:.4e}"
            )
            if self._is_degenerate(point):
                flag = True
                break

            if state.newton_iters <= self.corrector_max_iter // 2:
                fast_accepts += 1
            else:
                fast_accepts = 0
            if fast_accepts >= 3:
                dp = min(2.0 * dp, self.dp_max)
                fast_accepts = 0

        if flag:
            logger.warning(
                f"Bifurcation flag raised at p={points[-1].p:.6f}: normalized gap "
                f"{points[-1].min_normalized_gap:.3e} below {settings.bifurcation_threshold}"
            )
        return Branch(
            points=points,
            s=s,
            lam=lam,
            domain_kind=grid.domain_kind,
            stats=stats,
            bifurcation_flag=flag,
        )

    # Helpers

    def _set_error(self, message: str) -> None:
        self.last_error_message = message
        logger.error(message)

    @staticmethod
    def _cap_end(s: float, p_start: float, p_end: float) -> float:
        p_crit = critical_exponent(s)
        if p_end < p_start:
            raise DomainError(f"p_end={p_end} lies below p_start={p_start}")
        if np.isfinite(p_crit):
            if p_end >= p_crit:
                raise DomainError(f"p_end={p_end} is not below the critical exponent {p_crit}")
        elif p_end > settings.p_cap:
            logger.warning(f"p_end={p_end} capped at {settings.p_cap}")
            p_end = settings.p_cap
        if p_start > p_end:
            raise DomainError(f"p_start={p_start} lies above the capped end {p_end}")
        return p_end

    @staticmethod
    def _secant_guess(points: List[BranchPoint], p_next: float) -> np.ndarray:
        current = points[-1]
        if len(points) < 2:
            return current.state.u.values
        previous = points[-2]
        slope = (current.state.u.values - previous.state.u.values) / (current.p - previous.p)
        guess = current.state.u.values + (p_next - current.p) * slope
        return np.where(guess > 0.0, guess, 0.5 * current.state.u.values)

    def _arclength_step(
        self, op: FracOp, points: List[BranchPoint], stats: StepStatistics
    ) -> Optional[GroundState]:
        """One pseudo-arclength corrector along the last secant; None if it fails."""
        stats.arclength_attempts += 1
        if len(points) < 2:
            self._set_error("pseudo-arclength step needs two accepted points")
            return None
        grid = op.grid
        lam = points[-1].state.lam
        folded = even_folded_matrix(op)
        z1 = points[-1].state.u.values[grid.center : grid.n - 1]
        z0 = points[-2].state.u.values[grid.center : grid.n - 1]
        p1, p0 = points[-1].p, points[-2].p
        tangent = np.concatenate([z1 - z0, [p1 - p0]])
        ds = float(np.linalg.norm(tangent))
        tangent /= ds
        y = np.concatenate([z1, [p1]]) + ds * tangent

        for _ in range(self.corrector_max_iter):
            z, p = y[:-1], y[-1]
            zp = np.maximum(z, 1e-300)
            F = np.concatenate(
                [
                    folded @ z + lam * z - zp**p,
                    [tangent @ (y - np.concatenate([z1, [p1]])) - ds],
                ]
            )
            if np.max(np.abs(F)) <= self.solver.tol:
                break
            J = np.zeros((z.size + 1, z.size + 1))
            J[:-1, :-1] = folded + np.diag(lam - p * zp ** (p - 1.0))
            J[:-1, -1] = -(zp**p) * np.log(zp)
            J[-1] = tangent
            try:
                y = y - linalg.solve(J, F)
            except linalg.LinAlgError as e:
                self._set_error(f"pseudo-arclength system singular: {e}")
                return None
        z, p = y[:-1], float(y[-1])
        if not (p > p1) or np.any(z <= 0.0):
            self._set_error(f"pseudo-arclength step did not advance p (p={p:.6f})")
            return None
        try:
            return self.solver.newton_solve(op, lam, p, unfold(grid, z), with_condition=True)
        except FracLabError as e:
            self._set_error(f"pseudo-arclength polish failed: {e}")
            return None

    def _branch_point(self, op: FracOp, state: GroundState) -> BranchPoint:
        p = state.p
        k_full = min(3, op.size)
        full = weighted_eigs(op, state, "full", k_full)
        even = weighted_eigs(op, state, "even", min(3, op.grid.center))
        odd = weighted_eigs(op, state, "odd", min(2, op.grid.center - 1))

        if state.domain_kind == "line":
            mode = discrete_translation_mode(state).values
            odd_gap = constrained_gap(op, state)
            candidates = [
                pair
                for pair in full.eigenpairs
                if alignment(pair.w.values, mode, state.u.values ** (p - 1.0)) < 0.99
            ]
        else:
            odd_gap = float(np.min(odd.values) - p)
            candidates = full.eigenpairs
        gaps = [
            abs(pair.value - p) * weighted_inner(state, pair.w.values, pair.w.values)
            for pair in candidates
        ]
        try:
            morse = morse_index(full, p)
        except FracLabError:
            morse = int(np.count_nonzero(full.values < p))
        return BranchPoint(
            p=p,
            state=state,
            lambda1=float(full.values[0]),
            lambda2_full=float(full.values[1]) if full.values.size > 1 else float("nan"),
            odd_gap=odd_gap,
            even_gap=float(np.min(even.values[1:]) - p) if even.values.size > 1 else float("nan"),
            morse_index=morse,
            min_normalized_gap=float(min(gaps)) if gaps else float("inf"),
            jacobian_condition=state.jacobian_condition,
        )

    @staticmethod
    def _is_degenerate(point: BranchPoint) -> bool:
        return point.min_normalized_gap < settings.bifurcation_threshold


def trace_branch(
    s: float,
    lam: float,
    p_start: float,
    p_end: float,
    grid: Grid1D,
    opts: Optional[SolveOptions] = None,
) -> Branch:
    return ContinuationService(opts).trace_branch(s, lam, p_start, p_end, grid)


def uniqueness_probe(
    s: float, lam: float, p: float, grid: Grid1D, n_starts: int, seed: int
) -> int:
    """Number of distinct converged solutions among n_starts randomized Newton runs."""
    if n_starts <= 0:
        return 0
    distinct, dropped = GroundStateSolver().multistart(s, lam, p, grid, n_starts, seed)
    logger.info(
        f"Uniqueness probe s={s} lambda={lam} p={p} n={grid.n}: {len(distinct)} distinct "
        f"({dropped} of {n_starts} starts dropped)"
    )
    return len(distinct)


def _nodal_integral(u: GridFunction, power: float) -> float:
    return u.grid.h * float(np.sum(np.maximum(u.values, 0.0) ** power))


def bound_diagnostic(branch: Branch) -> BoundReport:
    """Uniform sup-norm bound and explicit integral lower bounds along a branch."""
    if not branch.points:
        raise DomainError("bound_diagnostic needs a nonempty branch")
    s, lam = branch.s, branch.lam
    grid = branch.points[0].state.grid
    peaks = np.array([point.state.peak for point in branch.points])

    if branch.domain_kind == "ball":
        lambda1, _ = first_dirichlet_eigenpair(assemble(grid, s))
        coercivity = min(lambda1, lambda1 + lam)
    else:
        lambda1 = 0.0
        coercivity = lam
    # sup-norms relative to the linear scale (lambda_1 + lambda)^{1/(p-1)}
    linear_scale = np.array(
        [(lambda1 + lam) ** (1.0 / (point.p - 1.0)) for point in branch.points]
    )
    normalized = peaks / linear_scale
    sup_ratio = float(np.max(normalized) / np.median(normalized))
    p_star = 2.0 / (1.0 - 2.0 * s) if 2.0 * s < 1.0 else float("inf")

    poincare_ok: List[bool] = []
    holder_ok: List[bool] = []
    rescaled_peaks: List[float] = []
    slack = 1.0 + 1e-9
    for point in branch.points:
        u = point.state.u
        lp1 = _nodal_integral(u, point.p + 1.0)
        l2 = _nodal_integral(u, 2.0)
        poincare_ok.append(lp1 * slack >= coercivity * l2)
        if np.isfinite(p_star) and branch.domain_kind == "ball":
            exponent = (point.p + 1.0) / p_star
            upper = 2.0 ** (1.0 - exponent) * _nodal_integral(u, p_star) ** exponent
            holder_ok.append(lp1 <= upper * slack)
        rescaled = rescaled_profile(point.state)
        rescaled_peaks.append(float(rescaled.values[grid.center]))

    passed = (
        sup_ratio <= 10.0
        and all(poincare_ok)
        and all(holder_ok)
        and all(abs(v - 1.0) <= 1e-9 for v in rescaled_peaks)
    )
    if not passed:
        logger.warning(f"Bound diagnostic failed for s={s} lambda={lam} (sup ratio {sup_ratio:.3f})")
    details: Dict[str, float] = {
        "lambda1": float(lambda1),
        "coercivity": float(coercivity),
        "max_peak": float(np.max(peaks)),
        "median_peak": float(np.median(peaks)),
    }
    return BoundReport(
        passed=passed,
        sup_ratio=sup_ratio,
        poincare_ok=poincare_ok,
        holder_ok=holder_ok,
        rescaled_peaks=rescaled_peaks,
        details=details,
    )


def branch_rows(branch: Branch) -> Tuple[List[str], List[List[float]]]:
    """(header, rows) for the branch CSV."""
    header = ["p", "u0", "psi_u1", "lambda1", "lambda2", "odd_gap", "even_gap"]
    rows = [
        [
            point.p,
            point.state.peak,
            point.state.psi_boundary if point.state.psi_boundary is not None else float("nan"),
            point.lambda1,
            point.lambda2_full,
            point.odd_gap,
            point.even_gap,
        ]
        for point in branch.points
    ]
    return header, rows
