import logging
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from fraclab import __version__
from fraclab.core.exceptions import DomainError, FracLabError
from fraclab.schemas.grid_schemas import Grid1D, GridFunction
from fraclab.schemas.report_schemas import CriterionResult, ExtensionField, VerifyReport
from fraclab.schemas.state_schemas import GroundState
from fraclab.services.continuation_service import (
    bound_diagnostic,
    trace_branch,
    uniqueness_probe,
)
from fraclab.services.extension_service import (
    closed_form_lorentzian,
    extend,
    extrapolated_boundary_derivative,
    geometric_levels,
    nodal_decompose,
    normal_derivative_mismatch,
    pde_residual,
    pohozaev_pairing,
    window_grid,
)
from fraclab.services.groundstate_service import solve_ball, solve_line
from fraclab.services.operator_service import apply, assemble
from fraclab.services.picone_service import (
    build_cutoff,
    discrete_potential,
    linearized_pair,
    picone_residual,
    pointwise_identity_gap,
)
from fraclab.services.spectrum_service import (
    boundary_derivative_relation,
    constrained_gap,
    discrete_translation_mode,
    weighted_eigs,
)
from fraclab.services.utils.kernel_utils import extension_constant
from fraclab.services.utils.quadrature_utils import (
    alignment,
    count_sign_changes,
    restrict_to_coarse,
    richardson,
)

logger = logging.getLogger(__name__)

GROUPS = (
    "operator",
    "soliton",
    "lambda1",
    "odd_sector_ball",
    "odd_sector_line",
    "nondegeneracy",
    "picone",
    "extension",
    "pohozaev",
    "nodal",
    "uniqueness",
    "branch",
)

_ORDERS = (0.25, 0.5, 0.75)


def _torsion(grid: Grid1D) -> GridFunction:
    return GridFunction.from_callable(
        grid, lambda x: np.sqrt(np.clip(1.0 - x * x, 0.0, None)), parity="even"
    )


def _lorentzian(grid: Grid1D) -> GridFunction:
    return GridFunction.from_callable(grid, lambda x: 1.0 / (1.0 + x * x), parity="even")


class VerificationSuite:
    """Runs the acceptance criteria group by group and collects pass/fail entries.

    Every tolerance is multiplied by ``tolerance_scale``; a scale of 0 turns
    the suite into a negative control.
    """

    def __init__(
        self,
        n: int = 1025,
        n_fine: int = 2049,
        tolerance_scale: float = 1.0,
        seed: int = 0,
        picone_draws: int = 50,
    ):
        if n_fine < n:
            raise DomainError("n_fine must not be below n")
        self.n = n
        self.n_fine = n_fine
        self.scale = tolerance_scale
        self.seed = seed
        self.picone_draws = picone_draws
        self.line_grid = Grid1D.line(4001, 100.0)
        self.extension_grid = Grid1D.line(4001, 20.0)
        self.picone_line_grid = Grid1D.line(1001, 50.0)
        self._states: Dict[Tuple, GroundState] = {}
        self._runners: Dict[str, Callable[[], List[CriterionResult]]] = {
            "operator": self.check_operator,
            "soliton": self.check_soliton,
            "lambda1": self.check_lambda1,
            "odd_sector_ball": self.check_odd_sector_ball,
            "odd_sector_line": self.check_odd_sector_line,
            "nondegeneracy": self.check_full_nondegeneracy,
            "picone": self.check_picone,
            "extension": self.check_extension,
            "pohozaev": self.check_pohozaev,
            "nodal": self.check_nodal,
            "uniqueness": self.check_uniqueness,
            "branch": self.check_branch,
        }

    def run(self, only: Optional[Iterable[str]] = None) -> VerifyReport:
        groups = list(GROUPS) if not only else list(only)
        unknown = [group for group in groups if group not in self._runners]
        if unknown:
            raise DomainError(f"unknown verification group(s): {', '.join(unknown)}")
        entries: List[CriterionResult] = []
        for group in groups:
            logger.info(f"Verifying {group}")
            try:
                results = self._runners[group]()
            except FracLabError as e:
                logger.error(f"Verification group {group} aborted: {e}")
                results = [CriterionResult(group=group, name="run", passed=False, message=str(e))]
            for result in results:
                if not result.passed:
                    logger.warning(f"Criterion {group}:{result.name} failed {result.metrics}")
            entries.extend(results)
        report = VerifyReport(
            version=__version__, tolerance_scale=self.scale, groups=groups, entries=entries
        )
        logger.info(
            f"Verification finished: {len(entries) - len(report.failures)}/{len(entries)} passed"
        )
        return report

    # Cached solves

    def _ball_state(self, s: float, lam: float, p: float, n: Optional[int] = None) -> GroundState:
        n = self.n if n is None else n
        key = ("ball", s, lam, p, n)
        if key not in self._states:
            self._states[key] = solve_ball(s, lam, p, Grid1D.ball(n))
        return self._states[key]

    def _line_state(self, grid: Optional[Grid1D] = None) -> GroundState:
        grid = self.line_grid if grid is None else grid
        key = ("line", grid.n, grid.half_width)
        if key not in self._states:
            self._states[key] = solve_line(0.5, 2.0, grid, lam=1.0)
        return self._states[key]

    def _entry(self, group: str, name: str, passed: bool, **metrics: float) -> CriterionResult:
        return CriterionResult(
            group=group,
            name=name,
            passed=bool(passed),
            metrics={key: float(value) for key, value in metrics.items()},
        )

    # Criteria

    def check_operator(self) -> List[CriterionResult]:
        fine = Grid1D.ball(self.n_fine)
        coarse = Grid1D.ball((self.n_fine + 1) // 2)
        values_fine = apply(assemble(fine, 0.5), _torsion(fine)).values
        values_coarse = apply(assemble(coarse, 0.5), _torsion(coarse)).values
        extrapolated = richardson(values_coarse, restrict_to_coarse(values_fine), order=2.0)
        inside = np.abs(coarse.nodes) <= 0.9
        torsion_error = float(np.max(np.abs(extrapolated[inside] - 1.0)))

        ones = GridFunction(grid=fine, values=np.ones(fine.n), parity="even")
        at_origin = apply(assemble(fine, 0.5), ones).values[fine.center]
        constant_error = abs(at_origin - 2.0 / np.pi) / (2.0 / np.pi)
        return [
            self._entry(
                "operator", "torsion", torsion_error <= 2e-2 * self.scale, max_error=torsion_error
            ),
            self._entry(
                "operator",
                "constant_at_origin",
                constant_error <= 5e-3 * self.scale,
                value=at_origin,
                relative_error=constant_error,
            ),
        ]

    def check_soliton(self) -> List[CriterionResult]:
        state = self._line_state()
        x = state.grid.nodes
        window = np.abs(x) <= 10.0
        exact = 2.0 / (1.0 + x[window] ** 2)
        error = float(np.max(np.abs(state.u.values[window] - exact) / exact))
        # same spacing on half the window
        narrow = self._line_state(
            Grid1D.line((self.line_grid.n + 1) // 2, 0.5 * self.line_grid.half_width)
        )
        shift = abs(state.peak - narrow.peak) / state.peak
        return [
            self._entry(
                "soliton",
                "benjamin_ono",
                error <= 1e-2 * self.scale,
                max_relative_error=error,
                residual=state.residual_norm,
            ),
            self._entry(
                "soliton",
                "truncation",
                shift <= 1e-2 * self.scale,
                relative_shift=shift,
                peak=state.peak,
                peak_half_window=narrow.peak,
            ),
        ]

    def check_lambda1(self) -> List[CriterionResult]:
        cases = [(s, lam) for s in _ORDERS for lam in (0.0, 1.0)]
        results = []
        for s, lam in cases:
            results.append(self._lambda1_entry(self._ball_state(s, lam, 2.0), f"ball_s{s}_lam{lam}"))
        results.append(self._lambda1_entry(self._line_state(), "line_s0.5"))
        return results

    def _lambda1_entry(self, state: GroundState, name: str) -> CriterionResult:
        op = assemble(state.grid, state.s)
        first = weighted_eigs(op, state, "full", 1).eigenpairs[0]
        weight = np.maximum(state.u.values, 0.0) ** (state.p - 1.0)
        align = alignment(first.w.values, state.u.values, weight)
        deviation = abs(first.value - 1.0)
        passed = deviation <= 5e-3 * self.scale and align >= 1.0 - 1e-3 * self.scale
        return self._entry("lambda1", name, passed, lambda1=first.value, alignment=align)

    def check_odd_sector_ball(self) -> List[CriterionResult]:
        results = []
        coarse_n = (self.n + 1) // 2
        for s in _ORDERS:
            for lam in (0.0, 1.0):
                margins = []
                for n in (coarse_n, self.n):
                    state = self._ball_state(s, lam, 2.0, n)
                    odd = weighted_eigs(assemble(state.grid, s), state, "odd", 1)
                    margins.append(float(odd.values[0] - state.p))
                variation = abs(margins[1] - margins[0]) / abs(margins[1])
                passed = min(margins) > 0.0 and variation <= 0.1 * self.scale
                results.append(
                    self._entry(
                        "odd_sector_ball",
                        f"ball_s{s}_lam{lam}",
                        passed,
                        margin=margins[1],
                        margin_coarse=margins[0],
                        variation=variation,
                    )
                )
        return results

    def check_odd_sector_line(self) -> List[CriterionResult]:
        state = self._line_state()
        op = assemble(state.grid, state.s)
        odd = weighted_eigs(op, state, "odd", 1).eigenpairs[0]
        weight = np.maximum(state.u.values, 0.0) ** (state.p - 1.0)
        mode = discrete_translation_mode(state).values
        align = alignment(odd.w.values, mode, weight)
        gaps = []
        for grid in (Grid1D.line((self.line_grid.n + 1) // 2, self.line_grid.half_width), self.line_grid):
            line_state = self._line_state(grid)
            gaps.append(constrained_gap(assemble(grid, 0.5), line_state))
        variation = abs(gaps[1] - gaps[0]) / abs(gaps[1])
        return [
            self._entry(
                "odd_sector_line",
                "translation_mode",
                abs(odd.value - state.p) <= 5e-3 * self.scale and align >= 1.0 - 1e-3 * self.scale,
                eigenvalue=odd.value,
                alignment=align,
            ),
            self._entry(
                "odd_sector_line",
                "constrained_gap",
                min(gaps) > 0.0 and variation <= 0.1 * self.scale,
                gap=gaps[1],
                gap_coarse=gaps[0],
                variation=variation,
            ),
        ]

    def check_full_nondegeneracy(self) -> List[CriterionResult]:
        """Lambda_2 > p on n and n_fine.

        A margin under 5e-3 passes when it agrees between the two grids: close to the
        critical exponent Lambda_2 tends to p from above, like the translation mode on the line.
        """
        cases = [(0.25, 1.5), (0.25, 2.0), (0.25, 2.5)]
        cases += [(s, p) for s in (0.5, 0.75) for p in (1.5, 2.0, 2.5)]
        results = []
        for s, p in cases:
            gaps, closest = [], 0.0
            for n in (self.n, self.n_fine):
                state = self._ball_state(s, 0.0, p, n)
                full = weighted_eigs(assemble(state.grid, s), state, "full", 3)
                gaps.append(float(full.values[1] - p))
                closest = float(np.min(np.abs(full.values - p)))
            drift = abs(gaps[1] - gaps[0])
            resolved = drift <= 0.5 * self.scale * abs(gaps[1])
            passed = min(gaps) > 0.0 and (closest > 5e-3 * self.scale or resolved)
            results.append(
                self._entry(
                    "nondegeneracy",
                    f"s{s}_p{p}",
                    passed,
                    lambda2_gap=gaps[1],
                    lambda2_gap_coarse=gaps[0],
                    closest=closest,
                    drift=drift,
                )
            )
        return results

    def check_picone(self) -> List[CriterionResult]:
        rng = np.random.default_rng(self.seed)
        worst = 0.0
        h_min = np.inf
        line_worst = 0.0
        for draw in range(self.picone_draws):
            modes = np.arange(1, 6)
            coefficients = rng.normal(size=modes.size) / modes
            k = float(rng.choice([4.0, 8.0, 16.0, 32.0]))
            if draw % 2:
                state = self._line_state(self.picone_line_grid)
                grid = state.grid
                s = state.s
                v, potential = linearized_pair(state)
                phi = np.cos(np.pi * np.outer(grid.nodes, modes - 1) / grid.half_width) @ coefficients
                w = build_cutoff(k, grid) * v.with_values(phi * v.values)
            else:
                s = _ORDERS[(draw // 2) % len(_ORDERS)]
                state = self._ball_state(s, 0.0, 2.0)
                grid = state.grid
                v = GridFunction(
                    grid=grid, values=-discrete_translation_mode(state).values, parity="odd"
                )
                potential = discrete_potential(assemble(grid, s), v)
                raw = np.sin(np.pi * np.outer(grid.nodes, modes)) @ coefficients
                w = build_cutoff(k, grid) * GridFunction.from_callable(grid, lambda x: raw, parity="odd")
            report = picone_residual(w, v, potential, s, grid, cutoff_level=k)
            if draw % 2:
                line_worst = max(line_worst, report.relative_residual)
            else:
                worst = max(worst, report.relative_residual)
            h_min = min(h_min, report.h_min)

        state = self._ball_state(0.5, 0.0, 2.0)
        grid = state.grid
        op = assemble(grid, 0.5)
        v = GridFunction(grid=grid, values=-discrete_translation_mode(state).values, parity="odd")
        w = v.with_values(0.75 * v.values)
        report = picone_residual(w, v, discrete_potential(op, v), 0.5, grid)
        norm_sq = grid.h * float(np.sum(w.values**2))
        proportional = max(abs(report.lhs), abs(report.rhs)) / norm_sq

        samples = rng.uniform(0.1, 2.0, size=(200, 4)) * rng.choice([-1.0, 1.0], size=(200, 4))
        pointwise = max(
            abs(pointwise_identity_gap(*row)) / (1.0 + float(np.sum(row**2))) ** 2 for row in samples
        )
        return [
            self._entry(
                "picone",
                "identity_suite",
                worst <= 1e-3 * self.scale and h_min >= -1e-12 * self.scale,
                draws=self.picone_draws,
                max_relative_residual=worst,
                h_min=h_min,
            ),
            self._entry(
                "picone",
                "line_potential",
                line_worst <= 1e-3 * self.scale,
                max_relative_residual=line_worst,
            ),
            self._entry(
                "picone", "proportional_case", proportional <= 1e-10 * self.scale, relative=proportional
            ),
            self._entry(
                "picone", "pointwise_identity", pointwise <= 1e-12 * self.scale, max_gap=pointwise
            ),
        ]

    def check_extension(self) -> List[CriterionResult]:
        line = self.extension_grid
        lorentz = _lorentzian(line)
        field = extend(lorentz, 0.5)
        X, T = np.meshgrid(field.x, field.t)
        box = (np.abs(X) <= 5.0) & (T >= 0.1) & (T <= 5.0)
        field_error = float(np.max(np.abs(field.W[box] - closed_form_lorentzian(X[box], T[box]))))

        mismatches = {
            "lorentzian": normal_derivative_mismatch(field, 3.0),
        }
        fine = Grid1D.ball(self.n_fine)
        mismatches["torsion"] = normal_derivative_mismatch(extend(_torsion(fine), 0.5), 0.9)
        state = self._ball_state(0.5, 0.0, 2.0)
        mismatches["ground_state"] = normal_derivative_mismatch(extend(state.u, 0.5), 0.9)

        box_grid = Grid1D.line(1001, 5.0)
        tgrid = 0.05 * np.arange(1, 111)
        tt = np.concatenate([[0.0], tgrid])
        closed = ExtensionField(
            W=closed_form_lorentzian(box_grid.nodes[None, :], tt[:, None]),
            xgrid=box_grid,
            tgrid=tgrid,
            s=0.5,
            trace=_lorentzian(box_grid),
        )
        residual = pde_residual(closed, x_max=4.9, t_range=(0.5, 5.0))
        window = closed.W[(tt >= 0.5) & (tt <= 5.0)]
        relative = residual / float(np.max(np.abs(window)))

        results = [
            self._entry(
                "extension", "lorentzian_field", field_error <= 1e-3 * self.scale, max_error=field_error
            ),
            self._entry(
                "extension", "pde_residual", relative <= 1e-2 * self.scale, relative_residual=relative
            ),
        ]
        for name, value in mismatches.items():
            results.append(
                self._entry(
                    "extension",
                    f"normal_derivative_{name}",
                    value <= 2e-2 * self.scale,
                    relative_mismatch=value,
                )
            )
        return results

    def check_pohozaev(self) -> List[CriterionResult]:
        grid = Grid1D.ball(self.n_fine)
        torsion = _torsion(grid)
        ones = GridFunction(grid=grid, values=np.ones(grid.n), parity="even")
        state = self._ball_state(0.5, 0.0, 2.0, self.n_fine)
        coarse = self._ball_state(0.5, 0.0, 2.0, (self.n_fine + 1) // 2)
        u = state.u
        fu = u.with_values(np.maximum(u.values, 0.0) ** state.p)
        psi_u = extrapolated_boundary_derivative(coarse.u, u, 0.5)
        pairs = {
            "torsion_torsion": (torsion, torsion, ones, ones, None, None),
            "state_state": (u, u, fu, fu, psi_u, psi_u),
            "state_torsion": (u, torsion, fu, ones, psi_u, None),
        }
        results = []
        for name, (a, b, fa, fb, psi_a, psi_b) in pairs.items():
            report = pohozaev_pairing(a, b, fa, fb, 0.5, psi_u=psi_a, psi_w=psi_b)
            results.append(
                self._entry(
                    "pohozaev",
                    name,
                    report.relative_residual <= 1e-2 * self.scale,
                    residual=report.residual,
                    scale=report.scale,
                )
            )

        relation_state = self._ball_state(0.5, 0.5, 2.0)
        pair = weighted_eigs(assemble(relation_state.grid, 0.5), relation_state, "even", 2).eigenpairs[1]
        psi_w, predicted = boundary_derivative_relation(relation_state, pair.w, eigenvalue=pair.value)
        mismatch = abs(psi_w - predicted) / max(abs(psi_w), abs(predicted))
        results.append(
            self._entry(
                "pohozaev",
                "even_eigenpair_boundary",
                mismatch <= 0.1 * self.scale,
                eigenvalue=pair.value,
                psi_w=psi_w,
                predicted=predicted,
            )
        )
        return results

    def check_nodal(self) -> List[CriterionResult]:
        s, lam, p = 0.5, 0.5, 2.0
        state = self._ball_state(s, lam, p)
        op = assemble(state.grid, s)
        second = weighted_eigs(op, state, "full", 2).eigenpairs[1]
        potential = state.u.with_values(
            second.value * np.maximum(state.u.values, 0.0) ** (p - 1.0) - lam, parity="even"
        )
        levels = geometric_levels(t_min=1e-4, ratio=0.85, levels=85)
        xgrid = window_grid(state.grid)
        decomposition = nodal_decompose(extend(second.w, s, xgrid, levels), potential=potential)
        d_s = extension_constant(s)
        worst = 0.0
        for domain in decomposition.domains:
            target = d_s * domain.trace_integral
            worst = max(worst, abs(domain.energy - target) / max(abs(domain.energy), abs(target)))
        nonempty = all(domain.trace_measure > 0 for domain in decomposition.domains)

        positive = nodal_decompose(extend(state.u, s, xgrid, geometric_levels()))

        coarse = self._ball_state(s, lam, p, (self.n + 1) // 2)
        coarse_second = weighted_eigs(assemble(coarse.grid, s), coarse, "full", 2).eigenpairs[1]
        changes = [
            count_sign_changes(f.w.values[f.w.grid.center + 1 :], tol=1e-8)
            for f in (coarse_second, second)
        ]
        return [
            self._entry(
                "nodal",
                "second_eigenfunction",
                decomposition.domain_count == 2 and nonempty and worst <= 5e-2 * self.scale,
                domains=decomposition.domain_count,
                worst_energy_mismatch=worst,
            ),
            self._entry(
                "nodal", "ground_state", positive.domain_count == 1, domains=positive.domain_count
            ),
            self._entry(
                "nodal",
                "finite_zeros",
                changes[0] == changes[1],
                sign_changes=changes[1],
                sign_changes_coarse=changes[0],
            ),
        ]

    def check_uniqueness(self) -> List[CriterionResult]:
        results = []
        for s, p in ((0.5, 2.0), (0.25, 2.5)):
            counts = [
                uniqueness_probe(s, 0.0, p, Grid1D.ball(n), 20, self.seed)
                for n in ((self.n + 1) // 2, self.n)
            ]
            results.append(
                self._entry(
                    "uniqueness",
                    f"s{s}_p{p}",
                    counts == [1, 1],
                    count_coarse=counts[0],
                    count=counts[1],
                )
            )
        return results

    def check_branch(self) -> List[CriterionResult]:
        results = []
        for lam in (0.0, 1.0):
            branch = trace_branch(0.5, lam, 1.2, 4.0, Grid1D.ball(self.n))
            tracking = max(abs(point.lambda1 - 1.0) for point in branch.points)
            margin = min(point.min_normalized_gap for point in branch.points)
            bounds = bound_diagnostic(branch)
            complete = branch.points[-1].p >= 4.0 - 1e-12 and branch.stats.failure_p is None
            passed = (
                complete
                and not branch.bifurcation_flag
                and margin > 0.0
                and tracking <= 5e-3 * self.scale
                and bounds.passed
            )
            results.append(
                self._entry(
                    "branch",
                    f"lam{lam}",
                    passed,
                    points=len(branch.points),
                    lambda1_tracking=tracking,
                    min_margin=margin,
                    sup_ratio=bounds.sup_ratio,
                )
            )
        return results


def run_verification(
    only: Optional[Iterable[str]] = None,
    tolerance_scale: float = 1.0,
    n: int = 1025,
    n_fine: int = 2049,
    seed: int = 0,
) -> VerifyReport:
    suite = VerificationSuite(n=n, n_fine=n_fine, tolerance_scale=tolerance_scale, seed=seed)
    return suite.run(only)
