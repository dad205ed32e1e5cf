import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from fraclab.core.config import settings
from fraclab.core.exceptions import (
    DomainError,
    FitError,
    FracLabError,
    NonConvergenceError,
    TruncationError,
)
from fraclab.schemas.grid_schemas import FracOp, Grid1D, GridFunction
from fraclab.schemas.state_schemas import GroundState, SolveOptions
from fraclab.services.operator_service import assemble, first_dirichlet_eigenpair
from fraclab.services.utils.kernel_utils import check_order, critical_exponent
from fraclab.services.utils.quadrature_utils import boundary_power_fit, l2_distance

logger = logging.getLogger(__name__)


def even_folded_matrix(op: FracOp) -> np.ndarray:
    """Rows of A at the nodes x >= 0 acting on even extensions of half-grid values.

    Column j holds the coupling to the node pair (x_j, -x_j); column 0 is x = 0.
    """
    c = op.grid.center - 1  # centre in interior indexing
    m = op.size
    half = np.arange(c, m)
    mirror = 2 * c - half
    folded = op.A[np.ix_(half, half)].copy()
    folded[:, 1:] += op.A[np.ix_(half, mirror[1:])]
    return folded


def odd_folded_matrix(op: FracOp) -> np.ndarray:
    """Rows of A at the nodes x > 0 acting on odd extensions (value 0 at x = 0)."""
    c = op.grid.center - 1
    m = op.size
    half = np.arange(c + 1, m)
    mirror = 2 * c - half
    return op.A[np.ix_(half, half)] - op.A[np.ix_(half, mirror)]


def unfold(grid: Grid1D, z: np.ndarray, parity: str = "even") -> np.ndarray:
    """Full nodal vector (boundary nodes 0) from values on the nodes x >= 0 (even) or x > 0 (odd)."""
    c = grid.center
    full = np.zeros(grid.n)
    if parity == "even":
        full[c : grid.n - 1] = z
        full[1 : c + 1] = z[::-1]
    else:
        full[c + 1 : grid.n - 1] = z
        full[1:c] = -z[::-1]
    return full


class GroundStateSolver:
    """Damped Newton solver for (-Delta)^s u + lambda u = u^p with u even and positive."""

    def __init__(self, options: Optional[SolveOptions] = None):
        self.options = options or SolveOptions()
        self.tol = self.options.tol if self.options.tol is not None else settings.residual_tol
        self.max_iter = (
            self.options.max_iter
            if self.options.max_iter is not None
            else settings.newton_max_iter
        )
        self.armijo_c = settings.armijo_c
        self.min_step = settings.armijo_min_step
        self.last_error_message: Optional[str] = None

    # Public API

    def solve_ball(self, s: float, lam: float, p: float, grid: Grid1D) -> GroundState:
        if grid.domain_kind != "ball":
            raise DomainError("solve_ball needs a ball grid")
        self._check_exponent(s, p)
        op = assemble(grid, s)
        lambda1, e1 = first_dirichlet_eigenpair(op)
        if lam <= -lambda1 + settings.lambda_margin:
            raise DomainError(
                f"lambda={lam} must exceed -lambda_1(B) = {-lambda1:.6f} by {settings.lambda_margin}"
            )
        state = self._solve_from(op, lam, p, e1.values, self.options.initial_guess)
        logger.info(
            f"Ball ground state s={s} lambda={lam} p={p}: u(0)={state.peak:.8f}, "
            f"residual={state.residual_norm:.2e}, iterations={state.newton_iters}"
        )
        return state

    def solve_line(
        self, s: float, p: float, grid: Grid1D, lam: Optional[float] = None
    ) -> GroundState:
        if grid.domain_kind != "line":
            raise DomainError("solve_line needs a line grid")
        self._check_exponent(s, p)
        lam = settings.line_lambda if lam is None else lam
        if lam <= 0:
            raise DomainError(f"line problems need lambda > 0, got {lam}")
        op = assemble(grid, s)
        profile = (1.0 + grid.nodes**2) ** (-(1.0 + 2.0 * s) / 2.0)
        state = self._solve_from(op, lam, p, profile, self.options.initial_guess)
        update = {"decay_exponent": self._decay_exponent(state)}
        if self.options.check_truncation:
            update["truncation_shift"] = self._check_truncation(state)
        state = state.model_copy(update=update)
        logger.info(
            f"Line ground state s={s} lambda={lam} p={p} L={grid.half_width}: "
            f"u(0)={state.peak:.8f}, residual={state.residual_norm:.2e}"
        )
        return state

    def multistart(
        self,
        s: float,
        lam: float,
        p: float,
        grid: Grid1D,
        n_starts: int,
        seed: int,
    ) -> Tuple[List[GroundState], int]:
        """Newton from randomized positive guesses; returns (distinct states, dropped starts)."""
        if n_starts <= 0:
            return [], 0
        self._check_exponent(s, p)
        op = assemble(grid, s)
        lambda1, e1 = first_dirichlet_eigenpair(op)
        if grid.domain_kind == "line":
            base_profile = (1.0 + grid.nodes**2) ** (-(1.0 + 2.0 * s) / 2.0)
        else:
            base_profile = e1.values
        base = self.galerkin_guess(op, lam, p, base_profile)

        def run(index: int) -> Optional[GroundState]:
            rng = np.random.default_rng([seed, index])
            scale = rng.uniform(0.8, 1.6)
            noise = 1.0 + 0.5 * rng.uniform(-1.0, 1.0, size=grid.n)
            noise = 0.5 * (noise + noise[::-1])
            try:
                return self.newton_solve(op, lam, p, scale * base * noise)
            except FracLabError as e:
                logger.info(f"Multistart {index}: direct Newton failed ({e}), continuing in p")
            try:
                return self.homotopy_solve(op, lam, p, base_profile * noise)
            except FracLabError as e:
                logger.warning(f"Multistart {index} dropped: {e}")
                return None

        with ThreadPoolExecutor(max_workers=max(1, settings.threads)) as pool:
            results = list(pool.map(run, range(n_starts)))

        distinct: List[GroundState] = []
        dropped = 0
        for state in results:
            if state is None:
                dropped += 1
                continue
            if all(
                l2_distance(state.u.values, other.u.values, grid.h) > settings.dedup_tol
                for other in distinct
            ):
                distinct.append(state)
        logger.info(
            f"Multistart s={s} lambda={lam} p={p}: {len(distinct)} distinct of "
            f"{n_starts - dropped} converged ({dropped} dropped)"
        )
        return distinct, dropped

    # Globalization

    def _solve_from(
        self,
        op: FracOp,
        lam: float,
        p: float,
        profile: np.ndarray,
        guess: Optional[np.ndarray] = None,
    ) -> GroundState:
        u0 = self.galerkin_guess(op, lam, p, profile) if guess is None else guess
        try:
            return self.newton_solve(op, lam, p, u0)
        except NonConvergenceError as e:
            logger.warning(f"Direct Newton failed at p={p}: {e}; continuing in p from below")
        return self.homotopy_solve(op, lam, p, profile)

    def homotopy_solve(self, op: FracOp, lam: float, p: float, profile: np.ndarray) -> GroundState:
        """Continuation in the exponent up to p, starting where the one-mode guess is accurate.

        The start is the first of p0 = 1 + (p - 1) / 2^k, k = 1, 2, ..., at which
        Newton converges from the Galerkin guess. Each step rescales the previous
        solution with the Galerkin balance at the new exponent; steps are halved on
        failure and doubled after quick corrections. Intermediate corrections stop
        at a tolerance relative to max u.
        """
        state: Optional[GroundState] = None
        failure: Optional[NonConvergenceError] = None
        for level in range(1, settings.homotopy_start_levels + 1):
            p_current = 1.0 + (p - 1.0) / 2.0**level
            try:
                guess = self.galerkin_guess(op, lam, p_current, profile)
                state = self.newton_solve(op, lam, p_current, guess, relative_tol=True)
                break
            except NonConvergenceError as e:
                failure = e
        if state is None:
            self._set_error(f"No starting exponent in (1, {p}) converged for the continuation in p")
            raise NonConvergenceError(
                self.last_error_message, failure.last_iterate, failure.residual
            ) from failure

        dp = min(settings.dp_initial, p - p_current)
        while p_current < p:
            p_next = min(p, p_current + dp)
            last = p_next >= p
            guess = self.galerkin_guess(op, lam, p_next, state.u.values)
            try:
                candidate = self.newton_solve(op, lam, p_next, guess, relative_tol=not last)
            except NonConvergenceError as e:
                dp *= 0.5
                if dp < settings.dp_min:
                    self._set_error(
                        f"Continuation in p stalled at p={p_current:.6f} on the way to {p}"
                    )
                    raise NonConvergenceError(self.last_error_message, e.last_iterate, e.residual) from e
                continue
            state, p_current = candidate, p_next
            if candidate.newton_iters <= 4:
                dp = min(2.0 * dp, settings.dp_max)
        logger.info(f"Continuation in p reached p={p}: u(0)={state.peak:.8f}")
        return state

    # Newton machinery

    @staticmethod
    def galerkin_guess(op: FracOp, lam: float, p: float, profile: np.ndarray) -> np.ndarray:
        """alpha * profile with alpha from the one-mode Galerkin balance."""
        phi = np.asarray(profile, dtype=float).copy()
        phi[0] = phi[-1] = 0.0
        phi = np.maximum(phi, 0.0)
        inner = phi[op.grid.interior]
        quad = float(inner @ (op.A @ inner)) + lam * float(inner @ inner)
        nonlinear = float(np.sum(inner ** (p + 1.0)))
        alpha = (max(quad, 1e-300) / nonlinear) ** (1.0 / (p - 1.0))
        return alpha * phi

    def newton_solve(
        self,
        op: FracOp,
        lam: float,
        p: float,
        u0: np.ndarray,
        max_iter: Optional[int] = None,
        with_condition: bool = False,
        relative_tol: bool = False,
    ) -> GroundState:
        """Damped Newton on the even half grid from u0.

        With ``relative_tol`` the stopping tolerance is scaled by max(1, max u).
        """
        grid = op.grid
        folded = even_folded_matrix(op)
        z = np.asarray(u0, dtype=float)[grid.center : grid.n - 1].copy()
        max_iter = self.max_iter if max_iter is None else max_iter

        def residual_of(v: np.ndarray) -> np.ndarray:
            return folded @ v + lam * v - np.maximum(v, 0.0) ** p

        F = residual_of(z)
        norm = float(np.max(np.abs(F)))
        iters = 0
        jacobian = None

        def target() -> float:
            if not relative_tol:
                return self.tol
            return self.tol * max(1.0, float(np.max(np.abs(z))))

        while norm > target() and iters < max_iter:
            jacobian = folded + np.diag(lam - p * np.maximum(z, 0.0) ** (p - 1.0))
            try:
                dz = linalg.solve(jacobian, -F)
            except linalg.LinAlgError as e:
                raise NonConvergenceError(
                    f"singular Newton system: {e}", unfold(grid, z), norm
                ) from e
            merit = 0.5 * float(F @ F)
            step = 1.0
            while True:
                trial = z + step * dz
                F_trial = residual_of(trial)
                if 0.5 * float(F_trial @ F_trial) <= (1.0 - 2.0 * self.armijo_c * step) * merit:
                    break
                step *= 0.5
                if step < self.min_step:
                    self._set_error(
                        f"Armijo backtracking failed at iteration {iters} (residual {norm:.3e})"
                    )
                    raise NonConvergenceError(
                        self.last_error_message, unfold(grid, z), norm
                    )
            z = trial
            F = F_trial
            norm = float(np.max(np.abs(F)))
            iters += 1

        if norm > target():
            self._set_error(f"Newton did not converge in {max_iter} iterations ({norm:.3e})")
            raise NonConvergenceError(self.last_error_message, unfold(grid, z), norm)
        if np.any(z <= 0.0):
            self._set_error("Newton converged to a function that is not positive inside")
            raise NonConvergenceError(self.last_error_message, unfold(grid, z), norm)

        u = GridFunction(grid=grid, values=unfold(grid, z), parity="even")
        condition = None
        if with_condition:
            jacobian = folded + np.diag(lam - p * z ** (p - 1.0))
            condition = float(np.linalg.cond(jacobian))
        state = GroundState(
            u=u,
            s=op.s,
            lam=lam,
            p=p,
            domain_kind=grid.domain_kind,
            residual_norm=0.0,
            newton_iters=iters,
            jacobian_condition=condition,
        )
        update = {"residual_norm": residual(state)}
        if grid.domain_kind == "ball":
            update["psi_boundary"] = self._boundary_psi(u, op.s)
        return state.model_copy(update=update)

    # Helpers

    def _set_error(self, message: str) -> None:
        self.last_error_message = message
        logger.error(message)

    @staticmethod
    def _check_exponent(s: float, p: float) -> None:
        check_order(s)
        p_crit = critical_exponent(s)
        if not (1.0 < p < p_crit):
            raise DomainError(f"p={p} outside the subcritical range (1, {p_crit})")

    @staticmethod
    def _boundary_psi(u: GridFunction, s: float) -> Optional[float]:
        try:
            psi, _, _ = boundary_power_fit(
                u.grid.nodes,
                u.values,
                s,
                settings.boundary_window,
                side=1,
                min_distance=settings.boundary_skip_cells * u.grid.h,
            )
        except FitError as e:
            logger.warning(f"Boundary fit skipped: {e}")
            return None
        return psi

    @staticmethod
    def _decay_exponent(state: GroundState) -> float:
        """log2 of u(L/4) / u(L/2); u(L) itself is pinned to 0 by the truncation."""
        grid = state.grid
        L = grid.half_width
        x = grid.nodes
        near = np.interp(L / 4.0, x, state.u.values)
        far = np.interp(L / 2.0, x, state.u.values)
        exponent = float(np.log(near / far) / np.log(2.0))
        expected = 1.0 + 2.0 * state.s
        if abs(exponent - expected) > 0.2 * expected:
            logger.warning(
                f"Measured decay exponent {exponent:.3f} differs from {expected:.3f} by more than 20%"
            )
        return exponent

    def _check_truncation(self, state: GroundState) -> float:
        grid = state.grid
        wide = Grid1D.line(2 * grid.n - 1, 2.0 * grid.half_width)
        inner = GroundStateSolver(SolveOptions(tol=self.tol, max_iter=self.max_iter))
        wide_state = inner.solve_line(state.s, state.p, wide, lam=state.lam)
        shift = abs(wide_state.peak - state.peak)
        tolerance = max(self.options.truncation_tol * state.peak, self.tol)
        if shift > tolerance:
            raise TruncationError(
                f"doubling L moves u(0) by {shift:.3e} (tolerance {tolerance:.3e})"
            )
        logger.info(f"Truncation check passed: u(0) moves by {shift:.3e} under L -> 2L")
        return shift


def residual(state: GroundState) -> float:
    """Max-norm of (-Delta)^s u + lambda u - u^p over interior nodes, from scratch."""
    op = assemble(state.grid, state.s)
    ui = state.u.values[state.grid.interior]
    F = op.A @ ui + state.lam * ui - np.abs(ui) ** state.p
    return float(np.max(np.abs(F)))


def solve_ball(
    s: float, lam: float, p: float, grid: Grid1D, opts: Optional[SolveOptions] = None
) -> GroundState:
    return GroundStateSolver(opts).solve_ball(s, lam, p, grid)


def solve_line(
    s: float, p: float, grid: Grid1D, opts: Optional[SolveOptions] = None, lam: Optional[float] = None
) -> GroundState:
    return GroundStateSolver(opts).solve_line(s, p, grid, lam=lam)


def multistart(
    s: float, lam: float, p: float, grid: Grid1D, n_starts: int, seed: int
) -> List[GroundState]:
    distinct, _ = GroundStateSolver().multistart(s, lam, p, grid, n_starts, seed)
    return distinct


def rescaled_profile(state: GroundState) -> GridFunction:
    """v(x) = u(x / b^{(p-1)/(2s)}) / b with b = max u; v(0) = 1."""
    b = state.peak
    r = b ** ((state.p - 1.0) / (2.0 * state.s))
    x = state.grid.nodes
    values = np.interp(x / r, x, state.u.values, left=0.0, right=0.0) / b
    values = 0.5 * (values + values[::-1])
    return GridFunction(grid=state.grid, values=values, parity="even")
