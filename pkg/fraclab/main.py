import argparse
import json
import logging
import os
import sys
from typing import Any, Callable, Dict, List, Optional

import numpy as np
from pydantic import ValidationError

from fraclab import __version__
from fraclab.core.config import settings
from fraclab.core.exceptions import ConfigError, DomainError, FracLabError
from fraclab.schemas.config_schemas import RunConfig
from fraclab.schemas.grid_schemas import Grid1D, GridFunction
from fraclab.schemas.state_schemas import GroundState, SolveOptions, SpectrumResult
from fraclab.services.continuation_service import bound_diagnostic, branch_rows, trace_branch
from fraclab.services.extension_service import (
    extend,
    nodal_decompose,
    normal_derivative,
    normal_derivative_mismatch,
    pde_residual,
    window_grid,
)
from fraclab.services.groundstate_service import GroundStateSolver
from fraclab.services.operator_service import assemble
from fraclab.services.picone_service import (
    build_cutoff,
    discrete_potential,
    picone_kernel,
    picone_residual,
)
from fraclab.services.spectrum_service import (
    boundary_derivative_relation,
    discrete_translation_mode,
    morse_index,
    weighted_eigs,
)
from fraclab.services.verify_service import GROUPS, run_verification
from fraclab.utils.file_utils import (
    write_csv,
    write_heatmap,
    write_json,
    write_line_plot,
)

logger = logging.getLogger("fraclab")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COMPUTATION = 2
EXIT_VERIFICATION = 3

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    level = (level or settings.log_level).upper()
    logging.basicConfig(level=level, format=LOG_FORMAT)
    try:
        os.makedirs(settings.logs_dir, exist_ok=True)
    except OSError:
        return
    path = os.path.abspath(os.path.join(settings.logs_dir, "fraclab.log"))
    root = logging.getLogger()
    if any(getattr(h, "baseFilename", None) == path for h in root.handlers):
        return
    handler = logging.FileHandler(path)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)


# Argument parsing


def _common_flags(parser: argparse.ArgumentParser) -> None:
    keep = argparse.SUPPRESS
    parser.add_argument("--config", type=str, default=keep, help="JSON file with run parameters")
    parser.add_argument("--domain", choices=["ball", "line"], default=keep)
    parser.add_argument("--s", type=float, default=keep, help="order in (0, 1)")
    parser.add_argument("--lambda", dest="lam", type=float, default=keep)
    parser.add_argument("--p", type=float, default=keep)
    parser.add_argument("--n", type=int, default=keep, help="odd node count")
    parser.add_argument("--L", dest="half_width", type=float, default=keep)
    parser.add_argument("--tol", type=float, default=keep)
    parser.add_argument("--seed", type=int, default=keep)
    parser.add_argument("--output-dir", dest="output_dir", type=str, default=keep)
    parser.add_argument("--format", choices=["csv", "json"], default=keep)
    parser.add_argument("--plot", action="store_true", default=keep)
    parser.add_argument(
        "--check-truncation",
        dest="check_truncation",
        action="store_true",
        default=keep,
        help="line only: re-solve on [-2L, 2L] and fail if u(0) moves",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fraclab",
        description="Ground states and nondegeneracy checks for the 1D fractional Laplacian.",
    )
    parser.add_argument("--version", action="version", version=f"fraclab {__version__}")
    parser.add_argument("--log-level", dest="log_level", type=str, default=None)
    parser.add_argument("--threads", type=int, default=None, help="worker threads (FRACLAB_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)
    keep = argparse.SUPPRESS

    _common_flags(sub.add_parser("solve", help="solve for the positive ground state"))

    spectrum = sub.add_parser("spectrum", help="weighted linearized eigenvalues")
    _common_flags(spectrum)
    spectrum.add_argument("--sector", choices=["even", "odd", "full"], default=keep)
    spectrum.add_argument("--k", type=int, default=keep)

    picone = sub.add_parser("picone", help="audit the Picone identity")
    _common_flags(picone)
    picone.add_argument("--cutoff-level", dest="cutoff_level", type=float, default=keep)

    ext = sub.add_parser("extend", help="harmonic extension, residuals and nodal domains")
    _common_flags(ext)
    ext.add_argument(
        "--trace",
        choices=["lorentzian", "torsion", "ground_state", "eigenfunction"],
        default=keep,
    )
    ext.add_argument("--x-window", dest="x_window", type=float, default=keep)

    branch = sub.add_parser("branch", help="continuation in p")
    _common_flags(branch)
    branch.add_argument("--p-start", dest="p_start", type=float, default=keep)
    branch.add_argument("--p-end", dest="p_end", type=float, default=keep)

    verify = sub.add_parser("verify", help="run the acceptance suite")
    _common_flags(verify)
    verify.add_argument("--only", nargs="+", choices=list(GROUPS), default=keep)
    verify.add_argument("--tolerance", dest="tolerance_scale", type=float, default=keep)
    verify.add_argument("--n-fine", dest="n_fine", type=int, default=keep)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """File keys first, then flags; unknown keys are rejected."""
    values: Dict[str, Any] = {}
    flags = vars(args).copy()
    flags.pop("log_level", None)
    command = flags.pop("command")
    path = flags.pop("config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        if not isinstance(values, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        if values.get("command", command) != command:
            raise ConfigError(f"config file is for '{values['command']}', not '{command}'")
    values.update(flags)
    values["command"] = command
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(_validation_message(e)) from e


def _validation_message(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item.get("loc", ())) or "config"
        parts.append(f"{location}: {item.get('msg')}")
    return "; ".join(parts)


# Helpers shared by the commands


def _output_dir(config: RunConfig) -> str:
    return config.output_dir or settings.output_dir


def _path(config: RunConfig, suffix: str) -> str:
    return os.path.join(_output_dir(config), f"{config.command}{suffix}")


def _params(config: RunConfig) -> Dict[str, Any]:
    return config.model_dump(exclude_none=True, exclude={"command", "output_dir", "only"})


def _grid(config: RunConfig) -> Grid1D:
    if config.domain == "ball":
        return Grid1D.ball(config.n)
    half_width = config.half_width if config.half_width is not None else settings.line_half_width
    return Grid1D.line(config.n, half_width)


def _lam(config: RunConfig) -> float:
    if config.lam is not None:
        return config.lam
    return settings.line_lambda if config.domain == "line" else 0.0


def _solve(config: RunConfig) -> GroundState:
    solver = GroundStateSolver(
        SolveOptions(tol=config.tol, check_truncation=config.check_truncation)
    )
    grid = _grid(config)
    if config.domain == "ball":
        return solver.solve_ball(config.s, _lam(config), config.p, grid)
    return solver.solve_line(config.s, config.p, grid, lam=_lam(config))


def _write_table(
    config: RunConfig, header: List[str], rows: List[List[float]], suffix: str = ""
) -> str:
    if config.format == "json":
        records = [dict(zip(header, row)) for row in rows]
        return write_json(
            _path(config, f"{suffix}.json"),
            {"version": __version__, "params": _params(config), "rows": records},
        )
    return write_csv(_path(config, f"{suffix}.csv"), header, rows, config.command, _params(config))


def _summary(config: RunConfig, payload: Dict[str, Any]) -> str:
    payload = {"version": __version__, "params": _params(config), **payload}
    return write_json(_path(config, "_summary.json"), payload)


# Commands


def cmd_solve(config: RunConfig) -> int:
    state = _solve(config)
    x = state.grid.nodes
    _write_table(config, ["x", "u"], np.column_stack([x, state.u.values]).tolist())
    _summary(
        config,
        {
            "residual": state.residual_norm,
            "u0": state.peak,
            "psi": state.psi_boundary,
            "newton_iterations": state.newton_iters,
            "decay_exponent": state.decay_exponent,
            "truncation_shift": state.truncation_shift,
        },
    )
    if config.plot:
        write_line_plot(_path(config, ".svg"), x, {"u": state.u.values}, title="ground state")
    logger.info(f"solve finished: u(0)={state.peak:.10f}, files in {_output_dir(config)}")
    return EXIT_OK


def cmd_spectrum(config: RunConfig) -> int:
    state = _solve(config)
    op = assemble(state.grid, state.s)
    result = weighted_eigs(op, state, config.sector, config.k)
    rows = [[k + 1, value] for k, value in enumerate(result.values)]
    _write_table(config, ["k", "Lambda_k"], rows)
    payload: Dict[str, Any] = {
        "values": result.values,
        "gaps": result.values - state.p,
        "u0": state.peak,
        "residual": state.residual_norm,
    }
    if state.domain_kind == "ball" and config.sector != "odd":
        payload["boundary_relation"] = _boundary_relations(state, result)
    if config.sector == "full":
        try:
            payload["morse_index"] = morse_index(result, state.p)
        except FracLabError as e:
            payload["morse_index"] = None
            logger.warning(f"Morse index unavailable: {e}")
    _summary(config, payload)
    if config.plot:
        series = {f"w{k + 1}": pair.w.values for k, pair in enumerate(result.eigenpairs)}
        write_line_plot(_path(config, ".svg"), state.grid.nodes, series, title="eigenfunctions")
    return EXIT_OK


def _boundary_relations(state: GroundState, result: SpectrumResult) -> List[Dict[str, float]]:
    entries = []
    for k, pair in enumerate(result.eigenpairs):
        if abs(pair.value - 1.0) < 1e-6 or pair.sector == "odd":
            continue
        try:
            psi_w, predicted = boundary_derivative_relation(state, pair.w, eigenvalue=pair.value)
        except FracLabError as e:
            logger.debug(f"Boundary relation skipped for k={k + 1}: {e}")
            continue
        entries.append({"k": k + 1, "Lambda": pair.value, "psi_w": psi_w, "predicted": predicted})
    return entries


def cmd_picone(config: RunConfig) -> int:
    state = _solve(config)
    grid = state.grid
    op = assemble(grid, state.s)
    v = GridFunction(grid=grid, values=-discrete_translation_mode(state).values, parity="odd")
    potential = discrete_potential(op, v)
    odd = weighted_eigs(op, state, "odd", 1).eigenpairs[0].w
    w = build_cutoff(config.cutoff_level, grid) * odd
    report = picone_residual(w, v, potential, state.s, grid, cutoff_level=config.cutoff_level)
    _write_table(
        config,
        ["x", "w", "v", "V"],
        np.column_stack([grid.nodes, w.values, v.values, potential.values]).tolist(),
    )
    _summary(config, {"report": report, "relative_residual": report.relative_residual})
    if config.plot:
        write_heatmap(_path(config, "_kernel.png"), picone_kernel(w, v, state.s))
    return EXIT_OK


def _trace(config: RunConfig) -> GridFunction:
    if config.trace == "lorentzian":
        half_width = config.half_width if config.half_width is not None else 20.0
        grid = Grid1D.line(config.n, half_width)
        return GridFunction.from_callable(grid, lambda x: 1.0 / (1.0 + x * x), parity="even")
    if config.trace == "torsion":
        grid = Grid1D.ball(config.n)
        return GridFunction.from_callable(
            grid, lambda x: np.sqrt(np.clip(1.0 - x * x, 0.0, None)), parity="even"
        )
    state = _solve(config)
    if config.trace == "ground_state":
        return state.u
    op = assemble(state.grid, state.s)
    return weighted_eigs(op, state, "full", 2).eigenpairs[1].w


def cmd_extend(config: RunConfig) -> int:
    trace = _trace(config)
    on_ball = trace.grid.domain_kind == "ball"
    xgrid = window_grid(trace.grid, config.x_window) if on_ball else trace.grid
    field = extend(trace, config.s, xgrid)
    limit_field = extend(trace, config.s) if on_ball else field

    x_max = 0.5 * xgrid.half_width
    residual = pde_residual(field, x_max=x_max, t_range=(0.1, 5.0))
    scale = float(np.max(np.abs(field.W)))
    decomposition = nodal_decompose(field)
    limit = normal_derivative(limit_field, config.s)
    window = 0.9 if on_ball else min(3.0, 0.5 * trace.grid.half_width)
    mismatch = normal_derivative_mismatch(limit_field, window)

    X, T = np.meshgrid(field.x, field.t)
    _write_table(config, ["x", "t", "W"], np.column_stack([X.ravel(), T.ravel(), field.W.ravel()]).tolist())
    _summary(
        config,
        {
            "pde_residual": residual,
            "relative_pde_residual": residual / scale,
            "normal_derivative_mismatch": mismatch,
            "nodal_domains": decomposition.domain_count,
            "domains": decomposition.domains,
        },
    )
    write_heatmap(_path(config, ".png"), field.W)
    if config.plot:
        write_line_plot(
            _path(config, ".svg"),
            limit.grid.nodes,
            {"trace": trace.values, "normal derivative": limit.values},
            title="trace and weighted normal derivative",
        )
    return EXIT_OK


def cmd_branch(config: RunConfig) -> int:
    branch = trace_branch(
        config.s, _lam(config), config.p_start, config.p_end, _grid(config), SolveOptions(tol=config.tol)
    )
    header, rows = branch_rows(branch)
    _write_table(config, header, rows)
    bounds = bound_diagnostic(branch)
    _summary(
        config,
        {
            "points": len(branch.points),
            "bifurcation_flag": branch.bifurcation_flag,
            "stats": branch.stats,
            "bounds": bounds,
            "morse_indices": [point.morse_index for point in branch.points],
        },
    )
    if config.plot:
        p = np.array([row[0] for row in rows])
        write_line_plot(
            _path(config, ".svg"),
            p,
            {
                "u(0)": np.array([row[1] for row in rows]),
                "Lambda_2 - p": np.array([row[4] for row in rows]) - p,
                "odd gap": np.array([row[5] for row in rows]),
            },
            title="branch diagram",
            xlabel="p",
            markers=True,
        )
    if branch.stats.failure_p is not None:
        logger.error(f"Branch incomplete: {branch.stats.failure_reason}")
        return EXIT_COMPUTATION
    return EXIT_OK


def cmd_verify(config: RunConfig) -> int:
    report = run_verification(
        only=config.only,
        tolerance_scale=config.tolerance_scale,
        n=config.n,
        n_fine=config.n_fine,
        seed=config.seed,
    )
    write_json(
        _path(config, "_report.json"),
        {
            "version": report.version,
            "passed": report.passed,
            "failures": report.failures,
            "groups": report.groups,
            "tolerance_scale": report.tolerance_scale,
            "entries": report.entries,
        },
    )
    if not report.passed:
        logger.error(f"Verification failed: {', '.join(report.failures)}")
        return EXIT_VERIFICATION
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig], int]] = {
    "solve": cmd_solve,
    "spectrum": cmd_spectrum,
    "picone": cmd_picone,
    "extend": cmd_extend,
    "branch": cmd_branch,
    "verify": cmd_verify,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.__dict__.pop("threads")
    if threads is not None:
        settings.threads = max(1, threads)
    configure_logging(args.log_level)
    try:
        config = load_config(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    try:
        return COMMANDS[config.command](config)
    except DomainError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except FracLabError as e:
        logger.error(f"{config.command} failed: {e}")
        diagnostics = {"command": config.command, "error": type(e).__name__, "message": str(e)}
        residual = getattr(e, "residual", None)
        if residual is not None:
            diagnostics["residual"] = residual
        write_json(_path(config, "_error.json"), diagnostics)
        return EXIT_COMPUTATION


if __name__ == "__main__":
    sys.exit(main())
