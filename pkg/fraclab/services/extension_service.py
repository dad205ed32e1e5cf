import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Tuple

import numpy as np
from scipy import signal, special

from fraclab.core.config import settings
from fraclab.core.exceptions import DomainError, FitError
from fraclab.schemas.grid_schemas import Grid1D, GridFunction
from fraclab.schemas.report_schemas import (
    BoundaryDerivative,
    ExtensionField,
    NodalDecomposition,
    NodalDomain,
    PohozaevReport,
)
from fraclab.services.operator_service import apply, assemble, bilinear
from fraclab.services.utils.kernel_utils import (
    check_order,
    extension_constant,
    poisson_constant,
)
from fraclab.services.utils.nodal_utils import cell_owner, label_sign_components
from fraclab.services.utils.quadrature_utils import (
    boundary_power_fit,
    richardson,
    simpson_weights,
)

logger = logging.getLogger(__name__)

_X_BLOCK = 256


def poisson_kernel(x: np.ndarray, t: float, s: float) -> np.ndarray:
    return poisson_constant(s) * t ** (2.0 * s) * (t * t + x * x) ** (-(1.0 + 2.0 * s) / 2.0)


def closed_form_lorentzian(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Half-harmonic extension of 1 / (1 + x^2)."""
    return (1.0 + t) / ((1.0 + t) ** 2 + x**2)


def geometric_levels(
    t_min: Optional[float] = None, ratio: Optional[float] = None, levels: Optional[int] = None
) -> np.ndarray:
    t_min = settings.t_min if t_min is None else t_min
    ratio = settings.t_ratio if ratio is None else ratio
    levels = settings.t_levels if levels is None else levels
    if not (0.0 < ratio < 1.0) or t_min <= 0 or levels < 1:
        raise DomainError("geometric t-levels need t_min > 0, ratio in (0, 1), levels >= 1")
    return t_min * (1.0 / ratio) ** np.arange(levels)


def window_grid(trace_grid: Grid1D, half_width: Optional[float] = None) -> Grid1D:
    """Line grid on [-X, X] sharing the spacing and lattice of ``trace_grid``."""
    half_width = settings.x_window if half_width is None else half_width
    cells = int(round(half_width / trace_grid.h))
    return Grid1D.line(n=2 * cells + 1, half_width=cells * trace_grid.h)


def _kernel_cdf(z: np.ndarray, s: float) -> np.ndarray:
    # int_{-inf}^z p_{1,s} (1 + r^2)^{-(1+2s)/2} dr
    return 0.5 * (1.0 + np.sign(z) * special.betainc(0.5, s, z * z / (1.0 + z * z)))


def _kernel_first_moment(z: np.ndarray, s: float) -> np.ndarray:
    # antiderivative of r (1 + r^2)^{-(1+2s)/2}
    if abs(s - 0.5) < 1e-14:
        return 0.5 * np.log1p(z * z)
    return (1.0 + z * z) ** (0.5 - s) / (1.0 - 2.0 * s)


def _lattice_offset(trace_grid: Grid1D, xgrid: Grid1D) -> Optional[int]:
    """Index shift m with x_i = y_{i+m}, or None when the grids do not share a lattice."""
    if abs(xgrid.h - trace_grid.h) > 1e-12 * trace_grid.h:
        return None
    return trace_grid.center - xgrid.center


def _extend_level_lattice(
    v: np.ndarray, h: float, m0: int, size: int, t: float, s: float
) -> np.ndarray:
    """Exact Poisson integral of the piecewise-linear trace when x shares the trace lattice.

    Cell j enters the value at x_i through d = j - (i + m0) only, so a level
    is two discrete convolutions.
    """
    n = v.size
    slope = np.diff(v) / h
    d = np.arange(-(size - 1) - m0, n - m0, dtype=float)
    z = d * h / t
    dG = np.diff(_kernel_cdf(z, s))
    dF = np.diff(_kernel_first_moment(z, s))
    slope_kernel = t * poisson_constant(s) * dF - d[:-1] * h * dG
    full = signal.fftconvolve(v[:-1], dG[::-1]) + signal.fftconvolve(slope, slope_kernel[::-1])
    return full[n - 2 : n - 2 + size]


def _extend_level_direct(
    y: np.ndarray, v: np.ndarray, x: np.ndarray, t: float, s: float
) -> np.ndarray:
    h = y[1] - y[0]
    slope = np.diff(v) / h
    p = poisson_constant(s)
    out = np.empty(x.size)
    for start in range(0, x.size, _X_BLOCK):
        xb = x[start : start + _X_BLOCK, None]
        z = (y[None, :] - xb) / t
        G = _kernel_cdf(z, s)
        F = _kernel_first_moment(z, s)
        alpha = v[None, :-1] + slope[None, :] * (xb - y[None, :-1])
        beta = slope[None, :] * t
        out[start : start + _X_BLOCK] = np.sum(
            alpha * np.diff(G, axis=1) + beta * p * np.diff(F, axis=1), axis=1
        )
    return out


def extend(
    v: GridFunction,
    s: float,
    xgrid: Optional[Grid1D] = None,
    tgrid: Optional[np.ndarray] = None,
) -> ExtensionField:
    """W(x, t) = p_{1,s} t^{2s} int v(y) (t^2 + |x-y|^2)^{-(1+2s)/2} dy.

    v is taken piecewise linear between nodes and zero outside its grid; the
    integral over each cell is evaluated in closed form.
    """
    check_order(s)
    xgrid = v.grid if xgrid is None else xgrid
    tgrid = geometric_levels() if tgrid is None else np.asarray(tgrid, dtype=float)
    if tgrid.ndim != 1 or tgrid.size == 0 or np.any(tgrid <= 0) or np.any(np.diff(tgrid) <= 0):
        raise DomainError("t levels must be positive and strictly increasing")
    y = v.grid.nodes
    x = xgrid.nodes
    values = np.asarray(v.values, dtype=float)
    m0 = _lattice_offset(v.grid, xgrid)

    def level(t: float) -> np.ndarray:
        if m0 is not None:
            return _extend_level_lattice(values, v.grid.h, m0, x.size, t, s)
        return _extend_level_direct(y, values, x, t, s)

    with ThreadPoolExecutor(max_workers=max(1, settings.threads)) as pool:
        rows = list(pool.map(level, tgrid))

    W = np.empty((tgrid.size + 1, x.size))
    W[0] = np.interp(x, y, values, left=0.0, right=0.0)
    W[1:] = np.array(rows)
    if v.parity != "none":
        sign = 1.0 if v.parity == "even" else -1.0
        W = 0.5 * (W + sign * W[:, ::-1])
    logger.info(
        f"Extended trace (n={v.grid.n}) to a {tgrid.size} x {x.size} field, s={s}, "
        f"{'lattice' if m0 is not None else 'direct'} quadrature"
    )
    return ExtensionField(W=W, xgrid=xgrid, tgrid=tgrid, s=s, trace=v)


def pde_residual(
    field: ExtensionField,
    x_max: Optional[float] = None,
    t_range: Optional[Tuple[float, float]] = None,
) -> float:
    """max |div(t^{1-2s} grad W)| over interior nodes away from t = 0 and the lateral edges.

    The t-flux is a difference quotient in the variable t^{2s}, exact for W = t^{2s}.
    """
    if field.tgrid.size < 3:
        raise DomainError(f"pde_residual needs at least 3 t-levels, got {field.tgrid.size}")
    s = field.s
    t = field.t
    W = field.W
    hx = field.xgrid.h
    power = t ** (2.0 * s)
    flux = np.diff(W, axis=0) / (np.diff(power)[:, None] / (2.0 * s))
    div_t = (flux[1:] - flux[:-1]) / (0.5 * (t[2:] - t[:-2]))[:, None]
    lap_x = (W[1:-1, 2:] - 2.0 * W[1:-1, 1:-1] + W[1:-1, :-2]) / hx**2
    res = div_t[:, 1:-1] + (t[1:-1] ** (1.0 - 2.0 * s))[:, None] * lap_x

    tr = t[1:-1]
    keep_t = np.arange(tr.size) >= 1
    if t_range is not None:
        keep_t &= (tr >= t_range[0]) & (tr <= t_range[1])
    keep_x = np.ones(res.shape[1], dtype=bool)
    if x_max is not None:
        keep_x = np.abs(field.x[1:-1]) <= x_max
    window = res[np.ix_(keep_t, keep_x)]
    if window.size == 0:
        raise DomainError("residual window contains no nodes")
    return float(np.max(np.abs(window)))


def normal_derivative(
    field: ExtensionField, s: float, fit_range: Optional[Tuple[float, float]] = None
) -> GridFunction:
    """-lim t^{1-2s} d_t W, extrapolated from q(t) = -2s (W - W(., 0)) / t^{2s}.

    q is fitted on [1, t^{2-2s}, t^2, t^{4-2s}] over the levels in ``fit_range``
    (default [4h, 40h] with h the trace spacing).
    """
    h = field.trace.grid.h
    lo, hi = fit_range if fit_range is not None else (4.0 * h, 40.0 * h)
    t = field.tgrid
    rows = np.nonzero((t >= lo) & (t <= hi))[0]
    if rows.size < 5:
        raise FitError(
            f"normal-derivative extrapolation needs >= 5 levels in [{lo:.2e}, {hi:.2e}], "
            f"got {rows.size}"
        )
    tr = t[rows]
    q = -2.0 * s * (field.W[rows + 1] - field.W[0][None, :]) / (tr ** (2.0 * s))[:, None]
    basis = np.column_stack(
        [np.ones_like(tr), tr ** (2.0 - 2.0 * s), tr**2, tr ** (4.0 - 2.0 * s)]
    )
    coef, *_ = np.linalg.lstsq(basis, q, rcond=None)
    limit = coef[0]
    if not np.all(np.isfinite(limit)):
        raise FitError("normal-derivative extrapolation produced non-finite values")
    spread = float(np.max(np.abs(basis @ coef - q)))
    logger.debug(f"Normal derivative fitted on {rows.size} levels, max deviation {spread:.2e}")

    parity = field.trace.parity
    if parity != "none":
        limit = 0.5 * (limit + (1.0 if parity == "even" else -1.0) * limit[::-1])
    return GridFunction(grid=field.xgrid, values=limit, parity=parity)


def normal_derivative_mismatch(field: ExtensionField, window: float) -> float:
    """sup |normal limit - d_s (-Delta)^s v| / sup |d_s (-Delta)^s v| over |x| <= window."""
    v = field.trace
    if field.xgrid != v.grid:
        raise DomainError("the mismatch is measured on the trace grid")
    op = assemble(v.grid, field.s)
    target = extension_constant(field.s) * apply(op, v).values
    limit = normal_derivative(field, field.s).values
    mask = np.abs(v.grid.nodes) <= window
    return float(np.max(np.abs(limit[mask] - target[mask])) / np.max(np.abs(target[mask])))


def frac_boundary_derivative(
    w: GridFunction, s: float, window: Optional[float] = None
) -> BoundaryDerivative:
    """psi_w(+-1) = lim w(x) / (1 - |x|)^s from a power-law fit in a boundary window."""
    if w.grid.domain_kind != "ball":
        raise DomainError("fractional boundary derivatives are defined on the ball grid")
    window = settings.boundary_window if window is None else window
    x = w.grid.nodes
    skip = settings.boundary_skip_cells * w.grid.h
    psi_r, a_r, res_r = boundary_power_fit(x, w.values, s, window, side=1, min_distance=skip)
    psi_l, _, res_l = boundary_power_fit(x, w.values, s, window, side=-1, min_distance=skip)
    residual = max(res_r, res_l)
    if residual > settings.fit_residual_max:
        raise FitError(
            f"boundary fit residual {residual:.2e} above {settings.fit_residual_max}"
        )
    return BoundaryDerivative(
        psi_right=psi_r, psi_left=psi_l, fit_residual=residual, correction_right=a_r
    )


def extrapolated_boundary_derivative(
    coarse: GridFunction, fine: GridFunction, s: float, order: Optional[float] = None
) -> BoundaryDerivative:
    """Richardson-combined psi from grids of spacing 2h and h.

    The window fit converges like h^s, so the default order is s.
    """
    if fine.grid.domain_kind != "ball" or coarse.grid.domain_kind != "ball":
        raise DomainError("fractional boundary derivatives are defined on the ball grid")
    if fine.grid.n != 2 * coarse.grid.n - 1:
        raise DomainError(
            f"extrapolation needs n_fine = 2 n_coarse - 1, got {coarse.grid.n} and {fine.grid.n}"
        )
    order = s if order is None else order
    low = frac_boundary_derivative(coarse, s)
    high = frac_boundary_derivative(fine, s)
    right, left = richardson(
        np.array([low.psi_right, low.psi_left]), np.array([high.psi_right, high.psi_left]), order
    )
    logger.debug(f"psi(+1): {low.psi_right:.6f} -> {high.psi_right:.6f}, extrapolated {right:.6f}")
    return BoundaryDerivative(
        psi_right=float(right),
        psi_left=float(left),
        fit_residual=max(low.fit_residual, high.fit_residual),
        correction_right=high.correction_right,
    )


def _moment_term(a: GridFunction, f: GridFunction) -> float:
    # int x a' f = -int a (x f)'; a vanishes at +-1
    xf_prime = np.gradient(a.grid.nodes * f.values, a.grid.h, edge_order=2)
    return -float(simpson_weights(a.grid.n, a.grid.h) @ (a.values * xf_prime))


def pohozaev_pairing(
    u: GridFunction,
    w: GridFunction,
    fu: GridFunction,
    fw: GridFunction,
    s: float,
    psi_u: Optional[BoundaryDerivative] = None,
    psi_w: Optional[BoundaryDerivative] = None,
) -> PohozaevReport:
    """Residual of the fractional integration by parts formula on the ball.

    int x u' fw = -int x w' fu - Gamma(1+s)^2 sum_{x=+-1} psi_u psi_w - (1-2s)[u, w],
    with fu, fw the given values of (-Delta)^s u and (-Delta)^s w. Boundary derivatives
    default to the window fit on the pairing grid; pass extrapolated ones to override.
    """
    if any(f.grid != u.grid for f in (w, fu, fw)):
        raise DomainError("pairing inputs must share one ball grid")
    lhs = _moment_term(u, fw)
    mixed = -_moment_term(w, fu)
    du = psi_u if psi_u is not None else frac_boundary_derivative(u, s)
    dw = psi_w if psi_w is not None else frac_boundary_derivative(w, s)
    boundary = -special.gamma(1.0 + s) ** 2 * (
        du.psi_right * dw.psi_right + du.psi_left * dw.psi_left
    )
    gagliardo = -(1.0 - 2.0 * s) * bilinear(assemble(u.grid, s), u, w)
    residual = abs(lhs - mixed - boundary - gagliardo)
    report = PohozaevReport(
        lhs=lhs,
        mixed=mixed,
        boundary=boundary,
        gagliardo=gagliardo,
        residual=residual,
        scale=abs(lhs) + abs(mixed) + abs(boundary) + abs(gagliardo),
    )
    logger.info(
        f"Integration-by-parts pairing s={s}: terms "
        + ", ".join(f"{term:.6e}" for term in report.terms)
        + f"; residual {residual:.2e}"
    )
    return report


def nodal_decompose(
    field: ExtensionField,
    threshold: Optional[float] = None,
    potential: Optional[GridFunction] = None,
) -> NodalDecomposition:
    """Nodal domains of W on the closed half-plane grid with per-domain energies.

    ``threshold`` is relative to max |W|. ``potential`` is V with
    (-Delta)^s w = V w on the trace; each domain then carries int V w^2 over
    its trace set.
    """
    W = field.W
    rel = settings.nodal_threshold if threshold is None else threshold
    tau = rel * float(np.max(np.abs(W)))
    labels, signs = label_sign_components(W, tau)
    count = signs.size - 1

    s = field.s
    t = field.t
    hx = field.xgrid.h
    dt = np.diff(t)
    # exact int t^{1-2s} dt per row of cells
    weight_t = (t[1:] ** (2.0 - 2.0 * s) - t[:-1] ** (2.0 - 2.0 * s)) / (2.0 - 2.0 * s)
    wx = 0.5 * (np.diff(W[:-1], axis=1) + np.diff(W[1:], axis=1)) / hx
    wt = 0.5 * (np.diff(W[:, :-1], axis=0) + np.diff(W[:, 1:], axis=0)) / dt[:, None]
    density = (wx**2 + wt**2) * weight_t[:, None] * hx
    owner = cell_owner(labels, W)
    energies = np.bincount(owner.ravel(), weights=density.ravel(), minlength=count + 1)

    x = field.x
    trace = W[0]
    if potential is not None:
        V = np.interp(x, potential.grid.nodes, potential.values, left=0.0, right=0.0)
    else:
        V = np.zeros_like(x)
    domains = []
    for label in range(1, count + 1):
        on_trace = labels[0] == label
        domains.append(
            NodalDomain(
                label=label,
                sign=int(signs[label]),
                cells=int(np.count_nonzero(labels == label)),
                energy=float(energies[label]),
                trace_measure=float(np.count_nonzero(on_trace) * hx),
                trace_integral=float(hx * np.sum(V[on_trace] * trace[on_trace] ** 2)),
            )
        )
    logger.info(f"Nodal decomposition: {count} domain(s) above |W| > {tau:.2e}")
    return NodalDecomposition(labels=labels, domain_count=count, domains=domains, threshold=tau)


def corner_sign_change(field: ExtensionField, x0: float = 1.0, radius: float = 0.1) -> bool:
    """True when W takes both signs in the half-disc of given radius around (x0, 0)."""
    X, T = np.meshgrid(field.x, field.t)
    near = (X - x0) ** 2 + T**2 <= radius**2
    tau = settings.nodal_threshold * float(np.max(np.abs(field.W)))
    values = field.W[near]
    return bool(np.any(values > tau) and np.any(values < -tau))
