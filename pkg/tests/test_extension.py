import numpy as np
import pytest

from fraclab.core.exceptions import DomainError, FitError
from fraclab.schemas.grid_schemas import Grid1D, GridFunction
from fraclab.schemas.report_schemas import ExtensionField
from fraclab.services.extension_service import (
    closed_form_lorentzian,
    corner_sign_change,
    extend,
    extrapolated_boundary_derivative,
    frac_boundary_derivative,
    geometric_levels,
    nodal_decompose,
    normal_derivative,
    normal_derivative_mismatch,
    pde_residual,
    pohozaev_pairing,
    poisson_kernel,
    window_grid,
)
from fraclab.services.groundstate_service import solve_ball
from fraclab.services.operator_service import assemble
from fraclab.services.spectrum_service import weighted_eigs
from fraclab.services.utils.kernel_utils import extension_constant, poisson_constant
from fraclab.services.utils.nodal_utils import cell_owner, label_sign_components
from tests.helpers import odd_bump, torsion


def lorentzian(grid: Grid1D) -> GridFunction:
    return GridFunction.from_callable(grid, lambda x: 1.0 / (1.0 + x * x), parity="even")


@pytest.fixture(scope="module")
def lorentzian_field():
    return extend(lorentzian(Grid1D.line(2001, 20.0)), 0.5)


def test_constants_at_one_half():
    assert poisson_constant(0.5) == pytest.approx(1.0 / np.pi, rel=1e-14)
    assert extension_constant(0.5) == pytest.approx(1.0, rel=1e-14)


def test_closed_form_at_unit_height():
    assert closed_form_lorentzian(np.array(0.0), np.array(1.0)) == pytest.approx(0.5)
    assert poisson_kernel(np.array([0.0]), 1.0, 0.5)[0] == pytest.approx(1.0 / np.pi)


def test_geometric_levels():
    levels = geometric_levels(t_min=1e-3, ratio=0.5, levels=4)
    assert np.allclose(levels, [1e-3, 2e-3, 4e-3, 8e-3])
    with pytest.raises(DomainError):
        geometric_levels(t_min=1e-3, ratio=1.5, levels=4)


def test_window_grid_shares_spacing():
    trace = Grid1D.ball(257)
    window = window_grid(trace, 4.0)
    assert window.domain_kind == "line"
    assert window.h == pytest.approx(trace.h, rel=1e-14)
    assert window.half_width == pytest.approx(4.0)


def test_lorentzian_field_matches_closed_form(lorentzian_field):
    X, T = np.meshgrid(lorentzian_field.x, lorentzian_field.t)
    box = (np.abs(X) <= 3.0) & (T >= 0.1) & (T <= 3.0)
    error = np.max(np.abs(lorentzian_field.W[box] - closed_form_lorentzian(X[box], T[box])))
    assert error < 2e-3
    assert np.array_equal(lorentzian_field.W[0], lorentzian_field.trace.values)


def test_zero_trace_gives_zero_field():
    grid = Grid1D.ball(129)
    field = extend(GridFunction.zeros(grid), 0.3)
    assert np.all(field.W == 0.0)


def test_odd_trace_gives_odd_field():
    grid = Grid1D.ball(129)
    field = extend(odd_bump(grid), 0.7)
    assert np.array_equal(field.W, -field.W[:, ::-1])


def test_window_extension_agrees_with_direct_quadrature():
    trace = torsion(Grid1D.ball(129))
    tgrid = geometric_levels(1e-2, 0.5, 6)
    lattice = extend(trace, 0.4, window_grid(trace.grid, 2.0), tgrid)
    shifted = Grid1D.line(101, 2.0)
    direct = extend(trace, 0.4, shifted, tgrid)
    common = np.interp(shifted.nodes, lattice.x, lattice.W[-1])
    assert np.max(np.abs(common - direct.W[-1])) < 1e-3


def test_pde_residual_vanishes_for_power_of_t():
    grid = Grid1D.line(41, 2.0)
    s = 0.3
    tgrid = geometric_levels(1e-2, 0.8, 20)
    t = np.concatenate([[0.0], tgrid])
    field = ExtensionField(
        W=np.repeat((t ** (2.0 * s))[:, None], grid.n, axis=1),
        xgrid=grid,
        tgrid=tgrid,
        s=s,
        trace=GridFunction.zeros(grid, parity="even"),
    )
    assert pde_residual(field) < 1e-8


def test_pde_residual_detects_noise():
    grid = Grid1D.line(41, 2.0)
    tgrid = geometric_levels(1e-2, 0.8, 20)
    rng = np.random.default_rng(3)
    field = ExtensionField(
        W=rng.normal(size=(tgrid.size + 1, grid.n)),
        xgrid=grid,
        tgrid=tgrid,
        s=0.5,
        trace=GridFunction.zeros(grid, parity="none"),
    )
    assert pde_residual(field) > 1.0


def test_pde_residual_of_closed_form():
    grid = Grid1D.line(1001, 5.0)
    tgrid = 0.05 * np.arange(1, 111)
    t = np.concatenate([[0.0], tgrid])
    field = ExtensionField(
        W=closed_form_lorentzian(grid.nodes[None, :], t[:, None]),
        xgrid=grid,
        tgrid=tgrid,
        s=0.5,
        trace=lorentzian(grid),
    )
    assert pde_residual(field, x_max=4.9, t_range=(0.5, 5.0)) < 1e-2


def test_pde_residual_needs_three_levels():
    grid = Grid1D.line(41, 2.0)
    field = extend(lorentzian(grid), 0.5, tgrid=np.array([0.1, 0.2]))
    with pytest.raises(DomainError):
        pde_residual(field)


@pytest.mark.slow
def test_normal_derivative_of_lorentzian(lorentzian_field):
    mismatch = normal_derivative_mismatch(lorentzian_field, 3.0)
    assert mismatch < 5e-2
    limit = normal_derivative(lorentzian_field, 0.5)
    centre = lorentzian_field.xgrid.center
    # (-Delta)^{1/2} (1 + x^2)^{-1} = (1 - x^2) / (1 + x^2)^2 equals 1 at the origin
    assert limit.values[centre] == pytest.approx(1.0, abs=2e-2)


def test_normal_derivative_needs_levels():
    grid = Grid1D.ball(129)
    field = extend(torsion(grid), 0.5, tgrid=geometric_levels(1.0, 0.5, 3))
    with pytest.raises(FitError):
        normal_derivative(field, 0.5)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_boundary_derivative_of_torsion(s):
    grid = Grid1D.ball(513)
    result = frac_boundary_derivative(torsion(grid, s), s)
    assert result.psi_right == pytest.approx(2.0**s, rel=1e-2)
    assert result.psi_left == pytest.approx(result.psi_right, rel=1e-12)


def test_boundary_derivative_needs_ball():
    with pytest.raises(DomainError):
        frac_boundary_derivative(lorentzian(Grid1D.line(101, 10.0)), 0.5)


def test_integration_by_parts_for_torsion():
    grid = Grid1D.ball(1025)
    u = torsion(grid)
    ones = GridFunction(grid=grid, values=np.ones(grid.n), parity="even")
    report = pohozaev_pairing(u, u, ones, ones, 0.5)
    assert report.lhs == pytest.approx(-np.pi / 2.0, rel=1e-3)
    assert report.mixed == pytest.approx(np.pi / 2.0, rel=1e-3)
    assert report.boundary == pytest.approx(-np.pi, rel=1e-2)
    assert report.gagliardo == 0.0
    assert report.relative_residual < 1e-2


def test_extrapolated_boundary_derivative_of_torsion():
    coarse, fine = Grid1D.ball(513), Grid1D.ball(1025)
    result = extrapolated_boundary_derivative(torsion(coarse, 0.25), torsion(fine, 0.25), 0.25)
    assert result.psi_right == pytest.approx(2.0**0.25, rel=1e-2)
    assert result.psi_left == pytest.approx(result.psi_right, rel=1e-12)


def test_extrapolation_needs_nested_grids():
    with pytest.raises(DomainError):
        extrapolated_boundary_derivative(
            torsion(Grid1D.ball(513)), torsion(Grid1D.ball(1001)), 0.5
        )


@pytest.mark.slow
def test_integration_by_parts_for_ground_state():
    coarse = solve_ball(0.5, 0.0, 2.0, Grid1D.ball(1025))
    state = solve_ball(0.5, 0.0, 2.0, Grid1D.ball(2049))
    u = state.u
    fu = u.with_values(u.values**state.p)
    psi = extrapolated_boundary_derivative(coarse.u, u, 0.5)
    report = pohozaev_pairing(u, u, fu, fu, 0.5, psi_u=psi, psi_w=psi)
    assert report.relative_residual < 1e-2


def test_sign_components_and_owner():
    field = np.array([[1.0, 1.0, -1.0], [1.0, 0.0, -1.0]])
    labels, signs = label_sign_components(field, 0.5)
    assert labels.tolist() == [[1, 1, 2], [1, 0, 2]]
    assert signs.tolist() == [0, 1, -1]
    owner = cell_owner(labels, field)
    assert owner.shape == (1, 2)
    assert set(owner.ravel().tolist()) <= {1, 2}


def test_positive_trace_gives_one_domain(ball_state):
    trace = ball_state.u
    field = extend(trace, 0.5, window_grid(trace.grid, 2.0))
    decomposition = nodal_decompose(field)
    assert decomposition.domain_count == 1
    assert decomposition.domains[0].sign == 1
    assert decomposition.domains[0].energy > 0.0


def test_odd_trace_gives_two_domains():
    grid = Grid1D.ball(257)
    field = extend(odd_bump(grid), 0.5, window_grid(grid, 2.0))
    decomposition = nodal_decompose(field)
    assert decomposition.domain_count == 2
    assert sorted(domain.sign for domain in decomposition.domains) == [-1, 1]
    energies = [domain.energy for domain in decomposition.domains]
    assert energies[0] == pytest.approx(energies[1], rel=1e-10)


def test_corner_sign_change_absent_for_positive_trace(ball_state):
    field = extend(ball_state.u, 0.5, window_grid(ball_state.grid, 2.0))
    assert not corner_sign_change(field)


@pytest.mark.slow
def test_second_eigenfunction_has_two_nodal_domains():
    s, lam, p = 0.5, 0.5, 2.0
    state = solve_ball(s, lam, p, Grid1D.ball(1025))
    second = weighted_eigs(assemble(state.grid, s), state, "full", 2).eigenpairs[1]
    potential = state.u.with_values(
        second.value * np.maximum(state.u.values, 0.0) ** (p - 1.0) - lam, parity="even"
    )
    levels = geometric_levels(t_min=1e-4, ratio=0.85, levels=85)
    field = extend(second.w, s, window_grid(state.grid), levels)
    decomposition = nodal_decompose(field, potential=potential)
    assert decomposition.domain_count == 2
    for domain in decomposition.domains:
        target = extension_constant(s) * domain.trace_integral
        assert abs(domain.energy - target) <= 5e-2 * max(abs(domain.energy), abs(target))
