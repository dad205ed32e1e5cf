import mpmath
import numpy as np
import pytest

from fraclab.core.exceptions import DomainError, GridMismatchError
from fraclab.schemas.grid_schemas import Grid1D, GridFunction
from fraclab.services.operator_service import (
    apply,
    assemble,
    bilinear,
    derivative,
    dirichlet_eigenvalues,
    first_dirichlet_eigenpair,
    integrate,
    kernel_weight,
)
from fraclab.services.utils.kernel_utils import (
    check_order,
    constant_cs,
    diagonal_coefficient,
    kernel_coefficients,
)
from fraclab.services.utils.quadrature_utils import restrict_to_coarse, richardson
from tests.helpers import torsion


@pytest.mark.parametrize("s", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_constant_matches_mpmath(s):
    expected = (
        mpmath.mpf(4) ** s
        * s
        * mpmath.gamma(mpmath.mpf(1) / 2 + s)
        / (mpmath.sqrt(mpmath.pi) * mpmath.gamma(1 - s))
    )
    assert constant_cs(s) == pytest.approx(float(expected), rel=1e-12)


def test_constant_at_one_half():
    assert constant_cs(0.5) == pytest.approx(1.0 / np.pi, rel=1e-14)


@pytest.mark.parametrize("s", [0.0, 1.0, 1.5, -0.2])
def test_order_out_of_range(s):
    with pytest.raises(DomainError):
        check_order(s)


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_couplings_positive_and_decreasing(s):
    a = kernel_coefficients(200, s)[1:]
    assert np.all(a > 0)
    assert np.all(np.diff(a) < 0)
    # truncated row sums stay below the diagonal
    assert 2.0 * a.sum() < diagonal_coefficient(s)


def test_matrix_symmetric_positive_definite():
    op = assemble(Grid1D.ball(129), 0.3)
    assert np.array_equal(op.A, op.A.T)
    assert np.min(np.linalg.eigvalsh(op.A)) > 0.0


def test_kernel_weight_matches_matrix():
    op = assemble(Grid1D.ball(65), 0.6)
    k = np.arange(1, 20)
    assert np.allclose(kernel_weight(op, k), -op.A[0, k], rtol=1e-14, atol=0.0)
    # pairs farther apart than the interior block are still available
    assert kernel_weight(op, np.array([200]))[0] > 0.0


def test_torsion_function_maps_to_one():
    fine = Grid1D.ball(1025)
    coarse = Grid1D.ball(513)
    values_fine = apply(assemble(fine, 0.5), torsion(fine)).values
    values_coarse = apply(assemble(coarse, 0.5), torsion(coarse)).values
    extrapolated = richardson(values_coarse, restrict_to_coarse(values_fine), order=2.0)
    inside = np.abs(coarse.nodes) <= 0.9
    assert np.max(np.abs(extrapolated[inside] - 1.0)) < 5e-2


def test_indicator_at_origin():
    grid = Grid1D.ball(1025)
    ones = GridFunction(grid=grid, values=np.ones(grid.n), parity="even")
    value = apply(assemble(grid, 0.5), ones).values[grid.center]
    assert value == pytest.approx(2.0 / np.pi, rel=1e-2)


def test_apply_keeps_parity_and_zero_boundary():
    grid = Grid1D.ball(129)
    op = assemble(grid, 0.4)
    u = GridFunction.from_callable(grid, lambda x: x * (1.0 - x * x), parity="odd")
    out = apply(op, u)
    assert out.parity == "odd"
    assert out.values[0] == 0.0 and out.values[-1] == 0.0
    assert np.array_equal(out.values, -out.values[::-1])


def test_bilinear_symmetric_and_positive():
    grid = Grid1D.ball(129)
    op = assemble(grid, 0.7)
    u = torsion(grid)
    v = GridFunction.from_callable(grid, lambda x: np.cos(np.pi * x / 2.0) * (1 + x), parity="none")
    assert bilinear(op, u, v) == pytest.approx(bilinear(op, v, u), rel=1e-12)
    assert bilinear(op, u, u) > 0.0


def test_grid_mismatch_rejected():
    op = assemble(Grid1D.ball(65), 0.5)
    with pytest.raises(GridMismatchError):
        apply(op, torsion(Grid1D.ball(129)))


def test_simpson_integration_exact_for_cubics():
    grid = Grid1D.ball(65)
    ones = GridFunction(grid=grid, values=np.ones(grid.n))
    square = GridFunction.from_callable(grid, lambda x: x**2 + x**3)
    assert integrate(ones) == pytest.approx(2.0, rel=1e-14)
    assert integrate(square) == pytest.approx(2.0 / 3.0, rel=1e-13)


def test_derivative_of_even_polynomial():
    grid = Grid1D.ball(65)
    u = GridFunction.from_callable(grid, lambda x: x**2 - x**4, parity="even")
    du = derivative(u)
    assert du.parity == "odd"
    inner = slice(2, grid.n - 2)
    x = grid.nodes[inner]
    assert np.allclose(du.values[inner], 2.0 * x - 4.0 * x**3, atol=1e-10)
    assert np.all(du.values[:2] == 0.0) and np.all(du.values[-2:] == 0.0)


def test_first_dirichlet_eigenpair():
    op = assemble(Grid1D.ball(257), 0.5)
    value, e1 = first_dirichlet_eigenpair(op)
    assert value > 0.0
    assert value == pytest.approx(dirichlet_eigenvalues(op, 1)[0], rel=1e-12)
    inside = e1.values[op.grid.interior]
    assert np.all(inside > 0.0)
    assert np.max(e1.values) == pytest.approx(1.0)
    second = dirichlet_eigenvalues(op, 2)
    assert second[1] > second[0]


@pytest.mark.slow
def test_torsion_function_maps_to_one_on_fine_grids():
    fine = Grid1D.ball(2049)
    coarse = Grid1D.ball(1025)
    values_fine = apply(assemble(fine, 0.5), torsion(fine)).values
    values_coarse = apply(assemble(coarse, 0.5), torsion(coarse)).values
    extrapolated = richardson(values_coarse, restrict_to_coarse(values_fine), order=2.0)
    inside = np.abs(coarse.nodes) <= 0.9
    assert np.max(np.abs(extrapolated[inside] - 1.0)) <= 2e-2
