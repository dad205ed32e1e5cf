import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import settings as hypothesis_settings
from hypothesis import strategies as st

from fraclab.core.exceptions import PreconditionError, SingularInputError
from fraclab.schemas.grid_schemas import Grid1D, GridFunction
from fraclab.services.operator_service import assemble, bilinear
from fraclab.services.picone_service import (
    build_cutoff,
    cutoff_energy_sequence,
    discrete_potential,
    kernel_gap,
    linearized_pair,
    picone_kernel,
    picone_residual,
    pointwise_identity_gap,
)
from fraclab.services.spectrum_service import discrete_translation_mode
from tests.helpers import odd_bump

positive = st.floats(min_value=1e-2, max_value=10.0, allow_nan=False, allow_infinity=False)
nonzero = st.floats(min_value=0.1, max_value=2.0).flatmap(
    lambda m: st.sampled_from([m, -m])
)
amplitude = st.floats(min_value=-2.0, max_value=2.0, allow_nan=False)


@pytest.fixture(scope="module")
def picone_inputs(ball_state):
    grid = ball_state.grid
    op = assemble(grid, 0.5)
    v = GridFunction(grid=grid, values=-discrete_translation_mode(ball_state).values, parity="odd")
    return grid, op, v, discrete_potential(op, v)


def test_kernel_gap_value():
    assert kernel_gap(1.0, 2.0, 0.5) == pytest.approx(8.0 / 9.0, rel=1e-14)


@given(x=positive, y=positive, s=st.sampled_from([0.1, 0.25, 0.5, 0.75, 0.9]))
@hypothesis_settings(max_examples=200, deadline=None)
def test_kernel_gap_positive(x, y, s):
    assume(abs(x - y) > 1e-3)
    assert kernel_gap(x, y, s) > 0.0


def test_kernel_gap_singular_inputs():
    with pytest.raises(SingularInputError):
        kernel_gap(1.0, 1.0, 0.5)
    with pytest.raises(SingularInputError):
        kernel_gap(-1.0, 2.0, 0.5)


@given(wx=amplitude, wy=amplitude, vx=nonzero, vy=nonzero)
@hypothesis_settings(max_examples=300, deadline=None)
def test_pointwise_identity(wx, wy, vx, vy):
    scale = (1.0 + wx * wx + wy * wy) * (abs(vx / vy) + abs(vy / vx))
    assert abs(pointwise_identity_gap(wx, wy, vx, vy)) <= 1e-12 * scale


def test_cutoff_shape():
    grid = Grid1D.ball(257)
    zeta = build_cutoff(4.0, grid)
    assert zeta.parity == "even"
    assert zeta.values[grid.center] == 1.0
    assert zeta.values[0] == 0.0 and zeta.values[-1] == 0.0
    assert np.all((zeta.values >= 0.0) & (zeta.values <= 1.0))
    # zero on |x| >= 1 - 1/k, one on |x| <= 1 - 2/k
    assert np.all(zeta.values[np.abs(grid.nodes) >= 0.75] == 0.0)
    assert np.all(zeta.values[np.abs(grid.nodes) <= 0.5] == 1.0)


def test_cutoff_level_below_one_rejected():
    with pytest.raises(PreconditionError):
        build_cutoff(0.5, Grid1D.ball(65))


def test_identity_holds_to_round_off(picone_inputs):
    grid, op, v, potential = picone_inputs
    w = build_cutoff(8.0, grid) * odd_bump(grid)
    report = picone_residual(w, v, potential, 0.5, grid, cutoff_level=8.0)
    assert report.relative_residual < 1e-8
    assert report.h_min >= 0.0
    assert report.rhs > 0.0


def test_proportional_pair_has_zero_kernel(picone_inputs):
    grid, op, v, potential = picone_inputs
    w = v.with_values(0.5 * v.values)
    report = picone_residual(w, v, potential, 0.5, grid)
    assert report.rhs == 0.0
    assert abs(report.lhs) <= 1e-9 * bilinear(op, v, v)


def test_kernel_matrix_nonnegative(picone_inputs):
    grid, _, v, _ = picone_inputs
    w = build_cutoff(8.0, grid) * odd_bump(grid)
    H = picone_kernel(w, v, 0.5)
    assert H.shape == (grid.center - 1, grid.center - 1)
    assert np.min(H) >= 0.0
    assert np.allclose(H, H.T)


def test_even_test_function_rejected(picone_inputs):
    grid, _, v, potential = picone_inputs
    w = build_cutoff(8.0, grid)
    with pytest.raises(PreconditionError):
        picone_residual(w, v, potential, 0.5, grid)


def test_sign_changing_v_rejected(picone_inputs):
    grid, _, v, potential = picone_inputs
    w = build_cutoff(8.0, grid) * odd_bump(grid)
    flipped = v.with_values(-v.values)
    with pytest.raises(PreconditionError):
        picone_residual(w, flipped, potential, 0.5, grid)


def test_w_must_vanish_at_the_boundary(picone_inputs):
    grid, _, v, potential = picone_inputs
    w = GridFunction.from_callable(grid, lambda x: x, parity="odd")
    with pytest.raises(PreconditionError):
        picone_residual(w, v, potential, 0.5, grid)


def test_cutoff_energies_positive():
    grid = Grid1D.ball(129)
    op = assemble(grid, 0.5)
    energies = cutoff_energy_sequence(op, odd_bump(grid), [2.0, 4.0, 8.0])
    assert len(energies) == 3
    assert all(e > 0.0 for e in energies)


def test_cutoff_energies_approach_the_full_energy():
    grid = Grid1D.ball(1025)
    op = assemble(grid, 0.5)
    w = odd_bump(grid)
    target = bilinear(op, w, w)
    gaps = [abs(e - target) for e in cutoff_energy_sequence(op, w, [4.0, 8.0, 16.0, 32.0])]
    assert all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.25 * gaps[0]


def line_test_function(v, grid, k, coefficients):
    """zeta_k * phi * v with phi an even cosine polynomial."""
    modes = np.arange(coefficients.size)
    phi = np.cos(np.pi * np.outer(grid.nodes, modes) / grid.half_width) @ coefficients
    return build_cutoff(k, grid) * v.with_values(phi * v.values)


@pytest.mark.parametrize("k, seed", [(4.0, 0), (8.0, 1), (16.0, 2)])
def test_identity_with_the_line_potential(line_state, k, seed):
    grid = line_state.grid
    v, potential = linearized_pair(line_state)
    coefficients = np.random.default_rng(seed).normal(size=5) / np.arange(1, 6)
    w = line_test_function(v, grid, k, coefficients)
    report = picone_residual(w, v, potential, 0.5, grid, cutoff_level=k)
    assert report.relative_residual <= 1e-3
    assert report.h_min >= 0.0
    assert report.rhs > 0.0


def test_line_potential_needs_a_line_state(ball_state):
    with pytest.raises(PreconditionError):
        linearized_pair(ball_state)
