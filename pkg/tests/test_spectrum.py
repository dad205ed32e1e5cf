import numpy as np
import pytest

from fraclab.core.exceptions import DomainError, InsufficientSpectrumError
from fraclab.schemas.grid_schemas import Grid1D
from fraclab.services.groundstate_service import solve_ball
from fraclab.services.operator_service import assemble
from fraclab.services.spectrum_service import (
    boundary_derivative_relation,
    constrained_minimum,
    discrete_translation_mode,
    hopf_check,
    morse_index,
    nonradial_gap,
    rayleigh_quotient,
    weighted_eigs,
    weighted_inner,
)
from fraclab.services.utils.quadrature_utils import alignment


@pytest.fixture(scope="module")
def full_spectrum(ball_state):
    return weighted_eigs(assemble(ball_state.grid, 0.5), ball_state, "full", 3)


def test_first_eigenvalue_is_one(ball_state, full_spectrum):
    first = full_spectrum.eigenpairs[0]
    assert first.value == pytest.approx(1.0, abs=1e-6)
    weight = ball_state.u.values ** (ball_state.p - 1.0)
    assert alignment(first.w.values, ball_state.u.values, weight) == pytest.approx(1.0, abs=1e-8)


def test_values_sorted_and_normalized(ball_state, full_spectrum):
    values = full_spectrum.values
    assert np.all(np.diff(values) > 0.0)
    for pair in full_spectrum.eigenpairs:
        assert weighted_inner(ball_state, pair.w.values, pair.w.values) == pytest.approx(1.0)


def test_second_eigenvalue_above_exponent(ball_state, full_spectrum):
    assert full_spectrum.values[1] > ball_state.p


def test_odd_sector_gap_positive(ball_state):
    odd = weighted_eigs(assemble(ball_state.grid, 0.5), ball_state, "odd", 2)
    assert nonradial_gap(odd, ball_state.p) > 0.0
    for pair in odd.eigenpairs:
        assert np.array_equal(pair.w.values, -pair.w.values[::-1])


def test_even_sector_starts_at_one(ball_state):
    even = weighted_eigs(assemble(ball_state.grid, 0.5), ball_state, "even", 2)
    assert even.values[0] == pytest.approx(1.0, abs=1e-6)
    assert even.values[1] > ball_state.p


def test_rayleigh_quotient_of_eigenvector(ball_state, full_spectrum):
    op = assemble(ball_state.grid, 0.5)
    pair = full_spectrum.eigenpairs[1]
    assert rayleigh_quotient(op, ball_state, pair.w) == pytest.approx(pair.value, rel=1e-8)


def test_morse_index_is_one(ball_state, full_spectrum):
    assert morse_index(full_spectrum, ball_state.p) == 1


def test_morse_index_needs_enough_values(ball_state):
    single = weighted_eigs(assemble(ball_state.grid, 0.5), ball_state, "full", 1)
    with pytest.raises(InsufficientSpectrumError):
        morse_index(single, ball_state.p)


def test_nonradial_gap_needs_odd_sector(full_spectrum, ball_state):
    with pytest.raises(DomainError):
        nonradial_gap(full_spectrum, ball_state.p)


def test_k_bounds(ball_state):
    op = assemble(ball_state.grid, 0.5)
    with pytest.raises(DomainError):
        weighted_eigs(op, ball_state, "full", 0)
    with pytest.raises(DomainError):
        weighted_eigs(op, ball_state, "odd", ball_state.grid.n)


def test_hopf_check_passes_for_ground_state(ball_state):
    report = hopf_check(ball_state)
    assert report.passed
    assert report.min_positive_v > 0.0
    assert report.min_ratio > 0.0


def test_hopf_check_rejects_unconverged_state(ball_state):
    perturbed = ball_state.model_copy(
        update={"u": ball_state.u.with_values(1.1 * ball_state.u.values)}
    )
    report = hopf_check(perturbed)
    assert not report.passed
    assert report.reason


def test_translation_mode_is_odd(line_state):
    mode = discrete_translation_mode(line_state)
    assert mode.parity == "odd"
    grid = line_state.grid
    assert np.all(mode.values[grid.center + 1 : grid.n - 4] < 0.0)


@pytest.mark.slow
def test_line_odd_sector_holds_translation_mode(soliton_state):
    op = assemble(soliton_state.grid, 0.5)
    odd = weighted_eigs(op, soliton_state, "odd", 1).eigenpairs[0]
    assert odd.value == pytest.approx(soliton_state.p, abs=5e-3)
    weight = soliton_state.u.values ** (soliton_state.p - 1.0)
    mode = discrete_translation_mode(soliton_state).values
    assert alignment(odd.w.values, mode, weight) >= 0.999


def test_boundary_relation_needs_even_eigenfunction(ball_state):
    op = assemble(ball_state.grid, 0.5)
    odd = weighted_eigs(op, ball_state, "odd", 1).eigenpairs[0]
    with pytest.raises(DomainError):
        boundary_derivative_relation(ball_state, odd.w, eigenvalue=odd.value)


def test_boundary_relation_excludes_the_ground_state(ball_state):
    with pytest.raises(DomainError):
        boundary_derivative_relation(ball_state, ball_state.u, eigenvalue=1.0)


@pytest.mark.slow
def test_boundary_relation_for_second_even_eigenpair():
    state = solve_ball(0.5, 0.5, 2.0, Grid1D.ball(1025))
    pair = weighted_eigs(assemble(state.grid, 0.5), state, "even", 2).eigenpairs[1]
    psi_w, predicted = boundary_derivative_relation(state, pair.w, eigenvalue=pair.value)
    assert abs(psi_w - predicted) <= 0.1 * abs(psi_w)


def test_constrained_gap_positive_on_line(line_state):
    result = constrained_minimum(assemble(line_state.grid, 0.5), line_state)
    assert result.gap > 0.0
    assert result.constraint_residual < 1e-8


def test_constrained_minimum_needs_line(ball_state):
    with pytest.raises(DomainError):
        constrained_minimum(assemble(ball_state.grid, 0.5), ball_state)
