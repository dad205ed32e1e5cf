import pytest

from fraclab.core.exceptions import DomainError
from fraclab.services.verify_service import GROUPS, VerificationSuite, run_verification


def entries_by_name(report):
    return {entry.name: entry for entry in report.entries}


def test_operator_group_passes():
    report = run_verification(only=["operator"], n=1025, n_fine=2049)
    assert report.groups == ["operator"]
    assert report.passed, report.failures


def test_zero_tolerance_fails_the_operator_group():
    report = run_verification(only=["operator"], tolerance_scale=0.0, n=513, n_fine=1025)
    assert not report.passed
    assert report.failures


def test_fine_grid_below_base_grid_rejected():
    with pytest.raises(DomainError):
        VerificationSuite(n=1025, n_fine=513)


def test_unknown_group_rejected():
    with pytest.raises(DomainError):
        VerificationSuite(n=65, n_fine=129).run(["nonsense"])


def test_every_group_has_a_runner():
    suite = VerificationSuite(n=65, n_fine=129)
    assert set(suite._runners) == set(GROUPS)


@pytest.mark.slow
@pytest.mark.parametrize("group", ["lambda1", "pohozaev", "nondegeneracy", "soliton"])
def test_group_passes_at_default_resolution(group):
    report = run_verification(only=[group], n=1025, n_fine=2049)
    assert report.passed, report.failures


@pytest.mark.slow
def test_pohozaev_group_reports_the_eigenpair_relation():
    report = run_verification(only=["pohozaev"], n=1025, n_fine=2049)
    entries = entries_by_name(report)
    assert set(entries) == {
        "torsion_torsion",
        "state_state",
        "state_torsion",
        "even_eigenpair_boundary",
    }
    assert entries["even_eigenpair_boundary"].metrics["eigenvalue"] > 1.0


@pytest.mark.slow
def test_picone_group_covers_the_line_potential():
    suite = VerificationSuite(n=513, n_fine=1025, picone_draws=6)
    report = suite.run(["picone"])
    entries = entries_by_name(report)
    assert entries["line_potential"].passed, entries["line_potential"].metrics
    assert entries["identity_suite"].passed, entries["identity_suite"].metrics
