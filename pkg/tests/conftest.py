import pytest

from fraclab.core.config import settings
from fraclab.schemas.grid_schemas import Grid1D
from fraclab.services.groundstate_service import solve_ball, solve_line


@pytest.fixture(autouse=True)
def _isolated_dirs(tmp_path, monkeypatch):
    monkeypatch.setattr(settings, "logs_dir", str(tmp_path / "logs"))
    monkeypatch.setattr(settings, "output_dir", str(tmp_path / "results"))


@pytest.fixture(scope="session")
def ball_grid():
    return Grid1D.ball(513)


@pytest.fixture(scope="session")
def ball_state(ball_grid):
    """s = 1/2, lambda = 0, p = 2 on the ball."""
    return solve_ball(0.5, 0.0, 2.0, ball_grid)


@pytest.fixture(scope="session")
def line_state():
    """Benjamin-Ono soliton problem: s = 1/2, lambda = 1, p = 2."""
    return solve_line(0.5, 2.0, Grid1D.line(1001, 50.0), lam=1.0)


@pytest.fixture(scope="session")
def soliton_state():
    """Same problem on the wider L = 100 window."""
    return solve_line(0.5, 2.0, Grid1D.line(4001, 100.0), lam=1.0)
