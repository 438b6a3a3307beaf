import numpy as np
import pytest

from shellgibbs.gibbs import aux_stream
from shellgibbs.spectral import GridParams, ShellState


@pytest.fixture
def grid():
    return GridParams(1, 2, 32)


def random_states(grid, count, seed=0, scale=None):
    """Deterministic random states; ``scale`` multiplies mode n (default: unit normals)."""
    z = aux_stream(seed, np.arange(count)).normals(2 * grid.M, step=0).reshape(count, grid.M, 2)
    if scale is not None:
        z = z * np.asarray(scale)[:, None]
    return z


def random_state(grid, seed=0, scale=None):
    return ShellState(grid, random_states(grid, 1, seed, scale)[0])


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
