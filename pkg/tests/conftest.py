import numpy as np
import pytest

from romcex.darcy import DarcyModel, Dirichlet, Grid2D, KleFieldSpec, random_plan, generate_snapshots


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return 0.5 * (a + a.T)


def darcy_model(n=8, n_modes=6, extraction=(), source=1.0):
    grid = Grid2D.unit_square(n, extraction)
    spec = KleFieldSpec(mean=0.0, variance=0.5, correlation_length=0.4, n_modes=n_modes)
    src = np.full(grid.n_cells, source)
    bc = Dirichlet.constant(grid, 0.0, edges=("west", "east"))
    return DarcyModel(grid, spec, src, bc).with_modes()


def darcy_snapshots(n=8, n_samples=16, seed=0, n_modes=6):
    model = darcy_model(n, n_modes)
    return generate_snapshots(model, random_plan(n_samples, n_modes, seed), seed=seed)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
