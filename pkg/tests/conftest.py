import time

import numpy as np
import pytest

from levyfield.measure import JumpMeasure, LevyTriplet
from levyfield.noise import Box, CellGrid, apply_functional, sample_noise

_REPORT = []

# Z(f) for f = indicator of [0, 1] on an 8-cell grid, one entry per noise kind.
FUNCTIONAL_KINDS = {
    "gaussian": LevyTriplet(0.0, 1.0),
    "poisson": LevyTriplet.from_jumps(JumpMeasure.dirac(1.0)),
    "bigamma": LevyTriplet(0.0, 0.0, JumpMeasure.bigamma(1.0, 2.0)),
}
FUNCTIONAL_SAMPLES = 100_000
FUNCTIONAL_SECONDS = {}


def unit_grid(cells=8):
    return CellGrid(Box((0.0,), (1.0,)), (cells,))


@pytest.fixture(scope="session")
def functional_samples():
    """``{kind: (triplet, grid, f, values)}`` with 1e5 samples of ``Z(f)`` per kind."""
    grid = unit_grid()
    f = np.ones(grid.shape)
    out = {}
    for kind, trip in FUNCTIONAL_KINDS.items():
        start = time.perf_counter()
        vals = np.empty(FUNCTIONAL_SAMPLES)
        for i in range(FUNCTIONAL_SAMPLES):
            vals[i] = apply_functional(sample_noise(trip, grid, (kind, i)), f)
        FUNCTIONAL_SECONDS[kind] = time.perf_counter() - start
        out[kind] = (trip, grid, f, vals)
    return out


@pytest.fixture
def acceptance():
    """``record(criterion, passed, detail)`` adds a line to the acceptance summary."""
    def record(criterion, passed, detail=""):
        _REPORT.append((criterion, bool(passed), detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(_REPORT, key=lambda r: r[0]):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}")
