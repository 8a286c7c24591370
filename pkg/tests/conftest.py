import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal

from culling.model import WellSpec


def finite_difference_levels(well, count, h=2e-3):
    """Lowest box energies from a three-point Laplacian on a grid whose nodes
    sit half a step away from both well edges and both walls."""
    n_in = int(round(well.L / h))
    h = well.L / n_in
    n = int(round(well.D / h)) - 1
    x = -well.half_box + h * (np.arange(n) + 1) - h / 2
    # shift so the edges at +-L/2 fall midway between nodes
    x = x + (h / 2 if n_in % 2 else 0.0)
    x = x[np.abs(x) < well.half_box]
    diag = 1.0 / h**2 + well.potential(x)
    off = -0.5 / h**2 * np.ones(len(x) - 1)
    return eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))[0], h


@pytest.fixture
def deep_well():
    return WellSpec(V0=30.0)


_ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def _report(key, ok, detail):
        line = f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[key] = line
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
            terminalreporter.write_line(_ACCEPTANCE[key])
