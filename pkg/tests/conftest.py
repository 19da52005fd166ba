import numpy as np
import pytest

from tfetiplast.material import MaterialParams
from tfetiplast.mesh import generate_box_mesh


@pytest.fixture
def steel():
    """Benchmark material: E = 206900, nu = 0.29, sigma_y = 450, H = 10000."""
    return MaterialParams.from_engineering(206900.0, 0.29, 450.0, 10000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def clamped_box(n=2, dims=(1.0, 1.0, 1.0), traction=(0.0, 0.0, -1.0)):
    """Cube clamped on x=0 and loaded on x=1; ``n`` cells per unit length."""
    div = tuple(max(1, int(round(n * d))) for d in dims)
    return generate_box_mesh(
        dims, div, [("x0", (True, True, True))], [("x1", traction)]
    ).validate()


def cantilever(n):
    """Box plasticity benchmark: 2x1x1 bar, clamped at x=0, shear traction at x=2."""
    return generate_box_mesh(
        (2.0, 1.0, 1.0), (2 * n, n, n), [("x0", (True, True, True))], [("x1", (0.0, 0.0, -1.0))]
    ).validate()


# -- acceptance summary -----------------------------------------------------------------

ACCEPTANCE_RESULTS = {}


def record_acceptance(number, title, passed, detail):
    """Register one criterion outcome; printed immediately and in the terminal summary."""
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
