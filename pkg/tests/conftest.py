import numpy as np
import pytest

from scalarlab.grid import GridField, grid_coordinates


def scalar(fn, n, d=2):
    """Grid samples of fn(*coords) as a scalar GridField."""
    xs = grid_coordinates(n, d)
    return GridField.from_real((fn(*xs) * np.ones((n,) * d))[None])


def vector(fns, n, d=2):
    xs = grid_coordinates(n, d)
    return GridField.from_real(np.stack([fn(*xs) * np.ones((n,) * d) for fn in fns]))


@pytest.fixture
def tau():
    return 2 * np.pi


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def record(number: int, title: str, ok: bool, detail: str) -> bool:
    ACCEPTANCE[number] = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"
    print(ACCEPTANCE[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
