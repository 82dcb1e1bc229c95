import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from diqkd.behavior import MeasurementAngles, singlet_behavior  # noqa: E402
from diqkd.guess import solve_bit_distance, solve_guess  # noqa: E402

FIG4_GRID = (0.0, 0.003, 0.03, 0.06, 0.078, 0.15, 0.3)

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def guess_grid():
    return {rho: solve_guess(singlet_behavior(rho, MeasurementAngles.chsh())) for rho in FIG4_GRID}


@pytest.fixture(scope="session")
def distance_grid():
    return {rho: solve_bit_distance(singlet_behavior(rho, MeasurementAngles.chsh())) for rho in FIG4_GRID}


@pytest.fixture
def criterion():
    """Record one acceptance criterion's outcome for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (bool(ok), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
