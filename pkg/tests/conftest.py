from __future__ import annotations

import pytest

from junction_control.pde import extract_policy, solve_backward
from junction_control.scenario import load_scenario

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion; shown in the terminal summary."""

    def log(number: int, title: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def section5():
    return load_scenario("section5")


@pytest.fixture(scope="session")
def section5_solution(section5):
    vg = solve_backward(section5.problem, section5.grid)
    return vg, extract_policy(section5.problem, vg)


@pytest.fixture(scope="session")
def section5_coarse(section5):
    """A cheap solve of the same instance for tests that only need a policy."""
    from junction_control.pde import SpaceTimeGrid

    vg = solve_backward(section5.problem, SpaceTimeGrid(200, 80))
    return vg, extract_policy(section5.problem, vg)
