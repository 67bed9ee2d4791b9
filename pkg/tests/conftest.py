import pytest

from eqmodel import models
from eqmodel.structural import dae_index_lowering, structural_simplify

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="session")
def record_acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def pendulum_simplified():
    return structural_simplify(dae_index_lowering(models.pendulum()))


@pytest.fixture(scope="session")
def rc50():
    return structural_simplify(models.rc_circuits(50))
