import numpy as np
import pytest

from rtfdoa.doa import generate_prototypes
from rtfdoa.geometry import default_geometry


@pytest.fixture(scope="session")
def geometry():
    return default_geometry()


@pytest.fixture(scope="session")
def database(geometry):
    # full-resolution free-field database shared by the slower tests
    return generate_prototypes(geometry)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Recorder for the acceptance suite: one PASS/FAIL line per criterion."""
    def record(number: int, name: str, ok: bool, detail: str) -> None:
        verdict = "PASS" if ok else "FAIL"
        line = f"ACCEPTANCE {number} ({name}): {verdict} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
