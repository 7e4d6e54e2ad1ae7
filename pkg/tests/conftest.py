import functools

import pytest

from surfocp.mesh import build_icosphere


@functools.lru_cache(maxsize=None)
def icosphere(level):
    return build_icosphere(level)


@pytest.fixture(scope="session")
def sphere():
    return icosphere


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print and remember one PASS/FAIL line for an acceptance criterion."""

    def emit(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
