import pytest

from htype.algebra import build_heisenberg, build_quaternionic
from htype.kernel import KernelEvaluator


@pytest.fixture(scope="session")
def heis1():
    return build_heisenberg(1)


@pytest.fixture(scope="session")
def quat1():
    return build_quaternionic(1)


@pytest.fixture(scope="session")
def evaluator_h1(heis1):
    return KernelEvaluator(heis1)


@pytest.fixture(scope="session")
def evaluator_q1(quat1):
    return KernelEvaluator(quat1)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
