import pytest

from levyldp.noise import MarkSpace, additive, multiplicative
from levyldp.operators import builtin_linear
from levyldp.triple import TripleSpec


@pytest.fixture
def scalar_spec():
    return TripleSpec.dirichlet(1)


@pytest.fixture
def one_atom():
    return MarkSpace.discrete([0.0], [1.0])


@pytest.fixture
def scalar_model(scalar_spec, one_atom):
    """dX = -X dt + eps int X dN~, the scalar multiplicative jump model."""
    return scalar_spec, builtin_linear(scalar_spec, 1.0), multiplicative(one_atom, 1.0)


@pytest.fixture
def additive_model(scalar_spec, one_atom):
    return scalar_spec, builtin_linear(scalar_spec, 1.0), additive(one_atom, [0.5])


def rel(a, b):
    return abs(a - b) / abs(b)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance_log(request):
    """Record one verdict line per acceptance criterion; printed in the summary."""
    log = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        log.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
