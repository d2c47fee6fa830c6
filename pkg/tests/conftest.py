import numpy as np
import pytest

from slime_po import policy
from slime_po.objective import BaselineHyperParams, SlimeHyperParams
from slime_po.prefdata import generate_synthetic


@pytest.fixture
def hp():
    return SlimeHyperParams()


@pytest.fixture
def bhp():
    return BaselineHyperParams()


@pytest.fixture
def small_pairs():
    return generate_synthetic(8, 24, 6, seed=3)


@pytest.fixture
def small_model():
    return policy.init(24, context_window=3, embed_dim=8, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for the acceptance summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(name, ok, detail=""):
        lines.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
