import sys

import numpy as np
import pytest

from ecpsim.scenarios import builtin, iterate


class ScenarioRuns:
    """Full builtin runs, computed once per test session."""

    def __init__(self):
        self._cache = {}

    def __call__(self, name):
        if name not in self._cache:
            config = builtin(name)
            self._cache[name] = (config, list(iterate(config)))
        return self._cache[name]


@pytest.fixture(scope="session")
def runs():
    return ScenarioRuns()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(module.RESULTS):
        terminalreporter.write_line(module.RESULTS[k])
