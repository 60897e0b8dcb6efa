import numpy as np
import pytest

from nspda.grammars import builtin_grammar
from nspda.programming import program_full


@pytest.fixture(scope="session")
def programmed():
    """Third-order programmed machine for every benchmark grammar, keyed by name."""
    cache = {}

    def get(name, order="third"):
        if (name, order) not in cache:
            pda = builtin_grammar(name)
            J = pda.M + 1 if order == "third" else 3 * pda.M
            cache[(name, order)] = program_full(pda, order, J)
        return cache[(name, order)]

    return get


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.report():
        terminalreporter.write_line(line)
