import numpy as np
import pytest

from hemato.model import reference_params

# criterion id -> (passed, one-line detail); filled by test_acceptance.py
ACCEPTANCE_RESULTS = {}


@pytest.fixture(scope="session")
def pset_a():
    # ModelParams is immutable, so one instance can be shared
    return reference_params()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
