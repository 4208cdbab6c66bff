import os

os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from vidboot.synthdata import generate_sequence

# Filled by tests/test_acceptance.py: criterion number -> (passed, detail).
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_seq():
    """A short fully labeled sequence shared by the cheaper tests."""
    return generate_sequence(3, 24)


@pytest.fixture(scope="session")
def dyn_seq():
    return generate_sequence(3, 24, dynamic=True)  # moving box in view throughout
