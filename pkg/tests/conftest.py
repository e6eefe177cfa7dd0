import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings, strategies as st

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

seeds = st.integers(min_value=0, max_value=2 ** 32 - 1)


def rand_coeffs(rng, n_max, decay=2.0, real=True):
    n = np.arange(-n_max, n_max + 1)
    c = (rng.standard_normal(n.size) + 1j * rng.standard_normal(n.size)) * (1.0 + n ** 2) ** (-decay / 2)
    if real:
        c = 0.5 * (c + np.conj(c[::-1]))
    return c


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
