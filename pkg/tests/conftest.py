import re

import numpy as np
import pytest

from backflow.states import ExpPoly

# acceptance outcomes, printed as one line each at the end of the run
ACCEPTANCE = {}


def random_profile(rng, max_terms=3):
    """A random ExpPoly: complex coefficients, powers 0..2, Gaussian or exponential decay."""
    terms = []
    for _ in range(int(rng.integers(1, max_terms + 1))):
        coef = complex(rng.normal(), rng.normal())
        k = int(rng.integers(0, 3))
        if rng.random() < 0.5:
            terms.append((coef, k, rng.uniform(0.3, 3.0), 0.0))
        else:
            terms.append((coef, k, rng.uniform(-1.0, 1.0), rng.uniform(0.2, 2.0)))
    return ExpPoly(tuple(terms))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def record():
    def _record(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(key):
        digits, rest = re.match(r"(\d+)(.*)", str(key)).groups()
        return int(digits), rest

    for key in sorted(ACCEPTANCE, key=order):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {str(key):>3}: {'PASS' if ok else 'FAIL'}  {detail}")
