import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from backflow import GaussianF, NotApplicableError, moments
from backflow.criterion import condition_value, decide, optimal_a, quadratic_form

finite = st.floats(-10.0, 10.0, allow_nan=False)
cplx = st.builds(complex, finite, finite)


def gaussian_moments(gamma0=1.0):
    return moments(GaussianF(gamma0))


def test_gaussian_window_endpoints():
    # real moments: the negative set is the interval between f1/f0 and f2/f1
    v = decide(gaussian_moments())
    lo, hi = v.real_window
    assert lo == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)
    assert hi == pytest.approx(math.sqrt(math.pi) / 2, rel=1e-12)
    assert v.is_backflow and v.case == "A > 0"


def test_optimal_a_is_the_minimum():
    m = gaussian_moments(0.8)
    a0 = optimal_a(m)
    grid = a0 + np.linspace(-0.2, 0.2, 401)
    vals = condition_value(grid, m)
    assert np.argmin(vals) == 200
    assert condition_value(a0, m) == pytest.approx(-quadratic_form(m).D / quadratic_form(m).A, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(cplx, cplx, cplx)
def test_discriminant_identity(f0, f1, f2):
    q = quadratic_form((f0, f1, f2))
    lhs = abs(q.B) ** 2 - q.A * q.C
    scale = max(abs(f0), abs(f1), abs(f2), 1e-3) ** 4
    assert lhs == pytest.approx(q.D, abs=1e-12 * scale)


@settings(max_examples=200, deadline=None)
@given(cplx, cplx, cplx, cplx)
def test_quadratic_form_equals_condition(f0, f1, f2, a):
    m = (f0, f1, f2)
    q = quadratic_form(m)
    scale = max(abs(f0), abs(f1), abs(f2), 1e-3) ** 2 * (1 + abs(a)) ** 2
    assert q(a) == pytest.approx(condition_value(a, m), abs=1e-12 * scale)


@settings(max_examples=300, deadline=None)
@given(cplx, cplx, cplx)
def test_verdict_witness_is_negative(f0, f1, f2):
    m = (f0, f1, f2)
    assume(max(abs(f0), abs(f1), abs(f2)) > 1e-3)
    v = decide(m)
    if v.is_backflow:
        assert condition_value(v.witness_a, m) < 0
        assert v.condition_value < 0


@pytest.mark.parametrize(
    "m, backflow, case",
    [
        ((1.0, 0.0, 1.0), True, "f1 = 0"),
        ((0.0, 1.0, 0.0), True, "f0 = f2 = 0"),
        ((0.0, 1.0, 2.0), True, "f0 = 0"),
        ((0.0, 0.0, 1.0), False, "zero current"),
        ((0.0, 0.0, 0.0), False, "zero profile"),
        ((1.0, -1.0, 1.0), True, "A < 0"),
        ((1.0, 2.0, 4.0), False, "A > 0, zero discriminant"),
    ],
)
def test_degenerate_cases(m, backflow, case):
    v = decide(m)
    assert v.is_backflow is backflow
    assert v.case == case
    if backflow:
        assert condition_value(v.witness_a, m) < 0


def test_f1_zero_window_is_half_line():
    # (0, f1, 0): the condition is -2 |f1|^2 Re(a), negative only for Re a > 0
    v = decide((0.0, 1.0, 0.0))
    assert v.real_window == (0.0, math.inf)
    assert condition_value(-1.0, (0.0, 1.0, 0.0)) > 0
    assert condition_value(1.0, (0.0, 1.0, 0.0)) < 0


def test_negative_A_reports_upper_ray():
    # roots -2 and -1; positive only between them
    m = (1.0, -1.0, 2.0)
    v = decide(m)
    lo, hi = v.real_window
    assert hi == math.inf
    assert condition_value(lo + 1e-6, m) < 0
    assert condition_value(lo - 1e-6, m) > 0
    assert condition_value(-2.5, m) < 0


def test_optimal_a_not_applicable():
    with pytest.raises(NotApplicableError):
        optimal_a((1.0, 2.0, 4.0))
    with pytest.raises(NotApplicableError):
        optimal_a((1.0, -1.0, 1.0))


def test_condition_value_broadcasts():
    m = gaussian_moments()
    a = np.array([[0.1, 0.7], [1.0, 2.0]])
    out = condition_value(a, m)
    assert out.shape == (2, 2)
    assert out[0, 1] < 0 < out[0, 0]
