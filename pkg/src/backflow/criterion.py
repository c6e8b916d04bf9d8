"""Which constants ``a`` make ``N (a - p) f(p)`` a backflow state.

With moments ``f0, f1, f2`` of the profile, the current at the origin of the
family state is proportional to::

    2 Re[(a f0 - f1) conj(a f1 - f2)] = A |a|^2 - 2 Re(B a) + C

with ``A = 2 Re(f0 conj f1)``, ``B = f0 conj(f2) + |f1|^2`` and
``C = 2 Re(f1 conj f2)``.  The discriminant ``|B|^2 - A C`` equals
``|f1^2 - f0 f2|^2``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotApplicableError

#: Relative size below which a moment is treated as zero.
ZERO_RTOL = 1e-13


@dataclass(frozen=True)
class QuadraticForm:
    A: float
    B: complex
    C: float
    D: float

    def __call__(self, a):
        a = np.asarray(a, dtype=complex)
        return self.A * np.abs(a) ** 2 - 2 * np.real(self.B * a) + self.C


@dataclass(frozen=True)
class BackflowVerdict:
    """Outcome of :func:`decide`.

    ``condition_value`` is the quadratic form evaluated at the witness ``a``
    (``optimal_a`` or a point along ``unbounded_direction``); it is negative
    exactly when some ``a`` gives backflow.
    """

    is_backflow: bool
    condition_value: float
    witness_a: complex = None
    optimal_a: complex = None
    unbounded_direction: complex = None
    real_window: tuple = None
    case: str = ""


def _triple(m):
    f0, f1, f2 = (complex(x) for x in m)
    return f0, f1, f2


def quadratic_form(m):
    """Coefficients ``(A, B, C)`` and discriminant ``D`` for a moment triple."""
    f0, f1, f2 = _triple(m)
    A = 2.0 * (f0 * f1.conjugate()).real
    B = f0 * f2.conjugate() + abs(f1) ** 2
    C = 2.0 * (f1 * f2.conjugate()).real
    D = abs(f1 * f1 - f0 * f2) ** 2
    return QuadraticForm(A, B, C, D)


def condition_value(a, m):
    """``2 Re[(a f0 - f1) conj(a f1 - f2)]``; negative means backflow.

    Broadcasts over array ``a``.
    """
    f0, f1, f2 = _triple(m)
    a = np.asarray(a, dtype=complex)
    out = 2.0 * np.real((a * f0 - f1) * np.conj(a * f1 - f2))
    return float(out) if out.ndim == 0 else out


def optimal_a(m):
    """The ``a`` giving the most negative current, ``conj(B) / A``.

    Only defined when ``A > 0`` and the discriminant is positive.
    """
    q = quadratic_form(m)
    size = _size(m)
    if not q.A > ZERO_RTOL * size**2 or not q.D > (ZERO_RTOL * size**2) ** 2:
        raise NotApplicableError("optimal a requires A > 0 and a positive discriminant; use decide()")
    return q.B.conjugate() / q.A


def _size(m):
    return max(abs(x) for x in _triple(m))


def _is_real(m, tol):
    return all(abs(x.imag) <= tol for x in _triple(m))


def decide(m):
    """Full case analysis of the negativity condition.

    Every moment triple yields a verdict.  Witness values for the unbounded
    branches (``A <= 0``) are taken on the disc ``|a| <= R`` with
    ``R = 10 (|f1/f0| + |f2/f1| + 1)``, enlarged until the condition is
    negative.
    """
    f0, f1, f2 = _triple(m)
    size = _size(m)
    if size == 0:
        return BackflowVerdict(False, 0.0, case="zero profile")
    tol = ZERO_RTOL * size
    zero0, zero1, zero2 = abs(f0) < tol, abs(f1) < tol, abs(f2) < tol
    f0 = 0j if zero0 else f0
    f1 = 0j if zero1 else f1
    f2 = 0j if zero2 else f2
    m = (f0, f1, f2)
    q = quadratic_form(m)
    real = _is_real(m, tol)
    small = ZERO_RTOL * size**2

    if q.A > small:
        a_opt = q.B.conjugate() / q.A
        value = -q.D / q.A
        window = None
        if real:
            lo, hi = sorted(((f1 / f0).real, (f2 / f1).real))
            window = (lo, hi)
        if q.D > small**2 and value < 0:
            return BackflowVerdict(True, value, a_opt, a_opt, None, window, "A > 0")
        return BackflowVerdict(False, 0.0, a_opt, a_opt, None, None, "A > 0, zero discriminant")

    if q.A < -small:
        direction = q.B.conjugate() / abs(q.B) if abs(q.B) > 0 else 1.0 + 0j
        R = 10.0 * (abs(f1 / f0) + abs(f2 / f1) + 1.0)
        value = q(R * direction)
        while value >= 0:
            R *= 2.0
            value = q(R * direction)
        window = None
        if real:
            # negative outside both roots; the upper ray is reported
            window = (max((f1 / f0).real, (f2 / f1).real), math.inf)
        return BackflowVerdict(True, float(value), R * direction, None, direction, window, "A < 0")

    # A = 0: the condition is linear in a
    if abs(q.B) > small:
        direction = q.B.conjugate() / abs(q.B)
        rho = max(abs(q.C) / (2 * abs(q.B)), 1.0)
        witness = (q.C / (2 * abs(q.B)) + rho) * direction
        value = float(q(witness))
        window = None
        if real:
            threshold = q.C / (2 * q.B.real)
            window = (threshold, math.inf) if q.B.real > 0 else (-math.inf, threshold)
        if zero1:
            case = "f1 = 0"
        elif zero0 and zero2:
            case = "f0 = f2 = 0"
        elif zero0:
            case = "f0 = 0"
        else:
            case = "A = 0"
        return BackflowVerdict(True, value, witness, None, direction, window, case)
    # A = B = 0 forces C = 0 as well: the current vanishes for every a
    return BackflowVerdict(False, 0.0, case="zero current")
