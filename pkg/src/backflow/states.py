"""Positive-momentum states, half-line quadrature and moment functionals.

A state is a momentum-space wavefunction supported on ``p >= 0``.  It is built
from a *profile* ``f(p)`` either as the bare profile, ``phi = N f``, or in the
family form ``phi = N (a - p) f`` for a complex constant ``a``.

Profiles come in three flavours:

* analytic sums of terms ``coef * p**k * exp(-c p - alpha p**2)`` (optionally
  truncated at a finite ``upper``), for which free-evolution integrals have
  closed forms (:class:`GaussianF`, :class:`BrackenMelloy`,
  :class:`EvesonTruncated`, :class:`ExpPoly`);
* generic callables (:class:`BrackenMelloyReduced`);
* grid samples carrying their own quadrature (:class:`GridSampled`).
"""

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import special

from .errors import AccuracyError, DegenerateStateError

#: Gauss-Legendre order of one panel in composite rules.
PANEL_ORDER = 20
#: Largest phase change (radians) allowed across one panel.
PANEL_PHASE = 16.0


@dataclass(frozen=True)
class UnitsContext:
    hbar: float = 1.0
    mass: float = 1.0

    def __post_init__(self):
        if not (self.hbar > 0 and self.mass > 0):
            raise ValueError("hbar and mass must be positive")

    def to_dict(self):
        return {"hbar": self.hbar, "mass": self.mass}


NATURAL = UnitsContext()


# ---------------------------------------------------------------------------
# quadrature


@functools.lru_cache(maxsize=64)
def _gauss(n):
    x, w = leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@dataclass(frozen=True, eq=False)
class HalfLineGrid:
    """Quadrature nodes and weights approximating integrals over ``(0, inf)``."""

    nodes: np.ndarray
    weights: np.ndarray
    scale: float
    scheme: str = "mapped-gauss"

    @property
    def n(self):
        return len(self.nodes)

    def integrate(self, values):
        return np.sum(self.weights * values, axis=-1)


def build_grid(n, L, scheme="mapped-gauss", panel_order=16):
    """Build a half-line quadrature grid.

    Parameters
    ----------
    n : int
        Number of nodes (at least 2).
    L : float
        Map scale for ``mapped-gauss`` (``p = L u / (1 - u)``), or the
        truncation point for the two truncated schemes.
    scheme : {'mapped-gauss', 'truncated-uniform', 'truncated-gauss'}
        ``truncated-uniform`` is the midpoint rule on ``[0, L]``;
        ``truncated-gauss`` uses ``n / panel_order`` equal Gauss-Legendre
        panels on ``[0, L]``.

    Returns
    -------
    HalfLineGrid
    """
    if int(n) != n or n < 2:
        raise ValueError(f"grid size must be an integer >= 2, got {n!r}")
    if not L > 0:
        raise ValueError(f"grid scale must be positive, got {L!r}")
    n = int(n)
    if scheme == "mapped-gauss":
        x, w = _gauss(n)
        u = 0.5 * (x + 1.0)
        nodes = L * u / (1.0 - u)
        weights = 0.5 * w * L / (1.0 - u) ** 2
    elif scheme == "truncated-uniform":
        h = L / n
        nodes = (np.arange(n) + 0.5) * h
        weights = np.full(n, h)
    elif scheme == "truncated-gauss":
        if n % panel_order:
            raise ValueError(f"n={n} is not a multiple of the panel order {panel_order}")
        nodes, weights = panel_rule([0.0, L], n // panel_order, panel_order)
    else:
        raise ValueError(f"unknown grid scheme {scheme!r}")
    return HalfLineGrid(nodes, weights, float(L), scheme)


def panel_rule(edges, panels, order=PANEL_ORDER):
    """Composite Gauss-Legendre rule.

    ``edges`` are hard breakpoints; each sub-interval receives a share of
    ``panels`` equal panels proportional to its length (at least one).
    """
    edges = np.asarray(edges, dtype=float)
    lengths = np.diff(edges)
    total = lengths.sum()
    x, w = _gauss(order)
    nodes, weights = [], []
    for lo, length in zip(edges[:-1], lengths):
        if length <= 0:
            continue
        m = max(1, int(math.ceil(panels * length / total)))
        h = length / m
        left = lo + h * np.arange(m)
        nodes.append((left[:, None] + 0.5 * h * (x + 1.0)).ravel())
        weights.append(np.tile(0.5 * h * w, m))
    return np.concatenate(nodes), np.concatenate(weights)


# ---------------------------------------------------------------------------
# profiles


class Profile:
    """A momentum profile ``f(p)`` on ``p >= 0``.

    Subclasses implement ``_eval``; everything else has generic defaults.
    """

    upper = math.inf
    breakpoints = ()
    is_real = False
    is_nonnegative = False

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        out = np.asarray(self._eval(p), dtype=complex)
        inside = (p >= 0) & (p < self.upper) if math.isfinite(self.upper) else (p >= 0)
        return np.where(inside, out, 0.0)

    def _eval(self, p):
        raise NotImplementedError

    def derivative(self, p):
        p = np.asarray(p, dtype=float)
        h = 1e-5 * self.scale
        lo = np.maximum(p - h, 0.0)
        hi = p + h
        if math.isfinite(self.upper):
            hi = np.minimum(hi, np.nextafter(self.upper, 0))
        return (self._eval(hi) - self._eval(lo)) / (hi - lo)

    @property
    def scale(self):
        return 1.0

    def cutoff(self, rtol=1e-16):
        """Momentum beyond which ``|f(p)| (1+p)^3`` is below ``rtol`` of its peak."""
        if math.isfinite(self.upper):
            return self.upper
        p = np.geomspace(1e-3 * self.scale, 1e4 * self.scale, 600)
        env = np.abs(self._envelope(p)) * (1.0 + p / self.scale) ** 3
        peak = env.max()
        if peak == 0:
            return self.scale
        above = np.nonzero(env > rtol * peak)[0]
        if above[-1] == len(p) - 1:
            raise AccuracyError("profile does not decay fast enough to truncate")
        return float(p[above[-1] + 1])

    def _envelope(self, p):
        return np.abs(self._eval(p))

    def native_rule(self):
        return None

    def smooth_rule(self, n=None):
        """Nodes and weights for integrals of smooth functionals of ``f``."""
        native = self.native_rule()
        if native is not None:
            return native
        if math.isfinite(self.upper):
            edges = [0.0, *sorted(b for b in self.breakpoints if 0 < b < self.upper), self.upper]
            n = n or 64
            x, w = _gauss(n)
            nodes = np.concatenate([0.5 * (b - a) * (x + 1) + a for a, b in zip(edges[:-1], edges[1:])])
            weights = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
            return nodes, weights
        grid = build_grid(n or 192, self.scale)
        return grid.nodes, grid.weights

    def taylor0(self):
        """``(f(0), f'(0), f''(0))`` from one-sided differences."""
        h = 1e-3 * self.scale
        f = self._eval(np.array([0.0, h, 2 * h, 3 * h]))
        d1 = (-11 * f[0] + 18 * f[1] - 9 * f[2] + 2 * f[3]) / (6 * h)
        d2 = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h**2
        return complex(f[0]), complex(d1), complex(d2)

    def closed_integrals(self, beta, kmax, lam=0.0):
        """Closed forms of ``int p^k f exp(-i beta p^2 + i lam p)``, or ``None``.

        Entries that cannot be evaluated stably are NaN.
        """
        return None

    # transformations
    def scaled(self, factor):
        return _Scaled(self, complex(factor))

    def times_linear(self, a):
        """Profile of ``(a - p) f(p)``."""
        return _FamilyProduct(self, complex(a))

    def to_dict(self):
        raise TypeError(f"{type(self).__name__} is not serializable")


def _envelope_scale(cr, ar):
    """``int_0^inf exp(-cr p - ar p^2) dp`` and a momentum scale, for real ``cr, ar``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        gauss = np.sqrt(np.pi / ar) / 2 * special.erfcx(cr / (2 * np.sqrt(ar)))
        e0 = np.where(ar > 0, gauss, 1.0 / cr)
        ps = 1.0 / np.maximum(np.sqrt(np.maximum(ar, 0.0)), np.maximum(cr, 0.0))
    return e0, ps


def _endpoint_series(c, alpha, kmax, atol, ps, max_terms=80):
    """``I_k`` from the asymptotic expansion about ``p = 0``.

    The expansion ``sum_j (-alpha)^j (k + 2j)! / (j! c^(k + 2j + 1))`` is
    asymptotic in ``z = c / 2 sqrt(alpha)`` with smallest term near
    ``exp(-|z|^2)``, so it is only tried for ``|z| >= 6``.  For ``Re z < 0``
    the saddle at ``p* = -c / 2 alpha`` contributes the full-line moments
    ``sqrt(pi / alpha) exp(z^2) m_k`` on top of the series.  Entries that
    do not converge stay NaN.
    """
    out = np.full((kmax + 1, c.size), np.nan + 0j)
    z = c / (2 * np.sqrt(alpha))
    usable = np.abs(z) >= 6.0
    if not np.any(usable):
        return out
    cc, al, zz = c[usable], alpha[usable], z[usable]
    inv_c2 = 1.0 / (cc * cc)
    # moments of the complex Gaussian centred on the saddle
    centre, var = -cc / (2 * al), 1 / (2 * al)
    with np.errstate(over="ignore", invalid="ignore"):
        base = np.where(zz.real < 0, np.sqrt(np.pi / al) * np.exp(zz * zz), 0.0)
    saddle = [base, centre * base]
    for k in range(1, kmax):
        saddle.append(centre * saddle[k] + k * var * saddle[k - 1])
    for k in range(kmax + 1):
        term = math.factorial(k) / cc ** (k + 1)
        total = term.copy()
        done = np.zeros(cc.size, dtype=bool)
        failed = np.zeros(cc.size, dtype=bool)
        lim = atol[usable] * ps[usable] ** k
        for j in range(max_terms):
            nxt = term * (-al) * (k + 2 * j + 1) * (k + 2 * j + 2) / (j + 1) * inv_c2
            active = ~(done | failed)
            failed |= active & (np.abs(nxt) > np.abs(term))
            active &= ~failed
            total += np.where(active, nxt, 0.0)
            done |= active & (np.abs(nxt) <= lim)
            term = nxt
            if not np.any(~(done | failed)):
                break
        total = total + saddle[k]
        out[k, np.flatnonzero(usable)] = np.where(done & np.isfinite(total), total, np.nan)
    return out


def _integrals_exp_poly(c, alpha, upper, kmax, tol=1e-12):
    """``I_k = int_0^U p^k exp(-c p - alpha p^2) dp`` for k = 0..kmax.

    ``c`` and ``alpha`` broadcast against each other.  The downward recurrence
    loses absolute accuracy when ``|c| >> |alpha|``; entries whose propagated
    rounding error exceeds ``tol`` times the integral of the envelope
    ``|p^k exp(...)|`` come back as NaN.
    """
    c, alpha = np.broadcast_arrays(np.asarray(c, dtype=complex), np.asarray(alpha, dtype=complex))
    shape = c.shape
    c, alpha = c.ravel(), alpha.ravel()
    out = np.full((kmax + 1, c.size), np.nan + 0j)
    zero = alpha == 0
    eps = np.finfo(float).eps
    if math.isinf(upper):
        pure = zero & (c.real > 0)
        for k in range(kmax + 1):
            out[k, pure] = math.factorial(k) / c[pure] ** (k + 1)
        ok = ~zero & (alpha.real >= 0) & ((alpha.real > 0) | (c.real > 0))
        if not np.any(ok):
            return out.reshape((kmax + 1,) + shape)
        al, cc = alpha[ok], c[ok]
        s = np.sqrt(al)
        with np.errstate(over="ignore", invalid="ignore"):
            ik = [np.sqrt(np.pi) / (2 * s) * special.erfcx(cc / (2 * s))]
            ik.append((1 - cc * ik[0]) / (2 * al))
            for k in range(1, kmax):
                ik.append((k * ik[k - 1] - cc * ik[k]) / (2 * al))
            # forward propagation of rounding error through the recurrence
            grow = np.abs(cc) / np.abs(2 * al)
            delta = [4 * eps * np.abs(ik[0])]
            delta.append(eps * np.abs(cc * ik[0]) / np.abs(2 * al) + grow * delta[0])
            for k in range(1, kmax):
                delta.append((k * delta[k - 1]) / np.abs(2 * al) + grow * delta[k])
            e0, ps = _envelope_scale(cc.real, al.real)
            good = np.isfinite(ik[0])
            for k in range(kmax + 1):
                good &= np.isfinite(ik[k]) & (delta[k] <= tol * e0 * ps**k)
        for k in range(kmax + 1):
            out[k, ok] = np.where(good, ik[k], np.nan)
        # where the recurrence fails the endpoint expansion usually converges
        far = np.flatnonzero(ok)[~good]
        if far.size:
            series = _endpoint_series(c[far], alpha[far], kmax, tol * e0[~good], ps[~good])
            out[:, far] = series
        return out.reshape((kmax + 1,) + shape)
    U = upper
    at0 = c == 0
    for k in range(kmax + 1):
        out[k, zero & at0] = U ** (k + 1) / (k + 1)
    ok = ~zero & at0 & (np.abs(alpha) * U * U >= 4.0)
    if np.any(ok):
        al = alpha[ok]
        s = np.sqrt(al)
        edge = np.exp(-al * U * U)
        ik = [np.sqrt(np.pi) / (2 * s) * special.erf(s * U)]
        ik.append(-np.expm1(-al * U * U) / (2 * al))
        for k in range(1, kmax):
            ik.append((k * ik[k - 1] - U**k * edge) / (2 * al))
        for k in range(kmax + 1):
            out[k, ok] = ik[k]
    return out.reshape((kmax + 1,) + shape)


class AnalyticProfile(Profile):
    """Sum of ``coef p^k exp(-c p - alpha p^2)`` on ``[0, upper)``."""

    @property
    def terms(self):
        raise NotImplementedError

    def _eval(self, p):
        out = np.zeros(np.shape(p), dtype=complex)
        for coef, k, c, alpha in self.terms:
            out = out + coef * p**k * np.exp(-c * p - alpha * p * p)
        return out

    def derivative(self, p):
        p = np.asarray(p, dtype=float)
        out = np.zeros(p.shape, dtype=complex)
        for coef, k, c, alpha in self.terms:
            e = np.exp(-c * p - alpha * p * p)
            lead = k * p ** (k - 1) if k else 0.0
            out = out + coef * (lead - (c + 2 * alpha * p) * p**k) * e
        inside = (p >= 0) & (p < self.upper)
        return np.where(inside, out, 0.0)

    def _envelope(self, p):
        out = np.zeros(np.shape(p))
        for coef, k, c, alpha in self.terms:
            out = out + abs(coef) * p**k * np.exp(-c.real * p - alpha.real * p * p)
        return out

    @property
    def scale(self):
        best = 0.0
        for coef, k, c, alpha in self.terms:
            cand = []
            if alpha.real > 0:
                cand.append(math.sqrt((k + 1) / (2 * alpha.real)))
            if c.real > 0:
                cand.append((k + 1) / c.real)
            best = max(best, min(cand) if cand else math.inf)
        if math.isfinite(self.upper):
            best = min(best, self.upper)
        if not math.isfinite(best) or best <= 0:
            raise AccuracyError("profile has no decaying envelope")
        return best

    def taylor0(self):
        d = [0j, 0j, 0j]
        for coef, k, c, alpha in self.terms:
            # exp(-c p - alpha p^2) = 1 - c p + (c^2/2 - alpha) p^2 + ...
            series = (1.0, -c, c * c / 2 - alpha)
            for j, s in enumerate(series):
                if k + j <= 2:
                    d[k + j] += coef * s
        return d[0], d[1], 2 * d[2]

    def closed_integrals(self, beta, kmax, lam=0.0):
        beta, lam = np.broadcast_arrays(np.asarray(beta, dtype=float), np.asarray(lam, dtype=float))
        out = np.zeros((kmax + 1,) + beta.shape, dtype=complex)
        for coef, k, c, alpha in self.terms:
            ik = _integrals_exp_poly(c - 1j * lam, alpha + 1j * beta, self.upper, kmax + k)
            out += coef * ik[k:]
        return out

    @property
    def is_real(self):
        return all(coef.imag == 0 and c.imag == 0 and alpha.imag == 0 for coef, _, c, alpha in self.terms)

    def scaled(self, factor):
        return ExpPoly(tuple((coef * factor, k, c, al) for coef, k, c, al in self.terms), self.upper)

    def times_linear(self, a):
        terms = []
        for coef, k, c, al in self.terms:
            if a != 0:
                terms.append((coef * a, k, c, al))
            terms.append((-coef, k + 1, c, al))
        return ExpPoly(tuple(terms), self.upper)

    def translated(self, shift):
        """Multiply by ``exp(-i shift p)``; ``shift`` is a position over hbar."""
        return ExpPoly(tuple((coef, k, c + 1j * shift, al) for coef, k, c, al in self.terms), self.upper)

    def dilated(self, lam):
        """Profile of ``f(lam p)``."""
        upper = self.upper / lam
        return ExpPoly(tuple((coef * lam**k, k, c * lam, al * lam * lam) for coef, k, c, al in self.terms), upper)


def _term(coef, k, c=0.0, alpha=0.0):
    return (complex(coef), int(k), complex(c), complex(alpha))


@dataclass(frozen=True)
class ExpPoly(AnalyticProfile):
    """Generic analytic profile given by its terms ``(coef, k, c, alpha)``."""

    term_list: tuple
    upper: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "term_list", tuple(_term(*t) for t in self.term_list))
        if not self.upper > 0:
            raise ValueError("upper must be positive")

    @property
    def terms(self):
        return self.term_list

    def to_dict(self):
        terms = [[t[0].real, t[0].imag, t[1], t[2].real, t[2].imag, t[3].real, t[3].imag] for t in self.terms]
        return {"kind": "exp_poly", "params": {"terms": terms, "upper": None if math.isinf(self.upper) else self.upper}}


@dataclass(frozen=True)
class GaussianF(AnalyticProfile):
    """``f(p) = exp(-gamma0^2 p^2)``."""

    gamma0: float

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")

    @property
    def terms(self):
        return (_term(1.0, 0, 0.0, self.gamma0**2),)

    is_nonnegative = True

    def to_dict(self):
        return {"kind": "gaussian", "params": {"gamma0": self.gamma0}}


@dataclass(frozen=True)
class BrackenMelloy(AnalyticProfile):
    """``f(p) = p (exp(-p/K) - exp(-p/2K) / 6)`` without prefactor."""

    K: float

    def __post_init__(self):
        if not self.K > 0:
            raise ValueError("K must be positive")

    @property
    def terms(self):
        return (_term(1.0, 1, 1.0 / self.K), _term(-1.0 / 6.0, 1, 0.5 / self.K))

    def to_dict(self):
        return {"kind": "bracken_melloy", "params": {"K": self.K}}


@dataclass(frozen=True)
class EvesonTruncated(AnalyticProfile):
    """``f(p) = (sqrt(3) p - p0)`` on ``[0, p0)``, zero beyond."""

    p0: float

    def __post_init__(self):
        if not self.p0 > 0:
            raise ValueError("p0 must be positive")

    @property
    def terms(self):
        return (_term(math.sqrt(3.0), 1), _term(-self.p0, 0))

    @property
    def upper(self):
        return self.p0

    def to_dict(self):
        return {"kind": "eveson", "params": {"p0": self.p0}}


@dataclass(frozen=True)
class BrackenMelloyReduced(Profile):
    """The profile ``f`` in ``phi = N (a - p) f`` for the Bracken-Melloy state.

    ``a = 2 K ln 6`` is the node of ``exp(-p/K) - exp(-p/2K)/6``; dividing by
    ``a - p`` leaves a smooth positive function.
    """

    K: float
    is_real = True
    is_nonnegative = True

    @property
    def node(self):
        return 2.0 * self.K * math.log(6.0)

    def _eval(self, p):
        z = (self.node - p) / (2.0 * self.K)
        safe = np.where(np.abs(z) < 1e-8, 1.0, z)
        ratio = np.where(np.abs(z) < 1e-8, 1.0 + z / 2, np.expm1(safe) / safe)
        return p * np.exp(-p / (2 * self.K)) * ratio / (12.0 * self.K)

    @property
    def scale(self):
        return 4.0 * self.K

    def to_dict(self):
        return {"kind": "bracken_melloy_reduced", "params": {"K": self.K}}


@dataclass(frozen=True, eq=False)
class GridSampled(Profile):
    """Samples of ``f`` on quadrature nodes.

    Integrals use the carried weights (Nystrom convention).  Point
    evaluation interpolates linearly and is zero beyond the last node.
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if np.any(np.diff(nodes) <= 0) or nodes[0] <= 0:
            raise ValueError("grid nodes must be positive and strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))

    @property
    def upper(self):
        return float(self.nodes[-1])

    @property
    def p_max(self):
        return float(self.nodes[-1])

    @property
    def is_real(self):
        return bool(np.all(self.values.imag == 0))

    @property
    def is_nonnegative(self):
        return self.is_real and bool(np.all(self.values.real >= 0))

    def __call__(self, p):
        p = np.asarray(p, dtype=float)
        re = np.interp(p, self.nodes, self.values.real, right=0.0)
        im = np.interp(p, self.nodes, self.values.imag, right=0.0)
        out = re + 1j * im
        return np.where((p >= 0) & (p <= self.nodes[-1]), out, 0.0)

    _eval = __call__

    def derivative(self, p):
        slopes = np.diff(self.values) / np.diff(self.nodes)
        idx = np.clip(np.searchsorted(self.nodes, p) - 1, 0, len(slopes) - 1)
        return np.where(np.asarray(p) <= self.nodes[-1], slopes[idx], 0.0)

    @property
    def scale(self):
        w = self.weights * np.abs(self.values) ** 2
        total = w.sum()
        return float(np.sqrt((w * self.nodes**2).sum() / total)) if total > 0 else float(self.nodes[-1])

    def cutoff(self, rtol=1e-16):
        return self.p_max

    def native_rule(self):
        return self.nodes, self.weights

    def taylor0(self):
        slope = (self.values[1] - self.values[0]) / (self.nodes[1] - self.nodes[0])
        return complex(self.values[0] - slope * self.nodes[0]), complex(slope), 0j

    def scaled(self, factor):
        return GridSampled(self.nodes, self.weights, self.values * factor)

    def times_linear(self, a):
        return GridSampled(self.nodes, self.weights, (a - self.nodes) * self.values)

    def translated(self, shift):
        return GridSampled(self.nodes, self.weights, self.values * np.exp(-1j * shift * self.nodes))

    def to_dict(self):
        return {
            "kind": "grid",
            "params": {
                "nodes": self.nodes.tolist(),
                "weights": self.weights.tolist(),
                "values_re": self.values.real.tolist(),
                "values_im": self.values.imag.tolist(),
            },
        }


@dataclass(frozen=True)
class _Scaled(Profile):
    base: Profile
    factor: complex

    def _eval(self, p):
        return self.factor * self.base._eval(p)

    def derivative(self, p):
        return self.factor * self.base.derivative(p)

    upper = property(lambda self: self.base.upper)
    breakpoints = property(lambda self: self.base.breakpoints)
    scale = property(lambda self: self.base.scale)

    def cutoff(self, rtol=1e-16):
        return self.base.cutoff(rtol)

    def native_rule(self):
        return self.base.native_rule()

    def taylor0(self):
        return tuple(self.factor * d for d in self.base.taylor0())

    def to_dict(self):
        return {"kind": "scaled", "params": {"factor": [self.factor.real, self.factor.imag], "base": self.base.to_dict()}}


@dataclass(frozen=True)
class _FamilyProduct(Profile):
    base: Profile
    a: complex

    def _eval(self, p):
        return (self.a - p) * self.base._eval(p)

    def derivative(self, p):
        return (self.a - p) * self.base.derivative(p) - self.base._eval(p)

    upper = property(lambda self: self.base.upper)
    breakpoints = property(lambda self: self.base.breakpoints)

    @property
    def scale(self):
        return self.base.scale

    def cutoff(self, rtol=1e-16):
        return self.base.cutoff(rtol)

    def native_rule(self):
        return self.base.native_rule()

    def taylor0(self):
        g0, g1, g2 = self.base.taylor0()
        return self.a * g0, self.a * g1 - g0, self.a * g2 - 2 * g1


def profile_from_dict(data):
    kind = data["kind"]
    params = data.get("params", {})
    if kind == "gaussian":
        return GaussianF(float(params["gamma0"]))
    if kind == "bracken_melloy":
        return BrackenMelloy(float(params["K"]))
    if kind == "eveson":
        return EvesonTruncated(float(params["p0"]))
    if kind == "bracken_melloy_reduced":
        return BrackenMelloyReduced(float(params["K"]))
    if kind == "exp_poly":
        terms = [(complex(t[0], t[1]), int(t[2]), complex(t[3], t[4]), complex(t[5], t[6])) for t in params["terms"]]
        upper = params.get("upper")
        return ExpPoly(tuple(terms), math.inf if upper is None else float(upper))
    if kind == "grid":
        values = np.asarray(params["values_re"], float) + 1j * np.asarray(params.get("values_im", 0.0), float)
        return GridSampled(params["nodes"], params["weights"], values)
    if kind == "scaled":
        return profile_from_dict(params["base"]).scaled(complex(*params["factor"]))
    raise ValueError(f"unknown profile kind {kind!r}")


# ---------------------------------------------------------------------------
# free-evolution integrals


def _panels_for(end, phase_rate, extra=4):
    return extra + np.ceil(end * np.asarray(phase_rate) / PANEL_PHASE).astype(int)


@functools.lru_cache(maxsize=256)
def _cached_rule(edges, panels):
    nodes, weights = panel_rule(list(edges), panels)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _oscillatory_sum(values, nodes, weights, beta, lam, kmax, chunk=2_000_000):
    nt = beta.size
    out = np.empty((kmax + 1, nt), dtype=complex)
    powers = np.stack([weights * values * nodes**k for k in range(kmax + 1)], axis=1)
    step = max(1, chunk // max(1, nodes.size))
    for s in range(0, nt, step):
        b = beta[s : s + step, None]
        lm = lam[s : s + step, None]
        phase = np.exp(-1j * b * nodes * nodes + 1j * lm * nodes)
        out[:, s : s + step] = (phase @ powers).T
    return out


def fourier_integrals(profile, beta, lam=0.0, kmax=1, max_nodes=2_000_000):
    """Quadrature of ``int_0^inf p^k f(p) exp(-i beta p^2 + i lam p) dp``.

    Parameters
    ----------
    profile : Profile
    beta, lam : array_like
        Broadcast against each other; ``beta = t / (2 m hbar)`` and
        ``lam = x / hbar``.
    kmax : int
        Highest power of ``p``.

    Returns
    -------
    values : ndarray, shape ``(kmax + 1,) + broadcast shape``
    error : ndarray, broadcast shape
        Absolute difference between the rule and its panel-doubled
        refinement (zero for grid-sampled profiles, which carry one rule).
    """
    beta, lam = np.broadcast_arrays(np.asarray(beta, float), np.asarray(lam, float))
    shape = beta.shape
    b, lm = beta.ravel(), lam.ravel()
    native = profile.native_rule()
    if native is not None:
        nodes, weights = native
        spacing = np.diff(nodes, prepend=0.0)
        rate = 2 * np.abs(b).max(initial=0.0) * nodes + np.abs(lm).max(initial=0.0)
        if np.any(rate * spacing > np.pi):
            raise AccuracyError("grid too coarse for the requested oscillation", t=None)
        vals = _oscillatory_sum(profile(nodes), nodes, weights, b, lm, kmax)
        return vals.reshape((kmax + 1,) + shape), np.zeros(shape)
    end = profile.cutoff()
    inner = sorted(x for x in profile.breakpoints if 0 < x < end)
    edges = tuple([0.0, *inner, end])
    rates = 2 * np.abs(b) * end + np.abs(lm)
    # group samples by panel count (powers of two) so slow ones stay cheap
    band = np.ceil(np.log2(np.maximum(_panels_for(end, rates), 1))).astype(int)
    values = np.empty((kmax + 1, b.size), dtype=complex)
    errors = np.empty(b.size)
    for level in np.unique(band):
        sel = band == level
        values[:, sel], errors[sel] = _refined_sum(profile, edges, 2 ** int(level), b[sel], lm[sel], kmax, max_nodes)
    return values.reshape((kmax + 1,) + shape), errors.reshape(shape)


def _refined_sum(profile, edges, panels, b, lm, kmax, max_nodes):
    nodes, weights = _cached_rule(edges, panels)
    values = profile(nodes)
    # integral of the envelope |p^k f|, the scale for the stopping test
    envelope = max(float(np.sum(weights * np.abs(values) * nodes**k)) for k in range(kmax + 1))
    coarse = _oscillatory_sum(values, nodes, weights, b, lm, kmax)
    for _ in range(4):
        panels *= 2
        if panels * PANEL_ORDER > max_nodes:
            raise AccuracyError("oscillatory quadrature exceeded its node budget")
        nodes, weights = _cached_rule(edges, panels)
        fine = _oscillatory_sum(profile(nodes), nodes, weights, b, lm, kmax)
        err = np.abs(fine - coarse).max(axis=0)
        if np.all(err <= 1e-13 * envelope):
            break
        coarse = fine
    return fine, err


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class MomentTriple:
    f0: complex
    f1: complex
    f2: complex
    warning: str = None

    def __iter__(self):
        return iter((self.f0, self.f1, self.f2))

    def scaled(self, lam):
        return MomentTriple(self.f0 * lam, self.f1 * lam, self.f2 * lam)


@dataclass(frozen=True)
class MomentumState:
    """``phi(p) = N (a - p) f(p)`` (family form) or ``phi(p) = N f(p)``."""

    profile: Profile
    a: complex = 0j
    norm_constant: float = 1.0
    units: UnitsContext = field(default_factory=UnitsContext)
    family_factor: bool = True

    def __post_init__(self):
        a = complex(self.a)
        if not (math.isfinite(a.real) and math.isfinite(a.imag)):
            raise ValueError("a must be finite; use family_factor=False for a bare profile")
        object.__setattr__(self, "a", a)
        if self.norm_constant < 0:
            raise ValueError("norm_constant must be non-negative")

    def wavefunction(self):
        """The profile object for ``phi`` itself, normalization included."""
        base = self.profile.times_linear(self.a) if self.family_factor else self.profile
        return base.scaled(self.norm_constant)

    def phi(self, p):
        return self.wavefunction()(p)

    def norm_sq(self):
        nodes, weights = self.wavefunction().smooth_rule()
        return float(np.sum(weights * np.abs(self.phi(nodes)) ** 2))

    def expectation_p2(self):
        phi = self.wavefunction()
        nodes, weights = phi.smooth_rule()
        rho = weights * np.abs(phi(nodes)) ** 2
        return float(np.sum(rho * nodes**2) / np.sum(rho))

    def with_a(self, a):
        return normalize(MomentumState(self.profile, a, 1.0, self.units, self.family_factor))

    def translated(self, x0):
        """State multiplied by ``exp(-i p x0 / hbar)``: shifted by ``x0`` in space."""
        shift = x0 / self.units.hbar
        if not self.family_factor:
            return MomentumState(self.profile.translated(shift), 0j, self.norm_constant, self.units, False)
        return MomentumState(self.wavefunction().translated(shift), 0j, 1.0, self.units, False)

    def to_dict(self):
        return {
            "profile": self.profile.to_dict(),
            "a": [self.a.real, self.a.imag],
            "family_factor": self.family_factor,
            "norm_constant": self.norm_constant,
            "units": self.units.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        """Parse the JSON state schema.

        Accepts ``a`` as ``[re, im]`` or the ``a_re``/``a_im`` pair.  The state
        is normalized unless ``norm_constant`` is given.
        """
        profile = profile_from_dict(data["profile"])
        if "a" in data:
            a = complex(*data["a"]) if isinstance(data["a"], (list, tuple)) else complex(data["a"])
        else:
            a = complex(data.get("a_re", 0.0), data.get("a_im", 0.0))
        units = UnitsContext(**data.get("units", {}))
        state = cls(profile, a, 1.0, units, bool(data.get("family_factor", True)))
        if data.get("norm_constant") is not None:
            return cls(profile, a, float(data["norm_constant"]), units, state.family_factor)
        return normalize(state)


def normalize(state):
    """Return ``state`` rescaled to unit norm on ``(0, inf)``."""
    raw = MomentumState(state.profile, state.a, 1.0, state.units, state.family_factor)
    norm_sq = raw.norm_sq()
    if not norm_sq > 0:
        raise DegenerateStateError("profile has zero norm")
    return MomentumState(state.profile, state.a, 1.0 / math.sqrt(norm_sq), state.units, state.family_factor)


def normalize_profile(profile):
    """Scale ``profile`` to unit L2 norm on the half line."""
    nodes, weights = profile.smooth_rule()
    norm_sq = float(np.sum(weights * np.abs(profile(nodes)) ** 2))
    if not norm_sq > 0:
        raise DegenerateStateError("profile has zero norm")
    return profile.scaled(1.0 / math.sqrt(norm_sq))


def moments(profile, units=NATURAL):
    """``f_n = (2 pi hbar)^(-1/2) int_0^inf p^n f(p) dp`` for n = 0, 1, 2."""
    nodes, weights = profile.smooth_rule()
    values = profile(nodes)
    pref = 1.0 / math.sqrt(2 * math.pi * units.hbar)
    f = [complex(pref * np.sum(weights * nodes**n * values)) for n in range(3)]
    warning = None
    if isinstance(profile, GridSampled):
        peak = np.abs(values).max()
        tail = abs(values[-1]) * (1 + nodes[-1]) ** 3
        if peak > 0 and tail > 1e-6 * peak:
            warning = "profile has not decayed at p_max; moments may be truncated"
            warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return MomentTriple(*f, warning=warning)


def brackets(g, f, n_max=2, rule=None):
    """Mixed matrix elements ``<g| p^n |f>`` for n = 0..n_max (no 2 pi hbar factor)."""
    if rule is None:
        cand = f if f.cutoff() <= g.cutoff() else g
        nodes, weights = cand.smooth_rule(256)
    else:
        nodes, weights = rule
    prod = weights * np.conj(g(nodes)) * f(nodes)
    return np.array([np.sum(prod * nodes**n) for n in range(n_max + 1)])
