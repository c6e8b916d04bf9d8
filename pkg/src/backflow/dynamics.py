"""Free evolution of positive-momentum states: current, flux and P(t).

Everything is built from the two integrals::

    u(t, x) = int_0^inf phi(p) exp(-i p^2 t / 2 m hbar + i p x / hbar) dp
    v(t, x) = int_0^inf p phi(p) exp(...) dp

in terms of which the current is ``J(x, t) = Re(conj(u) v) / (2 pi m hbar)``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .errors import AccuracyError, NotApplicableError
from .states import (
    PANEL_ORDER,
    AnalyticProfile,
    GaussianF,
    MomentumState,
    fourier_integrals,
    normalize,
    panel_rule,
)

#: Bracken-Melloy constant: no positive-momentum state has flux below -C_BM.
C_BM = 0.038452
#: Beyond this many timescales ``method="auto"`` prefers closed forms.
CLOSED_FORM_SWITCH = 10.0
#: Absolute error allowed on a current sample before raising.
CURRENT_TOL = 1e-6


@dataclass(frozen=True)
class CurrentSample:
    t: float
    J: float


@dataclass(frozen=True)
class FluxReport:
    t1: float
    t2: float
    flux: float
    window_found: bool
    fraction_of_cbm: float
    error: float = 0.0


def timescale(state):
    """``2 m hbar gamma0^2`` for the Gaussian family, ``2 m hbar / <p^2>`` otherwise."""
    u = state.units
    if isinstance(state.profile, GaussianF):
        return 2 * u.mass * u.hbar * state.profile.gamma0**2
    return 2 * u.mass * u.hbar / state.expectation_p2()


def _amplitudes(state, t, lam=0.0, method="auto", kmax=1):
    """``int p^k phi exp(-i beta p^2 + i lam p)`` for k <= kmax, broadcast over t and lam."""
    if method not in ("auto", "quadrature", "closed"):
        raise ValueError(f"unknown method {method!r}")
    units = state.units
    t, lam = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(lam, dtype=float))
    beta = t / (2 * units.mass * units.hbar)
    phi = state.wavefunction()
    out = np.full((kmax + 1,) + t.shape, np.nan + 0j)
    err = np.zeros(t.shape)

    if method != "quadrature":
        closed = phi.closed_integrals(beta, kmax, lam)
        if closed is None:
            if method == "closed":
                raise NotApplicableError("no closed form for this profile")
        else:
            use = np.all(np.isfinite(closed), axis=0)
            if method == "auto":
                use &= np.abs(t) > CLOSED_FORM_SWITCH * timescale(state)
            out[:, use] = closed[:, use]
    todo = ~np.all(np.isfinite(out), axis=0)
    if np.any(todo):
        vals, e = fourier_integrals(phi, beta[todo], lam[todo], kmax)
        out[:, todo] = vals
        err[todo] = e
    return out, err


def current_curve(state, t, method="auto", x=0.0):
    """Vectorized ``J(x, t)``; raises :class:`AccuracyError` at the first bad sample."""
    units = state.units
    t_arr = np.asarray(t, dtype=float)
    lam = np.asarray(x, dtype=float) / units.hbar
    (u, v), err = _amplitudes(state, t_arr, lam, method)
    pref = 1.0 / (2 * math.pi * units.mass * units.hbar)
    J = pref * np.real(np.conj(u) * v)
    bound = pref * err * (np.abs(u) + np.abs(v) + err)
    bad = bound > CURRENT_TOL
    if np.any(bad):
        idx = np.flatnonzero(bad.ravel())[0]
        t_bad = float(np.broadcast_to(t_arr, bad.shape).ravel()[idx])
        raise AccuracyError(f"current quadrature error {bound.ravel()[idx]:.2e} at t={t_bad:g}", t=t_bad, estimate=float(bound.ravel()[idx]))
    return J


def current_at_origin(state, t, method="auto"):
    return CurrentSample(float(t), float(current_curve(state, float(t), method)))


def current_at_x(state, x, t=0.0, method="auto"):
    """``J(x, t)`` (broadcasts over ``x`` and ``t``)."""
    out = current_curve(state, t, method, x=x)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_norm_sq(a, gamma0):
    """``N^2`` normalizing ``N (a - p) exp(-gamma0^2 p^2)`` on the half line."""
    g = gamma0
    inv = a * a * math.sqrt(math.pi / 2) / (2 * g) - a / (2 * g * g) + math.sqrt(math.pi / 2) / (8 * g**3)
    return 1.0 / inv


def gaussian_current_closed_form(a, gamma0, t, units=None):
    """Current at the origin of ``N (a - p) exp(-gamma0^2 p^2)``, real ``a``.

    Uses ``gamma(t) = (gamma0^2 + i t / 2 m hbar)^(1/2)`` (principal branch)::

        J = N^2 / (32 pi m hbar |gamma|^6)
            * [conj(g) (a conj(g) sqrt(pi) - 1) (2 a g - sqrt(pi)) + c.c.]
    """
    if not gamma0 > 0:
        raise ValueError("gamma0 must be positive")
    hbar = 1.0 if units is None else units.hbar
    m = 1.0 if units is None else units.mass
    t = np.asarray(t, dtype=float)
    g = np.sqrt(gamma0**2 + 1j * t / (2 * m * hbar))
    gc = np.conj(g)
    sp = math.sqrt(math.pi)
    core = gc * (a * gc * sp - 1) * (2 * a * g - sp)
    out = gaussian_norm_sq(a, gamma0) / (32 * math.pi * m * hbar * np.abs(g) ** 6) * 2 * np.real(core)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# windows and flux


def negative_window(state, horizon=20.0, samples=2000, method="auto"):
    """Roots of ``J(t)`` bracketing the negative lobe holding the global minimum.

    ``horizon`` is in timescales.  Returns ``None`` when ``J`` never goes
    negative, or the dominant lobe does not close inside the horizon.
    """
    tau = timescale(state)
    t = np.linspace(-horizon * tau, horizon * tau, samples)
    J = current_curve(state, t, method)
    i = int(np.argmin(J))
    if J[i] >= 0:
        return None
    left = np.flatnonzero(J[:i] >= 0)
    right = np.flatnonzero(J[i:] >= 0)
    if left.size == 0 or right.size == 0:
        return None
    lo, hi = left[-1], i + right[0]

    def f(s):
        return float(current_curve(state, s, method))

    xtol = 1e-9 * tau
    t1 = optimize.brentq(f, t[lo], t[lo + 1], xtol=xtol, rtol=4 * np.finfo(float).eps)
    t2 = optimize.brentq(f, t[hi - 1], t[hi], xtol=xtol, rtol=4 * np.finfo(float).eps)
    return t1, t2


def _fraction(value):
    return abs(value) / C_BM if value < 0 else 0.0


def flux(state, t1, t2, method="auto", epsabs=1e-10):
    """``F(t1, t2) = int J dt``; infinite limits are allowed.

    The integral is split at ``0`` and ``+-10`` timescales so each piece sees
    a single regime of the integrand.
    """
    if not t1 <= t2:
        raise ValueError("flux window needs t1 <= t2")
    if t1 == t2:
        return FluxReport(t1, t2, 0.0, True, 0.0)
    tau = timescale(state)
    cuts = [s * tau for s in (-CLOSED_FORM_SWITCH, 0.0, CLOSED_FORM_SWITCH) if t1 < s * tau < t2]
    edges = [t1, *cuts, t2]

    def J(s):
        return float(current_curve(state, s, method))

    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(J, a, b, epsabs=epsabs, epsrel=1e-10, limit=400)
        total += val
        err += e
    if err > CURRENT_TOL:
        raise AccuracyError(f"flux quadrature error {err:.2e} exceeds {CURRENT_TOL:g}", estimate=err)
    return FluxReport(t1, t2, total, True, _fraction(total), err)


def backflow_flux(state, horizon=20.0, method="auto"):
    """Flux over :func:`negative_window`; a zero report when there is none."""
    window = negative_window(state, horizon=horizon, method=method)
    if window is None:
        return FluxReport(math.nan, math.nan, 0.0, False, 0.0)
    return flux(state, *window, method=method)


def family_flux(profile, a, units=None, horizon=20.0):
    """Backflow flux of the normalized family state ``N (a - p) f(p)``."""
    kwargs = {} if units is None else {"units": units}
    return backflow_flux(normalize(MomentumState(profile, a, **kwargs)), horizon)


def scan_flux(profile, a_values, units=None):
    """Backflow flux for each ``a`` in ``a_values`` (one report per value)."""
    return [family_flux(profile, a, units) for a in a_values]


def refine_flux_minimum(profile, lo, hi, units=None, xtol=1e-4):
    """Bounded scalar search for the real ``a`` minimizing the backflow flux."""
    res = optimize.minimize_scalar(
        lambda a: family_flux(profile, a, units).flux,
        bracket=None,
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": xtol},
    )
    return float(res.x), family_flux(profile, float(res.x), units)


# ---------------------------------------------------------------------------
# probability on the left


def probability_left(state, t, method="auto"):
    """Probability ``P(t)`` of finding the particle in ``x < 0``.

    ``method="position"`` integrates ``|psi(x, t)|^2`` over ``[-X, 0]`` and
    adds an asymptotic tail; ``"momentum"`` uses the regular double integral
    ``P = |phi|^2 / 2 + (1/2 pi) int int Im(conj phi_t(k) phi_t(p)) / (p - k)``.
    ``"auto"`` picks the momentum form for grid-sampled states.  The
    position form is good to about 1e-8; its tail expansion stops at
    ``1 / X^3``.
    """
    if method == "auto":
        method = "momentum" if state.wavefunction().native_rule() is not None else "position"
    if method == "position":
        return _probability_position(state, float(t))
    if method == "momentum":
        return _probability_momentum(state, float(t))
    raise ValueError(f"unknown method {method!r}")


def _tail_G(z):
    # int_z^inf exp(-i w) / w^2 dw
    return np.exp(-1j * z) / z - 1j * special.exp1(1j * z)


def _probability_position(state, t, tol=1e-9):
    units = state.units
    beta = t / (2 * units.mass * units.hbar)
    phi = state.wavefunction()
    p_rms = math.sqrt(state.expectation_p2())
    p_cut = phi.cutoff()
    shift = 0.0
    if isinstance(phi, AnalyticProfile):
        shift = max(abs(c.imag) for _, _, c, _ in phi.terms)
    # |psi|^2 varies on the scale of the bulk momenta, not the far tail
    bandwidth = phi.cutoff(rtol=1e-10)
    # past the stationary point of the phase the 1/lambda expansion applies
    lam_max = 40.0 / p_rms + 40.0 * math.sqrt(abs(beta)) + shift
    if beta < 0:
        lam_max += 2 * abs(beta) * bandwidth
    method = "quadrature" if phi.closed_integrals(0.0, 0) is None else "closed"

    def inner(panels):
        nodes, weights = panel_rule([-lam_max, 0.0], panels)
        (amp,), _ = _amplitudes(state, t, nodes, method=method, kmax=0)
        return float(np.sum(weights * np.abs(amp) ** 2)) / (2 * math.pi)

    panels = 4 + int(math.ceil(lam_max * bandwidth / 16.0))
    coarse = inner(panels)
    for _ in range(5):
        panels *= 2
        fine = inner(panels)
        if abs(fine - coarse) <= tol:
            break
        coarse = fine
    else:
        raise AccuracyError(f"position-space integral did not converge at t={t:g}", t=t)

    g0, g1, d2 = phi.taylor0()
    g2 = d2 - 2j * beta * g0
    L = lam_max
    tail = abs(g0) ** 2 / L + (np.conj(g0) * g1).imag / L**2 + (abs(g1) ** 2 - 2 * (np.conj(g0) * g2).real) / (3 * L**3)
    U = phi.upper
    if math.isfinite(U):
        # the jump at the upper edge contributes like a second origin
        edge = np.array([U])
        fU = complex(phi._eval(edge)[0])
        phase = np.exp(-1j * beta * U * U)
        gU = fU * phase
        g1U = (complex(phi.derivative(np.nextafter(edge, 0))[0]) - 2j * beta * U * fU) * phase
        tail += abs(gU) ** 2 / L + (np.conj(gU) * g1U).imag / L**2 + abs(g1U) ** 2 / (3 * L**3)
        tail -= 2 * (np.conj(g0) * gU * U * _tail_G(U * L)).real
    return fine + float(tail) / (2 * math.pi)


def _probability_momentum(state, t, max_nodes=6000):
    units = state.units
    beta = t / (2 * units.mass * units.hbar)
    phi = state.wavefunction()
    rule = phi.native_rule()
    if rule is None:
        end = phi.cutoff(rtol=1e-12)
        panels = 8 + int(math.ceil(2 * abs(beta) * end * end / 16.0))
        if panels * PANEL_ORDER > max_nodes:
            raise AccuracyError(f"momentum-space grid too large at t={t:g}", t=t)
        edges = [0.0, *sorted(b for b in phi.breakpoints if 0 < b < end), end]
        nodes, weights = panel_rule(edges, panels)
    else:
        nodes, weights = rule
        spacing = np.diff(nodes, prepend=0.0)
        if np.any(2 * abs(beta) * nodes * spacing > math.pi):
            raise AccuracyError(f"grid too coarse for the evolution phase at t={t:g}", t=t)
    vals = phi(nodes) * np.exp(-1j * beta * nodes * nodes)
    wv = weights * vals
    num = np.imag(np.conj(wv)[:, None] * wv[None, :])
    diff = nodes[None, :] - nodes[:, None]
    np.fill_diagonal(diff, 1.0)
    kernel = num / diff
    dphi = phi.derivative(nodes)
    raw = phi(nodes)
    diag = np.imag(np.conj(raw) * dphi) - 2 * beta * nodes * np.abs(raw) ** 2
    np.fill_diagonal(kernel, weights * weights * diag)
    half = 0.5 * float(np.sum(weights * np.abs(vals) ** 2))
    return half + float(kernel.sum()) / (2 * math.pi)
