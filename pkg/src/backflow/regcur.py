"""Regularized current operator and the limit that recovers the exact current.

Replacing ``delta(x)`` by ``|f_s><f_s| / sigma`` turns the current into the
rank-two operator::

    J_reg = (p |f><f| + |f><f| p) / (2 m sigma)

whose nonzero eigenvalues are ``(<p> +- <p^2>^(1/2)) / (2 m sigma)`` with
eigenvectors ``N (<p^2>^(1/2) +- p) f``.

For the interpolated operator ``J_reg(g)`` and ``psi = N (a - p) f`` one
finds, with ``B_n = <g|p^n|f>``::

    <psi|J_reg(g)|psi> = N^2 / (2 m sigma) * condition_value(a, (B_0, B_1, B_2))

As ``sigma -> 0`` a unit-norm Gaussian regulator satisfies
``B_n / sigma^(1/2) -> f_n`` (the moments), so the expectation tends to the
current at the origin ``N^2 condition_value(a, f_n) / 2m``.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .criterion import condition_value, quadratic_form
from .fluxspec import HermitianOperator
from .states import NATURAL, GaussianF, MomentumState, brackets, moments, normalize, normalize_profile

#: ``alpha^2`` making the half-line Gaussian regulator unit-normalized.
ALPHA_SQ = 32 * math.pi


@dataclass(frozen=True)
class Regulator:
    sigma: float
    profile: object
    alpha_effective: float = math.sqrt(ALPHA_SQ)
    units: object = NATURAL


def gaussian_regulator(sigma, units=NATURAL):
    """``f_s(p) = (sigma / 2 pi hbar)^(1/2) exp(-sigma^2 p^2 / alpha^2 hbar^2)`` on ``p > 0``.

    The profile is renormalized on the half line; ``alpha_effective`` is the
    ``alpha`` for which the nominal prefactor already gives unit norm.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    hbar = units.hbar
    alpha = math.sqrt(ALPHA_SQ)
    raw = GaussianF(sigma / (alpha * hbar)).scaled(math.sqrt(sigma / (2 * math.pi * hbar)))
    nodes, weights = raw.smooth_rule()
    norm_sq = float(np.sum(weights * np.abs(raw(nodes)) ** 2))
    # the half-line norm is proportional to alpha at fixed prefactor
    return Regulator(sigma, raw.scaled(1 / math.sqrt(norm_sq)), alpha / norm_sq, units)


@dataclass(frozen=True)
class RegSpectrum:
    lambda_plus: float
    lambda_minus: float
    phi_plus: MomentumState
    phi_minus: MomentumState
    mean_p: float
    rms_p: float
    zero_space_dim: int = None


def _p_moments(profile):
    nodes, weights = profile.smooth_rule()
    rho = weights * np.abs(profile(nodes)) ** 2
    total = float(rho.sum())
    return float(np.sum(rho * nodes)) / total, float(np.sum(rho * nodes**2)) / total


def reg_spectrum(reg):
    """Closed-form nonzero eigenpairs of the regularized current."""
    units = reg.units
    mean, second = _p_moments(reg.profile)
    rms = math.sqrt(second)
    denom = 2 * units.mass * reg.sigma
    # N (-rms - p) f is the positive eigenvector up to an overall sign
    plus = normalize(MomentumState(reg.profile, -rms, units=units))
    minus = normalize(MomentumState(reg.profile, rms, units=units))
    return RegSpectrum((mean + rms) / denom, (mean - rms) / denom, plus, minus, mean, rms)


def reg_matrix(reg, grid):
    """``sqrt(w_i w_j) f_i conj(f_j) (p_i + p_j) / (2 m sigma)`` on ``grid``."""
    units = reg.units
    p = grid.nodes
    sw = np.sqrt(grid.weights)
    fv = sw * reg.profile(p)
    M = (fv[:, None] * np.conj(fv)[None, :]) * (p[:, None] + p[None, :]) / (2 * units.mass * reg.sigma)
    return HermitianOperator(0.5 * (M + M.conj().T), grid, sw)


def jreg_expectation(psi, g, sigma, units=None):
    """``<psi| (p |g><g| + |g><g| p) / 2 m sigma |psi>``.

    ``g`` is the regulator profile (unit norm).  Evaluated from the brackets
    ``<g|psi>`` and ``<g|p|psi>``.
    """
    units = psi.units if units is None else units
    b0, b1 = brackets(g, psi.wavefunction(), n_max=1)
    return float(np.real(np.conj(b1) * b0)) / (units.mass * sigma)


@dataclass(frozen=True)
class LimitStep:
    step: int
    sigma: float
    a: complex
    expectation: float
    rescaled_expectation: float
    rescaled_moments: tuple


@dataclass(frozen=True)
class LimitTrace:
    profile: object
    a_rule: str
    steps: list = field(default_factory=list)
    degenerate: bool = False
    units: object = NATURAL

    @property
    def final(self):
        return self.steps[-1]

    def final_state(self):
        """Normalized family state ``N (a - p) f`` with the last ``a``."""
        return normalize(MomentumState(self.profile, self.final.a, units=self.units))

    def to_csv(self, stream=None):
        """CSV with columns step, sigma, a_re, a_im, expectation, rescaled_expectation."""
        out = io.StringIO() if stream is None else stream
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["step", "sigma", "a_re", "a_im", "expectation", "rescaled_expectation"])
        for s in self.steps:
            writer.writerow([s.step, *(f"{v:.12g}" for v in (s.sigma, s.a.real, s.a.imag, s.expectation, s.rescaled_expectation))])
        if self.degenerate:
            writer.writerow(["degenerate", "", "", "", "", ""])
        return out.getvalue() if stream is None else None


def _project_inside(a, triple):
    """Nearest point to ``a`` on the disc where the condition is negative.

    The feasible set for ``A > 0`` is the open disc of radius ``sqrt(D) / A``
    around ``conj(B) / A``; we aim for the half-radius disc so the update
    keeps a margin.  Returns ``None`` when no feasible disc exists.
    """
    q = quadratic_form(triple)
    if not (q.A > 0 and q.D > 0):
        return None
    center = q.B.conjugate() / q.A
    radius = 0.5 * math.sqrt(q.D) / q.A
    offset = a - center
    if abs(offset) <= radius:
        return a
    return center + offset * (radius / abs(offset))


def limit_procedure(f, steps=8, a_rule="tracked", sigma0=1.0, units=NATURAL):
    """Interpolate from ``J_reg(f)`` toward the exact current at the origin.

    Step 0 uses ``g = f`` itself (``f`` normalized) with
    ``a = <p^2>_f^(1/2)``, where the family state is the negative
    eigenvector of ``J_reg(f)``.  Step ``s >= 1`` uses the Gaussian regulator
    with ``sigma = sigma0 2^-s``.  ``a_rule="fixed"`` keeps the initial ``a``;
    ``"tracked"`` moves it minimally to stay inside the negativity disc.
    """
    if a_rule not in ("fixed", "tracked"):
        raise ValueError(f"unknown a_rule {a_rule!r}")
    if int(steps) != steps or steps < 1:
        raise ValueError("steps must be a positive integer")
    f = normalize_profile(f)
    mass = units.mass
    a = complex(math.sqrt(_p_moments(f)[1]))
    trace = []
    degenerate = False
    for s in range(int(steps)):
        if s == 0:
            g, sigma = f, sigma0
        else:
            sigma = sigma0 * 2.0**-s
            g = gaussian_regulator(sigma, units).profile
        B = brackets(g, f, n_max=2)
        b = tuple(complex(x) / math.sqrt(sigma) for x in B)
        if a_rule == "tracked" and s > 0:
            moved = _project_inside(a, b)
            if moved is None:
                degenerate = degenerate or quadratic_form(b).D == 0
            else:
                a = moved
        psi = normalize(MomentumState(f, a, units=units))
        raw = jreg_expectation(psi, g, sigma, units)
        rescaled = psi.norm_constant**2 * condition_value(a, b) / (2 * mass)
        trace.append(LimitStep(s, sigma, a, raw, rescaled, b))
    if a_rule == "tracked":
        final = quadratic_form(trace[-1].rescaled_moments)
        degenerate = degenerate or (final.A <= 0 and final.D == 0)
    return LimitTrace(f, a_rule, trace, degenerate, units)


def limit_moments(f, units=NATURAL):
    """Moments ``(2 pi hbar)^(-1/2) int p^n f`` the rescaled brackets approach."""
    return moments(normalize_profile(f), units)
