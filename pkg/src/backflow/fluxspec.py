"""Spectrum of the flux operator restricted to positive momenta.

In the momentum basis ``<p|delta(x)|k> = 1 / (2 pi hbar)``, so the current
``J = (p delta(x) + delta(x) p) / 2m`` evolved for a time ``t`` has kernel
``(p + k) exp(i (p^2 - k^2) t / 2 m hbar) / (4 pi m hbar)``.  Integrating over
``t1 <= t <= t2`` with ``T = t2 - t1`` and ``w = (p^2 - k^2) / 2 m hbar``::

    K(p, k) = (p + k) T exp(i w t1) E(w T) / (4 pi m hbar),
    E(theta) = (exp(i theta) - 1) / (i theta)

A Nystrom discretization on nodes ``p_i`` with weights ``w_i`` gives the
Hermitian matrix ``sqrt(w_i) K(p_i, p_j) sqrt(w_j)``, whose eigenvalues
approximate the operator spectrum.  The lowest one tends to ``-c_bm``.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import SolverError
from .states import NATURAL, GridSampled, HalfLineGrid, MomentumState, panel_rule

#: Below this |theta| the kernel uses its Taylor series.
SERIES_THRESHOLD = 1e-6
#: Largest matrix handed to the Jacobi solver under ``method="auto"``.
JACOBI_MAX_DIM = 64
#: Default truncation: p_max = DEFAULT_Q * sqrt(n) in units of sqrt(m hbar / T).
#: Growing p_max like sqrt(n) keeps the node spacing and the truncation error
#: shrinking together.
DEFAULT_Q = 1.25 * math.sqrt(2)


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    """Weight-symmetrized matrix ``sqrt(w_i) K_ij sqrt(w_j)`` on a grid."""

    entries: np.ndarray
    grid: HalfLineGrid
    sqrt_weights: np.ndarray

    @property
    def dim(self):
        return self.entries.shape[0]

    def hermiticity_error(self):
        return float(np.abs(self.entries - self.entries.conj().T).max(initial=0.0))

    def expectation(self, values):
        """``<phi|K|phi>`` for ``phi`` sampled at the grid nodes."""
        vec = self.sqrt_weights * np.asarray(values, dtype=complex)
        return float(np.real(np.vdot(vec, self.entries @ vec)))

    def to_state(self, vector, units=NATURAL):
        """Grid-sampled state from an eigenvector (unit norm under the weights)."""
        values = np.asarray(vector, dtype=complex) / self.sqrt_weights
        profile = GridSampled(self.grid.nodes, self.grid.weights, values)
        norm = math.sqrt(float(np.sum(self.grid.weights * np.abs(values) ** 2)))
        return MomentumState(profile, 0j, 1.0 / norm, units, family_factor=False)


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    sweeps: int = 0


def _phase_factor(theta):
    """``(exp(i theta) - 1) / (i theta)`` without cancellation near zero."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < SERIES_THRESHOLD
    safe = np.where(small, 1.0, theta)
    exact = np.expm1(1j * safe) / (1j * safe)
    series = 1 + 0.5j * theta - theta**2 / 6
    return np.where(small, series, exact)


def flux_kernel(p, k, t1, t2, units=NATURAL):
    """``K(p, k)`` of the positive-momentum flux operator (broadcasts)."""
    m, hbar = units.mass, units.hbar
    T = t2 - t1
    omega = (np.asarray(p) ** 2 - np.asarray(k) ** 2) / (2 * m * hbar)
    return (p + k) * T * np.exp(1j * omega * t1) * _phase_factor(omega * T) / (4 * math.pi * m * hbar)


def flux_matrix(grid, t1, t2, units=NATURAL):
    if not t1 <= t2:
        raise ValueError("flux window needs t1 <= t2")
    p = grid.nodes
    sw = np.sqrt(grid.weights)
    K = flux_kernel(p[:, None], p[None, :], t1, t2, units)
    M = sw[:, None] * K * sw[None, :]
    # exact Hermitian symmetry, independent of rounding in the phases
    M = 0.5 * (M + M.conj().T)
    return HermitianOperator(M, grid, sw)


# ---------------------------------------------------------------------------
# eigensolvers


def jacobi_eigh(M, tol=1e-12, max_sweeps=100):
    """Cyclic Jacobi diagonalization of a complex Hermitian matrix.

    Each off-diagonal ``a_pq = |a_pq| e^{i phi}`` is removed by the phase
    change ``diag(1, e^{-i phi})`` followed by a real plane rotation.
    Returns ``(eigenvalues, eigenvectors, sweeps)`` unsorted.
    """
    A = np.array(M, dtype=complex)
    n = A.shape[0]
    V = np.eye(n, dtype=complex)
    scale = np.linalg.norm(A)
    if scale == 0:
        return np.zeros(n), V, 0

    def off(a):
        # summed directly: ||A||^2 - sum |a_ii|^2 cancels below sqrt(eps) ||A||
        return float(np.linalg.norm(a - np.diag(np.diag(a))))

    for sweep in range(1, max_sweeps + 1):
        for p in range(n - 1):
            for q in range(p + 1, n):
                g = A[p, q]
                mag = abs(g)
                if mag <= 1e-300 or mag < 1e-18 * scale:
                    continue
                phase = g / mag
                tau = (A[q, q].real - A[p, p].real) / (2 * mag)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + math.sqrt(1 + tau * tau))
                c = 1 / math.sqrt(1 + t * t)
                s = t * c
                ph = phase.conjugate()
                # columns: A <- A U with U = diag(1, ph) [[c, s], [-s, c]]
                cp, cq = A[:, p].copy(), A[:, q].copy()
                A[:, p] = c * cp - s * ph * cq
                A[:, q] = s * cp + c * ph * cq
                rp, rq = A[p, :].copy(), A[q, :].copy()
                A[p, :] = c * rp - s * phase * rq
                A[q, :] = s * rp + c * phase * rq
                A[p, q] = A[q, p] = 0.0
                A[p, p] = A[p, p].real
                A[q, q] = A[q, q].real
                vp, vq = V[:, p].copy(), V[:, q].copy()
                V[:, p] = c * vp - s * ph * vq
                V[:, q] = s * vp + c * ph * vq
        if off(A) < tol * scale:
            return np.diag(A).real.copy(), V, sweep
    raise SolverError(f"Jacobi iteration did not converge in {max_sweeps} sweeps", residual=off(A) / scale)


def eigendecompose(op, method="auto"):
    """Full spectrum of a Hermitian operator, ascending.

    ``method`` is ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
    ``JACOBI_MAX_DIM``).  Each eigenvector's first non-negligible component
    is made real and positive.
    """
    M = op.entries if isinstance(op, HermitianOperator) else np.asarray(op, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("eigendecompose needs a square matrix")
    scale = np.linalg.norm(M)
    if np.abs(M - M.conj().T).max(initial=0.0) > 1e-10 * max(scale, 1e-300):
        raise ValueError("matrix is not Hermitian")
    if method == "auto":
        method = "jacobi" if M.shape[0] <= JACOBI_MAX_DIM else "lapack"
    sweeps = 0
    if method == "jacobi":
        vals, vecs, sweeps = jacobi_eigh(M)
    elif method == "lapack":
        try:
            vals, vecs = np.linalg.eigh(M)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"LAPACK eigensolver failed: {exc}") from exc
    else:
        raise ValueError(f"unknown eigensolver {method!r}")
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        big = np.flatnonzero(np.abs(col) > 1e-8 * np.abs(col).max())
        if big.size:
            z = col[big[0]]
            vecs[:, j] = col * (abs(z) / z)
    residuals = np.linalg.norm(M @ vecs - vecs * vals, axis=0)
    if np.any(residuals > 1e-8 * max(scale, 1e-300)):
        raise SolverError("eigenpair residual above tolerance", residual=float(residuals.max()))
    return SpectrumResult(vals, vecs, residuals, sweeps)


# ---------------------------------------------------------------------------
# Bracken-Melloy constant


def _panel_order(n):
    return next((d for d in range(16, 1, -1) if n % d == 0), 1)


def default_pmax_scale(n):
    """Truncation ``p_max / sqrt(4 pi)`` used by :func:`bracken_melloy_bound`."""
    return DEFAULT_Q * math.sqrt(n) / math.sqrt(4 * math.pi)


def bracken_melloy_bound(n, pmax_scale=None, window=(0.0, 1.0), units=NATURAL, method="auto"):
    """Estimate ``c_bm`` as ``-lambda_min`` of an ``n``-node flux matrix.

    Momenta are measured in ``sqrt(m hbar / T)`` so the problem is the same
    for every window length ``T``; the grid is ``n`` Gauss-Legendre nodes on
    ``[0, sqrt(4 pi) pmax_scale]`` in those units.  Returns the estimate and
    the minimizing eigenvector as a grid-sampled state.
    """
    if int(n) != n or n < 64:
        raise ValueError("bracken_melloy_bound needs n >= 64")
    n = int(n)
    t1, t2 = window
    if not t2 > t1:
        raise ValueError("window must have t2 > t1")
    if pmax_scale is None:
        pmax_scale = default_pmax_scale(n)
    if not pmax_scale > 0:
        raise ValueError("pmax_scale must be positive")
    unit_p = math.sqrt(units.mass * units.hbar / (t2 - t1))
    order = _panel_order(n)
    nodes, weights = panel_rule([0.0, pmax_scale * math.sqrt(4 * math.pi)], n // order, order)
    grid = HalfLineGrid(nodes * unit_p, weights * unit_p, pmax_scale * math.sqrt(4 * math.pi) * unit_p, "truncated-gauss")
    op = flux_matrix(grid, t1, t2, units)
    spec = eigendecompose(op, method)
    return float(-spec.eigenvalues[0]), op.to_state(spec.eigenvectors[:, 0], units)


def nystrom_interpolate(state, eigenvalue, window=(0.0, 1.0), refine=4):
    """Resample a flux eigenvector on a ``refine`` times finer rule.

    Uses the Nystrom interpolant ``phi(q) = sum_j w_j K(q, k_j) phi_j / lambda``,
    which solves the integral eigen-equation at every ``q``, not just at the
    nodes.  The finer grid resolves the free evolution over longer times.
    """
    if not eigenvalue:
        raise ValueError("the Nystrom interpolant needs a nonzero eigenvalue")
    coarse = state.wavefunction()
    if coarse.native_rule() is None:
        raise ValueError("nystrom_interpolate expects a grid-sampled state")
    k, w = coarse.native_rule()
    # the weights of a Gauss rule on [0, p_max] sum to p_max
    upper = float(w.sum())
    n = k.size
    order = _panel_order(n)
    nodes, weights = panel_rule([0.0, upper], refine * (n // order), order)
    K = flux_kernel(nodes[:, None], k[None, :], window[0], window[1], state.units)
    values = K @ (w * coarse(k)) / eigenvalue
    profile = GridSampled(nodes, weights, values)
    norm = math.sqrt(float(np.sum(weights * np.abs(values) ** 2)))
    return MomentumState(profile, 0j, 1.0 / norm, state.units, family_factor=False)


def richardson(ns, values, rate=0.5):
    """Pairwise Richardson extrapolation for errors ``~ n^(-rate)``.

    Returns one extrapolated value per consecutive pair.
    """
    ns = np.asarray(ns, dtype=float)
    values = np.asarray(values, dtype=float)
    if ns.size != values.size or ns.size < 2:
        raise ValueError("richardson needs at least two (n, value) pairs")
    r = (ns[1:] / ns[:-1]) ** rate
    return (r * values[1:] - values[:-1]) / (r - 1)


# ---------------------------------------------------------------------------
# smeared current


def eveson_quadratic_check(state, sigma):
    """Gaussian-smeared current at the origin and its lower bound.

    With ``|g(x)|^2`` a unit-mass Gaussian of standard deviation ``sigma``::

        lhs = (1 / 4 pi m hbar) int int conj(phi(k)) phi(p) (p + k)
              exp(-sigma^2 (p - k)^2 / 2 hbar^2) dp dk

    and ``bound = -hbar / (32 pi m sigma^2)``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    units = state.units
    m, hbar = units.mass, units.hbar
    phi = state.wavefunction()
    rule = phi.native_rule()
    if rule is None:
        end = phi.cutoff(rtol=1e-14)
        edges = [0.0, *sorted(b for b in phi.breakpoints if 0 < b < end), end]
        # the Gaussian factor has width hbar / sigma in p - k
        panels = 8 + int(math.ceil(end * sigma / (2 * hbar)))
        nodes, weights = panel_rule(edges, panels)
    else:
        nodes, weights = rule
    wv = weights * phi(nodes)
    P, K = nodes[:, None], nodes[None, :]
    kernel = (P + K) * np.exp(-((sigma * (P - K) / hbar) ** 2) / 2)
    lhs = float(np.real(np.vdot(wv, kernel @ wv))) / (4 * math.pi * m * hbar)
    return lhs, -hbar / (32 * math.pi * m * sigma**2)
