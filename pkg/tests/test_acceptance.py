"""Acceptance criteria 1-11, each reported as one PASS/FAIL line at the end of the run."""

import json
import math
import time

import numpy as np
import pytest
from scipy import optimize

from backflow import GaussianF, MomentumState, moments, normalize
from backflow import catalog as cat
from backflow.cli import main
from backflow.criterion import condition_value, decide, quadratic_form
from backflow.dynamics import (
    C_BM,
    current_at_origin,
    current_curve,
    flux,
    gaussian_current_closed_form,
    probability_left,
    timescale,
)
from backflow.fluxspec import bracken_melloy_bound, eigendecompose, eveson_quadratic_check, nystrom_interpolate, richardson
from backflow.regcur import Regulator, gaussian_regulator, limit_procedure, reg_matrix, reg_spectrum
from backflow.states import ExpPoly, build_grid, normalize_profile

from .conftest import random_profile

pytestmark = pytest.mark.acceptance


def test_c01_gaussian_flux(tmp_path, capsys, record):
    start = time.perf_counter()
    assert main(["scan", "--format", "json"]) == 0
    scan = json.loads(capsys.readouterr().out)
    a_min = scan["argmin"]["a"]
    state_path = tmp_path / "best.json"
    state_path.write_text(json.dumps(normalize(MomentumState(GaussianF(1.0), a_min)).to_dict()))
    assert main(["certify", "--state", str(state_path), "--format", "json"]) == 0
    report = json.loads(capsys.readouterr().out)
    elapsed = time.perf_counter() - start
    ok = (
        abs(report["flux"] + 0.01573) <= 5e-4
        and abs(a_min - 0.684) <= 0.005
        and abs(report["fraction_of_cbm"] - 0.41) <= 0.02
        and report["backflow"]
        and elapsed < 30
    )
    record(1, ok, f"a={a_min:.5f} flux={report['flux']:.6f} fraction={report['fraction_of_cbm']:.4f} time={elapsed:.1f}s")
    assert ok


def test_c02_window_endpoints(record):
    def j0(a):
        return current_at_origin(normalize(MomentumState(GaussianF(1.0), a)), 0.0).J

    lo = optimize.brentq(j0, 0.45, 0.65, xtol=1e-12)
    hi = optimize.brentq(j0, 0.8, 1.0, xtol=1e-12)
    err = max(abs(lo - 1 / math.sqrt(math.pi)), abs(hi - math.sqrt(math.pi) / 2))
    ok = err <= 1e-4 and j0(0.5 * (lo + hi)) < 0
    record(2, ok, f"roots {lo:.8f} {hi:.8f}, max error {err:.1e}")
    assert ok


def test_c03_bracken_melloy_constant(record):
    start = time.perf_counter()
    ns = [256, 512, 1024, 2048]
    estimates = [bracken_melloy_bound(n)[0] for n in ns]
    extrap = richardson(ns, estimates)
    base = bracken_melloy_bound(256, window=(0.0, 1.0))[0]
    scaled = [bracken_melloy_bound(256, window=w)[0] for w in ((0.0, 10.0), (2.0, 2.5))]
    invariance = max(abs(s - base) for s in scaled)
    elapsed = time.perf_counter() - start
    rel = abs(extrap[-1] - C_BM) / C_BM
    ok = 0.030 <= estimates[2] <= 0.0395 and rel <= 0.05 and invariance <= 1e-3 and elapsed < 600
    record(
        3,
        ok,
        f"n=1024 {estimates[2]:.6f}, Richardson {extrap[-1]:.6f} ({100 * rel:.2f}% off), "
        f"window drift {invariance:.1e}, time={elapsed:.0f}s",
    )
    assert ok


def test_c03_maximizing_state_backflow(record):
    # qualitative: the probability on the left rises throughout the window
    estimate, state = bracken_melloy_bound(256)
    fine = nystrom_interpolate(state, -estimate)
    t = np.linspace(0.0, 1.0, 21)
    P = np.array([probability_left(fine, s) for s in t])
    ok = bool(np.all(np.diff(P) > 0))
    record("3b", ok, f"P(t) rises by {P[-1] - P[0]:.6f} over (0, 1); eigenvalue {-estimate:.6f}")
    assert ok


def test_c04_discriminant_identity(rng, record):
    worst = 0.0
    for _ in range(1000):
        f0, f1, f2 = rng.normal(size=3) + 1j * rng.normal(size=3)
        q = quadratic_form((f0, f1, f2))
        lhs = abs(q.B) ** 2 - q.A * q.C
        worst = max(worst, abs(lhs - q.D) / max(q.D, 1e-300))
    ok = worst < 1e-10
    record(4, ok, f"worst relative error {worst:.1e}")
    assert ok


def test_c05_existence(rng, record):
    agree = total = 0
    for _ in range(1000):
        f = random_profile(rng)
        verdict = decide(moments(f))
        if not verdict.is_backflow:
            continue
        total += 1
        state = normalize(MomentumState(f, verdict.witness_a))
        J = current_at_origin(state, 0.0).J
        agree += condition_value(verdict.witness_a, moments(f)) < 0 and J < 0
    ok = total > 0 and agree == total
    record(5, ok, f"{agree}/{total} witnesses confirmed by the dynamics")
    assert ok


def test_c06_closed_form_current(rng, record):
    worst = 0.0
    for _ in range(200):
        a = rng.uniform(-1.0, 3.0)
        t = rng.uniform(-20.0, 20.0)
        state = normalize(MomentumState(GaussianF(1.0), a))
        J = float(current_curve(state, t, method="quadrature"))
        worst = max(worst, abs(J - gaussian_current_closed_form(a, 1.0, t)))
    ok = worst < 1e-8
    record(6, ok, f"worst absolute difference {worst:.1e}")
    assert ok


def test_c07_flux_probability_duality(rng, record):
    worst_dual = worst_total = 0.0
    for _ in range(10):
        f = random_profile(rng)
        state = normalize(MomentumState(f, complex(rng.normal(), rng.normal())))
        tau = timescale(state)
        t1 = rng.uniform(-3, 3) * tau
        t2 = t1 + rng.uniform(0.1, 3) * tau
        dual = probability_left(state, t1) - probability_left(state, t2) - flux(state, t1, t2).flux
        worst_dual = max(worst_dual, abs(dual))
        worst_total = max(worst_total, abs(flux(state, -math.inf, math.inf).flux - 1))
    ok = worst_dual < 1e-4 and worst_total < 1e-3
    record(7, ok, f"worst duality gap {worst_dual:.1e}, worst total-flux error {worst_total:.1e}")
    assert ok


def _regulators(rng):
    regs = [gaussian_regulator(s) for s in np.geomspace(0.1, 10.0, 12)]
    for _ in range(8):
        c = rng.uniform(0.5, 2.0)
        k = int(rng.integers(0, 3))
        regs.append(Regulator(rng.uniform(0.2, 5.0), normalize_profile(ExpPoly(((1.0, k, c, 0.0),)))))
    return regs


def test_c08_regularized_spectrum(rng, record):
    worst = 0.0
    counts = set()
    for reg in _regulators(rng):
        grid = build_grid(640, 1.2 * reg.profile.cutoff(1e-16), "truncated-gauss")
        op = reg_matrix(reg, grid)
        vals = eigendecompose(op).eigenvalues
        counts.add(int(np.sum(np.abs(vals) > 1e-10 * np.linalg.norm(op.entries))))
        spec = reg_spectrum(reg)
        worst = max(worst, abs(vals[0] - spec.lambda_minus) / abs(spec.lambda_minus))
        worst = max(worst, abs(vals[-1] - spec.lambda_plus) / abs(spec.lambda_plus))
    ok = counts == {2} and worst < 1e-8
    record(8, ok, f"nonzero eigenvalue counts {sorted(counts)}, worst relative error {worst:.1e} over 20 regulators")
    assert ok


def test_c09_limit_procedure(record):
    tracked = limit_procedure(GaussianF(1.0), steps=8, a_rule="tracked")
    J0 = current_at_origin(tracked.final_state(), 0.0).J
    rel = abs(tracked.final.rescaled_expectation - J0) / abs(J0)
    fixed = limit_procedure(GaussianF(1.0), steps=8, a_rule="fixed")
    ok = rel < 1e-3 and J0 < 0 and fixed.final.rescaled_expectation >= 0
    record(
        9,
        ok,
        f"tracked final {tracked.final.rescaled_expectation:.7f} vs J(0) {J0:.7f} (rel {rel:.1e}); "
        f"fixed final {fixed.final.rescaled_expectation:.6f}",
    )
    assert ok


def test_c10_eveson_bound(rng, record):
    violations = 0
    margin = math.inf
    states = [e.state for e in cat.catalog(penz_n=128)[:3]]
    for i in range(300):
        if i < 30:
            state = states[i % 3]
        else:
            state = normalize(MomentumState(random_profile(rng), complex(rng.normal(), rng.normal())))
        sigma = float(np.exp(rng.uniform(math.log(0.1), math.log(5.0))))
        lhs, bound = eveson_quadratic_check(state, sigma)
        violations += lhs < bound - 1e-8
        margin = min(margin, lhs - bound)
    ok = violations == 0
    record(10, ok, f"{violations} violations in 300 pairs, smallest margin {margin:.2e}")
    assert ok


def test_c11_catalog(tmp_path, capsys, record):
    bm = cat.bracken_melloy()
    norm_err = abs(bm.state.norm_sq() - 1.0)
    verdicts = {}
    for name in ("bracken_melloy", "eveson"):
        assert main(["certify", "--catalog", name, "--format", "json"]) == 0
        verdicts[name] = json.loads(capsys.readouterr().out)["backflow"]
    ok = norm_err < 1e-10 and all(verdicts.values())
    record(11, ok, f"norm error {norm_err:.1e} with 18/sqrt(35); certified {verdicts}")
    assert ok
