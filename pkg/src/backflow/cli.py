"""Command-line interface: ``backflow <command> [options]``.

Exit codes: 0 success, 2 input error, 3 quadrature accuracy failure,
4 eigensolver failure.
"""

import argparse
import csv
import io
import json
import math
import sys

import numpy as np

from . import catalog as cat
from .criterion import decide, quadratic_form
from .dynamics import (
    backflow_flux,
    current_at_origin,
    current_curve,
    family_flux,
    probability_left,
    refine_flux_minimum,
    timescale,
)
from .errors import AccuracyError, NotApplicableError, SolverError
from .fluxspec import bracken_melloy_bound, richardson
from .regcur import limit_procedure
from .states import GaussianF, MomentumState, moments

EXIT_OK, EXIT_INPUT, EXIT_ACCURACY, EXIT_SOLVER = 0, 2, 3, 4


class InputError(Exception):
    pass


def _num(x):
    return f"{x:.12g}"


def _positive(kind):
    def parse(text):
        value = kind(text)
        if not value > 0:
            raise argparse.ArgumentTypeError(f"expected a positive value, got {text}")
        return value

    return parse


# ---------------------------------------------------------------------------
# state loading


def load_source(args):
    """``(state, family_a, family_profile)`` from ``--catalog`` or ``--state``.

    The family pair is ``None`` when the state has no family split.
    """
    if args.state and args.catalog:
        raise InputError("give either --state or --catalog, not both")
    if args.catalog:
        kwargs = {"n": args.n} if args.catalog == "penz_numeric" and args.n else {}
        try:
            entry = cat.get(args.catalog, **kwargs)
        except KeyError as exc:
            raise InputError(str(exc.args[0])) from None
        return entry.state, entry.family_a, entry.family_profile
    if args.state:
        try:
            with open(args.state, encoding="utf-8") as fh:
                data = json.load(fh)
            state = MomentumState.from_dict(data)
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"cannot load state {args.state}: {exc}") from None
        if state.family_factor:
            return state, state.a, state.profile
        return state, None, None
    return None, None, None


def _require_state(args):
    state, a, f = load_source(args)
    if state is None:
        raise InputError("a state is required: use --state FILE or --catalog NAME")
    return state, a, f


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_num(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands


def cmd_certify(args):
    state, a, f = _require_state(args)
    report = {}
    if f is not None:
        m = moments(f, state.units)
        q = quadratic_form(m)
        verdict = decide(m)
        report["moments"] = [[z.real, z.imag] for z in m]
        report["quadratic_form"] = {"A": q.A, "B": [q.B.real, q.B.imag], "C": q.C, "D": q.D}
        report["family_a"] = [a.real, a.imag]
        report["verdict"] = verdict.is_backflow
        report["verdict_case"] = verdict.case
        report["optimal_a"] = None if verdict.optimal_a is None else [verdict.optimal_a.real, verdict.optimal_a.imag]
        report["real_window"] = None if verdict.real_window is None else list(verdict.real_window)
    J0 = current_at_origin(state, 0.0).J
    fr = backflow_flux(state)
    report["J0"] = J0
    report["window"] = [fr.t1, fr.t2] if fr.window_found else None
    report["flux"] = fr.flux
    report["fraction_of_cbm"] = fr.fraction_of_cbm
    report["backflow"] = bool(fr.window_found or J0 < 0)
    if args.format == "json":
        _emit(json.dumps(report, indent=2) + "\n", args.out)
        return EXIT_OK
    lines = []
    if f is not None:
        lines.append("moments: " + ", ".join(f"f{i}={_num(z.real)}{z.imag:+.12g}j" for i, z in enumerate(m)))
        lines.append(f"quadratic_form: A={_num(q.A)} B={_num(q.B.real)}{q.B.imag:+.12g}j C={_num(q.C)} D={_num(q.D)}")
        lines.append(f"verdict: {'backflow possible' if verdict.is_backflow else 'no backflow'} ({verdict.case})")
        if verdict.optimal_a is not None:
            lines.append(f"optimal_a: {_num(verdict.optimal_a.real)}{verdict.optimal_a.imag:+.12g}j")
        if verdict.real_window is not None:
            lines.append(f"real_window: {_num(verdict.real_window[0])} {_num(verdict.real_window[1])}")
    else:
        lines.append("family split: none")
    lines.append(f"J0: {_num(J0)}")
    if fr.window_found:
        lines.append(f"negative_window: {_num(fr.t1)} {_num(fr.t2)}")
    else:
        lines.append("negative_window: none")
    lines.append(f"flux: {_num(fr.flux)}")
    lines.append(f"fraction_of_cbm: {_num(fr.fraction_of_cbm)}")
    lines.append(f"backflow: {'yes' if report['backflow'] else 'no'}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _scan_profile(args):
    state, a, f = load_source(args)
    if f is None:
        if state is not None:
            raise InputError("scan needs a family-form state (a - p) f(p)")
        f = GaussianF(1.0)
    return f, state.units if state is not None else None


def cmd_scan(args):
    f, units = _scan_profile(args)
    if args.points < 1:
        raise InputError("scan grid is empty: --points must be at least 1")
    if args.range:
        lo, hi = args.range
    else:
        window = decide(moments(f)).real_window
        if window is None or not all(map(math.isfinite, window)):
            raise InputError("no finite real backflow window; give --range LO HI")
        lo, hi = window
    if not hi > lo:
        raise InputError("--range needs LO < HI")
    grid = np.linspace(lo, hi, args.points) if args.points > 1 else np.array([0.5 * (lo + hi)])
    rows = []
    for im in args.imag:
        for re in grid:
            fr = family_flux(f, complex(re, im), units)
            rows.append((float(re), float(im), fr.flux, fr.t1, fr.t2, fr.fraction_of_cbm))
    real_rows = [r for r in rows if r[1] == 0.0] or rows
    best = min(real_rows, key=lambda r: r[2])
    step = (hi - lo) / max(args.points - 1, 1)
    a_best, fr = refine_flux_minimum(f, max(lo, best[0] - step), min(hi, best[0] + step), units, xtol=args.xtol)
    text = _csv(["a_re", "a_im", "flux", "t1", "t2", "fraction_of_cbm"], rows)
    if args.format == "json":
        payload = {
            "rows": [dict(zip(["a_re", "a_im", "flux", "t1", "t2", "fraction_of_cbm"], r)) for r in rows],
            "argmin": {"a": a_best, "flux": fr.flux, "fraction_of_cbm": fr.fraction_of_cbm},
        }
        _emit(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        _emit(text, args.out)
    sys.stderr.write(f"argmin a={_num(a_best)} flux={_num(fr.flux)} fraction_of_cbm={_num(fr.fraction_of_cbm)}\n")
    return EXIT_OK


def cmd_bm_bound(args):
    ns = args.n_list or ([args.n] if args.n else [256, 512, 1024])
    if any(n < 64 for n in ns):
        raise InputError("--n values must be at least 64")
    window = tuple(args.window) if args.window else (0.0, 1.0)
    if not window[1] > window[0]:
        raise InputError("--window needs t1 < t2")
    estimates, state = [], None
    for n in ns:
        est, state = bracken_melloy_bound(n, args.pmax_scale, window)
        estimates.append(est)
    rows = [(n, e) for n, e in zip(ns, estimates)]
    extrap = richardson(ns, estimates) if len(ns) > 1 else np.array([])
    if args.format == "json":
        payload = {"n": ns, "estimates": estimates, "richardson": extrap.tolist(), "window": list(window)}
        _emit(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        text = _csv(["n", "estimate"], rows)
        if extrap.size:
            text += "".join(f"# richardson {ns[i]}-{ns[i + 1]}: {_num(v)}\n" for i, v in enumerate(extrap))
        _emit(text, args.out)
    if args.export_state:
        with open(args.export_state, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(state.to_dict(), fh)
            fh.write("\n")
    return EXIT_OK


def cmd_curves(args):
    state, _, _ = _require_state(args)
    if args.window:
        t1, t2 = args.window
    else:
        tau = timescale(state)
        t1, t2 = -args.horizon * tau, args.horizon * tau
    if t2 < t1:
        raise InputError("--window needs t1 <= t2")
    t = np.linspace(t1, t2, args.samples) if t2 > t1 else np.array([])
    J = current_curve(state, t) if t.size else np.array([])
    P = np.array([probability_left(state, s) for s in t])
    j_text = _csv(["t", "J"], [(float(a), float(b)) for a, b in zip(t, J)])
    p_text = _csv(["t", "P"], [(float(a), float(b)) for a, b in zip(t, P)])
    if args.out:
        _emit(j_text, f"{args.out}_J.csv")
        _emit(p_text, f"{args.out}_P.csv")
    else:
        sys.stdout.write(j_text + "\n" + p_text)
    return EXIT_OK


def cmd_limit(args):
    state, _, f = load_source(args)
    if f is None:
        if state is not None:
            raise InputError("limit needs a family-form state (a - p) f(p)")
        f = GaussianF(1.0)
    trace = limit_procedure(f, args.steps, args.a_rule, args.sigma0)
    _emit(trace.to_csv(), args.out)
    return EXIT_OK


def cmd_catalog(args):
    if args.format == "json":
        _emit(cat.catalog_json(args.n or 256) + "\n", args.out)
    else:
        _emit("".join(f"{name}\n" for name in cat.BUILDERS), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(prog="backflow", description="Quantum backflow numerics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, state=True):
        if state:
            p.add_argument("--state", help="state JSON file")
            p.add_argument("--catalog", help="catalog entry name")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        p.add_argument("--seed", type=int, default=0, help="seed for randomized runs")
        p.add_argument("--n", type=_positive(int), help="grid size (bm-bound, penz_numeric)")

    p = sub.add_parser("certify", help="certify a state as a backflow state")
    common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("scan", help="backflow flux across the constant a")
    common(p)
    p.add_argument("--range", nargs=2, type=float, metavar=("LO", "HI"))
    p.add_argument("--points", type=int, default=64)
    p.add_argument("--imag", nargs="+", type=float, default=[0.0], help="Im(a) slices")
    p.add_argument("--xtol", type=_positive(float), default=1e-4)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("bm-bound", help="Bracken-Melloy constant from the flux operator")
    common(p, state=False)
    p.add_argument("--n-list", nargs="+", type=int)
    p.add_argument("--pmax-scale", type=_positive(float))
    p.add_argument("--window", nargs=2, type=float, metavar=("T1", "T2"))
    p.add_argument("--export-state", help="write the maximizing state JSON here")
    p.set_defaults(func=cmd_bm_bound)

    p = sub.add_parser("curves", help="J(t) and P(t) tables")
    common(p)
    p.add_argument("--window", nargs=2, type=float, metavar=("T1", "T2"))
    p.add_argument("--horizon", type=float, default=5.0, help="half-width in timescales")
    p.add_argument("--samples", type=_positive(int), default=201)
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("limit", help="regularized-current limit trace")
    common(p)
    p.add_argument("--steps", type=_positive(int), default=8)
    p.add_argument("--a-rule", choices=["fixed", "tracked"], default="tracked")
    p.add_argument("--sigma0", type=_positive(float), default=1.0)
    p.set_defaults(func=cmd_limit)

    p = sub.add_parser("catalog", help="list or export the built-in states")
    common(p, state=False)
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InputError, NotApplicableError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except AccuracyError as exc:
        sys.stderr.write(f"accuracy error: {exc}\n")
        return EXIT_ACCURACY
    except SolverError as exc:
        sys.stderr.write(f"solver error: {exc}\n")
        return EXIT_SOLVER
    except OSError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
