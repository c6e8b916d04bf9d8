import json
import subprocess
import sys

import pytest

from backflow import GaussianF, MomentumState, normalize
from backflow.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_certify_text(capsys):
    code, out, _ = run(capsys, "certify", "--catalog", "gaussian_0684")
    assert code == 0
    lines = dict(line.split(": ", 1) for line in out.strip().split("\n"))
    assert lines["backflow"] == "yes"
    assert float(lines["flux"]) == pytest.approx(-0.01573, abs=5e-5)


def test_certify_json_from_state_file(tmp_path, capsys):
    path = tmp_path / "state.json"
    path.write_text(json.dumps(normalize(MomentumState(GaussianF(1.0), 2.0)).to_dict()))
    code, out, _ = run(capsys, "certify", "--state", str(path), "--format", "json")
    assert code == 0
    report = json.loads(out)
    assert report["verdict"] is True  # some a works for this profile
    assert report["backflow"] is False  # but a = 2 is outside the window
    assert report["window"] is None


def test_certify_needs_a_state(capsys):
    code, _, err = run(capsys, "certify")
    assert code == 2 and "state" in err


def test_bad_json_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    code, _, err = run(capsys, "certify", "--state", str(path))
    assert code == 2 and "cannot load" in err


def test_unknown_catalog_exits_2(capsys):
    code, _, err = run(capsys, "certify", "--catalog", "nope")
    assert code == 2 and "known" in err


def test_scan_empty_grid_exits_2(capsys):
    code, _, err = run(capsys, "scan", "--points", "0")
    assert code == 2 and "empty" in err


def test_scan_csv(tmp_path, capsys):
    out = tmp_path / "scan.csv"
    code, _, err = run(capsys, "scan", "--range", "0.6", "0.8", "--points", "5", "--out", str(out))
    assert code == 0
    text = out.read_text()
    rows = text.strip().split("\n")
    assert rows[0] == "a_re,a_im,flux,t1,t2,fraction_of_cbm"
    assert len(rows) == 6 and "\r" not in text
    assert "argmin a=0.684" in err


def test_scan_imaginary_slices(capsys):
    code, out, _ = run(capsys, "scan", "--range", "0.6", "0.8", "--points", "2", "--imag", "0", "0.1", "--format", "json")
    assert code == 0
    data = json.loads(out)
    assert len(data["rows"]) == 4
    assert {r["a_im"] for r in data["rows"]} == {0.0, 0.1}


def test_bm_bound_sequence(tmp_path, capsys):
    state_path = tmp_path / "max.json"
    code, out, _ = run(capsys, "bm-bound", "--n-list", "64", "128", "--export-state", str(state_path))
    assert code == 0
    lines = out.strip().split("\n")
    assert lines[0] == "n,estimate"
    assert lines[-1].startswith("# richardson 64-128")
    saved = json.loads(state_path.read_text())
    assert saved["profile"]["kind"] == "grid"


def test_bm_bound_rejects_small_n(capsys):
    code, _, _ = run(capsys, "bm-bound", "--n-list", "16")
    assert code == 2


def test_bm_bound_solver_failure_exits_4(monkeypatch, capsys):
    from backflow import SolverError, cli

    def broken(*args, **kwargs):
        raise SolverError("no convergence")

    monkeypatch.setattr(cli, "bracken_melloy_bound", broken)
    code, _, err = run(capsys, "bm-bound", "--n-list", "64")
    assert code == 4 and "solver" in err


def test_accuracy_failure_exits_3(monkeypatch, capsys):
    from backflow import AccuracyError, cli

    def broken(*args, **kwargs):
        raise AccuracyError("quadrature did not converge", t=1.0)

    monkeypatch.setattr(cli, "backflow_flux", broken)
    code, _, err = run(capsys, "certify", "--catalog", "eveson")
    assert code == 3 and "accuracy" in err


def test_curves_files(tmp_path, capsys):
    base = tmp_path / "g"
    code, _, _ = run(capsys, "curves", "--catalog", "gaussian_0684", "--window", "-1", "1", "--samples", "11", "--out", str(base))
    assert code == 0
    j = (tmp_path / "g_J.csv").read_text().strip().split("\n")
    p = (tmp_path / "g_P.csv").read_text().strip().split("\n")
    assert j[0] == "t,J" and p[0] == "t,P"
    assert len(j) == len(p) == 12
    # the middle sample is t = 0, inside the backflow window
    assert float(j[6].split(",")[1]) < 0


def test_curves_zero_horizon_is_header_only(capsys):
    code, out, _ = run(capsys, "curves", "--catalog", "gaussian_0684", "--horizon", "0")
    assert code == 0
    assert out == "t,J\n\nt,P\n"


def test_limit_trace(capsys):
    code, out, _ = run(capsys, "limit", "--steps", "3", "--a-rule", "fixed")
    assert code == 0
    assert out.split("\n")[0] == "step,sigma,a_re,a_im,expectation,rescaled_expectation"


def test_catalog_listing(capsys):
    code, out, _ = run(capsys, "catalog")
    assert code == 0 and out.split() == ["gaussian_0684", "bracken_melloy", "eveson", "penz_numeric"]


def test_deterministic_output(capsys):
    first = run(capsys, "certify", "--catalog", "eveson", "--seed", "1")[1]
    second = run(capsys, "certify", "--catalog", "eveson", "--seed", "2")[1]
    assert first == second


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "backflow", "catalog"], capture_output=True, text=True, check=False)
    assert res.returncode == 0 and "eveson" in res.stdout


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["scan", "--points", "many"])
    assert exc.value.code == 2


def test_certify_narrow_packet_is_not_backflow(tmp_path, capsys):
    import math

    from backflow import ExpPoly

    # exp(-4 (p - 3)^2): a packet well inside p > 0 with positive current
    f = ExpPoly(((math.exp(-36.0), 0, -24.0, 4.0),))
    path = tmp_path / "narrow.json"
    path.write_text(json.dumps(normalize(MomentumState(f, 0j, family_factor=False)).to_dict()))
    code, out, _ = run(capsys, "certify", "--state", str(path))
    assert code == 0 and out.strip().endswith("backflow: no")


def test_complex_a_gives_weaker_backflow(capsys):
    code, out, _ = run(capsys, "scan", "--range", "0.6", "0.8", "--points", "5", "--imag", "0.05", "0.2", "--format", "json")
    assert code == 0
    data = json.loads(out)
    assert all(r["flux"] > -0.01573 for r in data["rows"])


def test_penz_probability_curve_increases(tmp_path, capsys):
    base = tmp_path / "pz"
    code, _, _ = run(capsys, "curves", "--catalog", "penz_numeric", "--window", "0.05", "0.95", "--samples", "10", "--out", str(base))
    assert code == 0
    rows = (tmp_path / "pz_P.csv").read_text().strip().split("\n")[1:]
    P = [float(r.split(",")[1]) for r in rows]
    assert all(b > a for a, b in zip(P, P[1:]))


def test_single_step_limit_equals_expectation(capsys):
    from backflow.regcur import jreg_expectation
    from backflow.states import normalize_profile

    code, out, _ = run(capsys, "limit", "--steps", "1")
    assert code == 0
    rows = out.strip().split("\n")
    assert len(rows) == 2
    f = normalize_profile(GaussianF(1.0))
    a = float(rows[1].split(",")[2])
    psi = normalize(MomentumState(f, a))
    assert float(rows[1].split(",")[4]) == pytest.approx(jreg_expectation(psi, f, 1.0), rel=1e-10)
