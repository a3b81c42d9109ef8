import json
import subprocess
import sys

import numpy as np
import pytest

from koopman_bilin.cli import dumps, main, parse_grid, parse_schedule
from koopman_bilin.errors import ConfigError
from koopman_bilin.polyfield import example_system, system_to_dict


def run(tmp_path, *argv):
    status = main([*argv, "--out", str(tmp_path)])
    report = json.loads((tmp_path / f"{argv[0]}.json").read_text())
    return status, report


@pytest.fixture
def decoupled(tmp_path):
    path = tmp_path / "lin.json"
    path.write_text(json.dumps({
        "n": 2, "d": 0,
        "drift": [{"component": 1, "exponents": [1, 0], "coeff": -1.0},
                  {"component": 2, "exponents": [0, 1], "coeff": -1.7}],
    }))
    return path


def test_check_linear_decoupled(tmp_path, decoupled):
    status, report = run(tmp_path, "check", "--system", str(decoupled), "--k", "4")
    assert status == 0
    assert report["all_pass"] is True


def test_check_resonant_exit_two(tmp_path):
    status, report = run(tmp_path, "check", "--a", "2", "--u", "-1", "--k", "2")
    assert status == 2
    assert report["all_pass"] is False


def test_linearize_resonant_denominator(tmp_path):
    status, report = run(tmp_path, "linearize", "--a", "2", "--u", "-1", "--k", "2")
    assert status == 2
    assert report["error"]["code"] == "resonant_denominator"
    assert report["error"]["detail"]["witness"] == [2, 0]


def test_linearize_writes_map(tmp_path):
    status, report = run(tmp_path, "linearize", "--a", "2", "--u", "0.1", "--k", "2")
    assert status == 0
    psi = json.loads((tmp_path / "psi.json").read_text())
    coeffs = {tuple(m): re for m, re, _ in psi["psi"][1]}
    assert coeffs[(2, 0)] == pytest.approx(2.1 / 1.1, abs=1e-12)


def test_config_error_exit_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"n": 2,\n "drift": [}')
    status, report = run(tmp_path, "check", "--system", str(bad))
    assert status == 1
    assert report["error"]["code"] == "config_error"
    assert report["error"]["detail"]["line"] == 2


def test_u_length_checked(tmp_path):
    status, report = run(tmp_path, "check", "--u", "0.1,0.2")
    assert status == 1
    assert report["error"]["detail"]["field"] == "u"


def test_system_file_equivalent_to_builtin(tmp_path):
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(system_to_dict(example_system(2.0))))
    _, a = run(tmp_path, "check", "--system", str(path), "--u", "0.3")
    _, b = run(tmp_path, "check", "--a", "2", "--u", "0.3")
    assert a == b


def test_reports_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        assert main(["verify", "--a", "2", "--k", "3", "--samples", "16", "--out", str(d)]) == 0
        outs.append(((d / "verify.json").read_bytes(), (d / "verify.csv").read_bytes()))
    assert outs[0] == outs[1]


def test_resonance_scan(tmp_path):
    status, report = run(tmp_path, "resonance-scan", "--a", "2", "--u-grid", "-2.2:0.9:0.1",
                         "--k", "4", "--tol", "1e-6")
    assert status == 0
    flagged = sorted(round(u[0], 2) for u in report["flagged_u"])
    assert flagged[:4] == [-2.0, -1.0, 0.0, 0.5]
    assert 0.7 in flagged


def test_bilinear_commands(tmp_path):
    status, report = run(tmp_path, "bilinearize", "--a", "1")
    assert status == 0 and report["certificate"]["verdict"] == "isomorphic"
    status, report = run(tmp_path, "simulate-bilinear", "--a", "1", "--x0", "0.5,0.2",
                         "--schedule", "0:0.4;1:-0.3", "--horizon", "3")
    assert status == 0 and report["max_error"] < 1e-6
    lines = (tmp_path / "bilinear_error.csv").read_text().splitlines()
    assert lines[0] == "t,err"
    status, report = run(tmp_path, "bilinearize", "--a", "2")
    assert status == 2
    assert report["error"]["code"] == "certificate_not_isomorphic"


def test_simulate_and_sweep(tmp_path):
    assert run(tmp_path, "simulate", "--x0", "0.5,-0.2", "--u", "0.3")[0] == 0
    assert (tmp_path / "trajectory.csv").read_text().startswith("t,x1,x2\n")
    status, report = run(tmp_path, "sweep", "--a", "2", "--u", "0.2", "--k", "3")
    assert status == 0
    gaps = [r["gap"] for r in report["rows"]]
    assert gaps == sorted(gaps, reverse=True)


def test_gedmd_command(tmp_path):
    status, report = run(tmp_path, "gedmd", "--a", "2", "--u", "0.3", "--monomials", "1,0;0,1;2,0")
    assert status == 0
    mu = sorted(re for re, _ in report["generator_spectrum"])
    np.testing.assert_allclose(mu, [-2.0, -1.0, -0.7], atol=1e-10)


@pytest.mark.parametrize("a", ["1", "2"])
def test_example_runner(tmp_path, a):
    status, report = run(tmp_path, "example-sec5", "--a", a)
    assert status == 0
    assert all(c["pass"] for c in report["checks"])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "koopman_bilin", "check", "--u", "0.3",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "nonresonant" in proc.stdout


def test_dumps_seventeen_digits():
    text = dumps({"x": 0.1, "y": [1, 2.5], "z": float("inf"), "w": None, "b": True})
    data = json.loads(text)
    assert '"x": 0.10000000000000001' in text
    assert data["y"] == [1, 2.5] and data["z"] == "inf" and data["b"] is True


def test_parsers():
    np.testing.assert_allclose(parse_grid("-1:1:0.5"), [-1, -0.5, 0, 0.5, 1])
    assert len(parse_grid("-2.2:0.95:0.01")) == 316
    assert parse_schedule("0:0.4;1:-0.3") == [(0.0, [0.4]), (1.0, [-0.3])]
    with pytest.raises(ConfigError):
        parse_grid("1:0:0.1")
    with pytest.raises(ConfigError):
        parse_schedule("0-0.4")
