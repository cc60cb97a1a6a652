import io
import json
import subprocess
import sys

import pytest

from htype.cli import CHECKS, build_parser, main


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out=out)
    return code, out.getvalue()


def test_poly_k2_exact():
    assert run("poly", "k2", "--group", "heisenberg:1", "--t", "1/3") == (0, "2\n")


def test_poly_k2_csv():
    code, text = run("poly", "k2", "--group", "heisenberg:2", "--t", "0,2/9", "--format", "csv")
    assert code == 0
    lines = text.strip().splitlines()
    assert lines[0] == "n,t,k2_exact_num,k2_exact_den,k2_float"
    assert lines[2].startswith("2,2/9,11,7,")


def test_kernel_eval_origin():
    code, text = run("kernel", "eval", "--group", "heisenberg:1", "--t", "1", "--x", "0,0", "--z", "0")
    assert code == 0
    assert float(text) == pytest.approx(0.0625, abs=1e-12)
    # 17 significant digits
    assert len(text.strip().replace(".", "").lstrip("0")) >= 15


def test_group_validate_reports_axiom(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"n": 1, "m": 1, "J": [[[0, 1], [1, 0]]]}))
    code, _ = run("group", "validate", "--file", str(bad))
    assert code == 1
    assert "skew" in capsys.readouterr().err


def test_group_export_roundtrip(tmp_path):
    code, text = run("group", "export", "--group", "quaternionic:1")
    assert code == 0
    path = tmp_path / "q.json"
    path.write_text(text)
    assert run("group", "validate", "--file", str(path))[0] == 0


def test_geodesy_commands():
    code, text = run("geodesy", "dist", "--group", "heisenberg:1", "--x", "0,0", "--z", "1")
    assert code == 0 and float(text) == pytest.approx(2 * 3.141592653589793 ** 0.5)
    code, text = run("geodesy", "phi", "--group", "heisenberg:1", "--u", "1,0", "--eta", "1")
    x = [float(v) for v in text.splitlines()[0].split()[1].split(",")]
    z = text.splitlines()[1].split()[1]
    code, text = run("geodesy", "phi-inv", "--group", "heisenberg:1", "--x", f"{x[0]},{x[1]}",
                     "--z", z)
    assert code == 0
    assert float(text.splitlines()[1].split()[1]) == pytest.approx(1.0, abs=1e-10)
    code, text = run("geodesy", "jacobian", "--group", "heisenberg:1", "--r", "1", "--rho", "3")
    assert code == 0 and float(text) > 0


def test_usage_errors(capsys):
    assert run("kernel", "eval", "--group", "heisenberg:1", "--t", "1", "--x", "0", "--z", "0")[0] == 1
    assert "--x" in capsys.readouterr().err
    assert run("kernel", "eval", "--group", "heisenberg:1", "--t", "1", "--x", "0,0")[0] == 1
    assert run("nonsense")[0] == 1
    assert run("geodesy", "jacobian", "--group", "heisenberg:1", "--r", "1", "--rho", "7")[0] == 1
    assert run("poly", "k2", "--group", "heisenberg:1", "--t", "one")[0] == 1


def test_verify_reports_are_byte_identical(tmp_path):
    paths = [tmp_path / "a.json", tmp_path / "b.json"]
    for p in paths:
        code, summary = run("verify", "projection", "--group", "heisenberg:1", "--seed", "3",
                            "--out", str(p), "--no-timestamp")
        assert code == 0 and summary.startswith("PASS Tgradp")
    assert paths[0].read_bytes() == paths[1].read_bytes()
    doc = json.loads(paths[0].read_text())
    rep = doc["reports"][0]
    assert set(rep) >= {"estimate_id", "grid_spec", "min_ratio", "max_ratio", "argmin",
                        "argmax", "n_points", "failures"}


def test_verify_optimal_and_csv():
    code, text = run("verify", "optimal", "--group", "heisenberg:1", "--format", "csv")
    assert code == 0
    assert text.splitlines()[1].startswith("optimal-constant,upper,True,2,2,")


def test_verify_failure_exit_code(monkeypatch):
    from htype import verification as V

    def broken(G, seed=0, evaluator=None, n_points=50):
        return V.EstimateReport("Tgradp", {}, 1.0, 1.0, {}, {}, 1, [], "residual", 1e-8)

    monkeypatch.setattr(V, "check_projection_identity", broken)
    assert run("verify", "projection", "--group", "heisenberg:1")[0] == 2


def test_every_subcommand_has_help():
    parser = build_parser()
    text = parser.format_help()
    for area in ("group", "kernel", "geodesy", "poly", "verify"):
        assert area in text
    for check in CHECKS:
        assert CHECKS[check]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "htype", "poly", "k2", "--group", "heisenberg:3",
                          "--t", "1/6"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "7/5"
