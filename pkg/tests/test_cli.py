import json
import shutil
from pathlib import Path

import pandas as pd
import pytest
from numpy.testing import assert_allclose

from app.cli import BENCH_COLUMNS, EXIT_INPUT, EXIT_NONCONVERGENCE, EXIT_OK, EXIT_VERIFY, run_cli
from app.config import Settings

SUITE = Path(__file__).resolve().parent.parent / "data" / "suite"


@pytest.fixture
def settings():
    return Settings(_env_file=None, CVHI_THREADS=2)


def _problem(name):
    return str(SUITE / f"{name}.json")


def test_solve_then_verify(tmp_path, settings, capsys):
    out = tmp_path / "result.json"
    assert run_cli(["solve", _problem("coupled_box_1d"), "-o", str(out), "--samples", "50"], settings) == EXIT_OK
    assert "certified coupled_box_1d" in capsys.readouterr().out

    doc = json.loads(out.read_text())
    assert doc["status"] == "certified"
    assert doc["input_digest"].startswith("sha256:")
    assert_allclose(doc["u"], [1.0], atol=1e-6)
    assert_allclose(doc["w"], [-0.5], atol=1e-6)
    assert doc["hypotheses"]["statuses"]["H(A)"] == "pass"
    assert doc["gaps"]["minty_gap1"] is not None

    assert run_cli(["verify", _problem("coupled_box_1d"), str(out)], settings) == EXIT_OK
    assert "certificate ok" in capsys.readouterr().out


def test_tampered_result_fails_verification(tmp_path, settings, capsys):
    out = tmp_path / "result.json"
    assert run_cli(["solve", _problem("coupled_box_1d"), "-o", str(out), "--samples", "50"], settings) == EXIT_OK
    doc = json.loads(out.read_text())

    doc["u"] = [0.9]
    out.write_text(json.dumps(doc))
    capsys.readouterr()
    assert run_cli(["verify", _problem("coupled_box_1d"), str(out)], settings) == EXIT_VERIFY
    assert "certificate failed" in capsys.readouterr().err

    # outside C the certificate is undefined, which is also a failed verification
    doc["u"] = [1.5]
    out.write_text(json.dumps(doc))
    assert run_cli(["verify", _problem("coupled_box_1d"), str(out)], settings) == EXIT_VERIFY


def test_solve_to_stdout(settings, capsys):
    assert run_cli(["solve", _problem("decoupled_box_1d"), "--samples", "50"], settings) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert_allclose(doc["u"], [0.5], atol=1e-6)
    assert_allclose(doc["w"], [-0.25], atol=1e-6)


def test_iteration_cap_writes_the_best_pair(tmp_path, settings, capsys):
    out = tmp_path / "result.json"
    code = run_cli(["solve", _problem("coupled_box_1d"), "--max-outer", "0", "-o", str(out), "--samples", "50"], settings)
    assert code == EXIT_NONCONVERGENCE
    doc = json.loads(out.read_text())
    assert doc["status"] == "nonconvergent"
    assert doc["trace"]["outer_iterations"] == 0
    assert doc["u"] == [0.0]
    assert "no certified pair" in capsys.readouterr().err


def test_malformed_problem_file(tmp_path, settings, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"layout": {"nV": 1, ')
    assert run_cli(["solve", str(bad)], settings) == EXIT_INPUT
    assert "syntax error" in capsys.readouterr().err


def test_usage_errors_exit_with_input_status(settings):
    assert run_cli(["frobnicate"], settings) == EXIT_INPUT
    assert run_cli(["solve"], settings) == EXIT_INPUT
    assert run_cli(["solve", "/nonexistent/problem.json"], settings) == EXIT_INPUT


def test_check_reports_falsified_hypotheses(tmp_path, settings, capsys):
    out = tmp_path / "audit.json"
    code = run_cli(["check", _problem("patho_nonpseudomonotone_1d"), "-o", str(out), "--samples", "100"], settings)
    assert code == EXIT_VERIFY
    doc = json.loads(out.read_text())
    assert doc["falsified"]
    assert doc["statuses"]["H(A)"] == "fail"
    assert "H(A)" in capsys.readouterr().err

    assert run_cli(["check", _problem("coupled_box_1d"), "--samples", "50"], settings) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["passed"]
    assert doc["bound_radius"] == pytest.approx(2.2)


def test_oracle_finds_every_solution(tmp_path, settings):
    out = tmp_path / "oracle.json"
    code = run_cli([
        "oracle", _problem("patho_coupling_dominated_1d"),
        "--radius", "1", "--grid", "0.5", "--accept-tol", "1e-9", "--samples", "50", "-o", str(out),
    ], settings)
    assert code == EXIT_OK
    doc = json.loads(out.read_text())
    assert len(doc["accepted"]) == 3
    assert doc["probes"]["nonempty"] is None
    assert doc["probes"]["passed"]


def test_oracle_grid_budget(settings, capsys):
    code = run_cli(["oracle", _problem("coupled_box_1d"), "--radius", "1", "--grid", "1e-5", "--samples", "20"], settings)
    assert code == EXIT_INPUT
    assert "suggested grid step" in capsys.readouterr().err


def test_gen_writes_seeded_instances(tmp_path, settings):
    out_dir = tmp_path / "gen"
    assert run_cli(["gen", "--count", "2", "--seed", "5", "--dims", "2", "1", "-o", str(out_dir)], settings) == EXIT_OK
    assert sorted(p.name for p in out_dir.iterdir()) == ["random_5.json", "random_6.json"]
    first = (out_dir / "random_5.json").read_text()

    again = tmp_path / "again.json"
    assert run_cli(["gen", "--seed", "5", "--dims", "2", "1", "-o", str(again)], settings) == EXIT_OK
    assert again.read_text() == first

    assert run_cli(["gen", "--count", "2"], settings) == EXIT_INPUT


def test_bench_table(tmp_path, settings):
    src = tmp_path / "suite"
    src.mkdir()
    for name in ("coupled_box_1d", "decoupled_box_1d"):
        shutil.copy(SUITE / f"{name}.json", src)
    csv = tmp_path / "bench.csv"
    assert run_cli(["bench", str(src), "-o", str(csv)], settings) == EXIT_OK

    df = pd.read_csv(csv)
    assert list(df.columns) == BENCH_COLUMNS
    assert list(df["instance"]) == ["coupled_box_1d", "decoupled_box_1d"]
    assert (df["status"] == "certified").all()
    assert df["wall_time"].isna().all()

    again = tmp_path / "again.csv"
    assert run_cli(["bench", str(src), "-o", str(again)], settings) == EXIT_OK
    assert again.read_bytes() == csv.read_bytes()


def test_bench_timing_is_opt_in(tmp_path, settings):
    csv = tmp_path / "bench.csv"
    assert run_cli(["bench", str(SUITE / "coupled_box_1d.json"), "--timing", "-o", str(csv)], settings) == EXIT_OK
    df = pd.read_csv(csv)
    assert (df["wall_time"] > 0).all()


@pytest.mark.slow
@pytest.mark.parametrize("path", sorted(SUITE.glob("*.json")), ids=lambda p: p.stem)
def test_suite_references(tmp_path, settings, path):
    doc = json.loads(path.read_text())
    if "reference" not in doc:
        pytest.skip("no reference solution")
    out = tmp_path / "result.json"
    assert run_cli(["solve", str(path), "-o", str(out), "--samples", "50"], settings) == EXIT_OK
    result = json.loads(out.read_text())
    assert_allclose(result["u"], doc["reference"]["u"], atol=1e-4)
    assert_allclose(result["w"], doc["reference"]["w"], atol=1e-4)
    assert run_cli(["verify", str(path), str(out)], settings) == EXIT_OK


@pytest.mark.slow
def test_bench_random_instances(tmp_path, settings):
    csv = tmp_path / "bench.csv"
    code = run_cli(["bench", "--random", "3", "--dims", "2", "2", "-o", str(csv)], settings)
    assert code == EXIT_OK
    df = pd.read_csv(csv)
    assert list(df["instance"]) == ["random_0", "random_1", "random_2"]
