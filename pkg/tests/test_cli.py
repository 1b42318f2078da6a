import json
import subprocess
import sys

import pytest

from roughslip.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main

SMALL_REF = ["--set", "reference.Nx=64", "--set", "reference.Ny=128"]


def records(run):
    return [json.loads(line) for line in (run / "records.jsonl").read_text().splitlines()]


def test_gen_data_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--k", "100", "--seed", "7", "--out", str(a)]) == EXIT_OK
    assert main(["gen-data", "--k", "100", "--seed", "7", "--out", str(b)]) == EXIT_OK
    assert records(a)[0]["crc64"] == records(b)[0]["crc64"]
    man = json.loads((a / "run.json").read_text())
    assert man["status"] == "ok" and man["seeds"]["dataset"] == 7 and man["outputs"]["dataset"] == "dataset"
    # the manifest alone reproduces the run
    c = tmp_path / "c"
    assert main(["gen-data", "--config", str(a / "run.json"), "--out", str(c)]) == EXIT_OK
    assert records(c)[0]["crc64"] == records(a)[0]["crc64"]


@pytest.fixture(scope="module")
def hmm_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    a, b = root / "bie256", root / "bie128"
    assert main(["hmm-solve", "--backend", "bie", "--J", "256", "--eps", "0.04", "--out", str(a)]) == EXIT_OK
    assert main(["hmm-solve", "--backend", "bie", "--J", "128", "--eps", "0.04", "--out", str(b)]) == EXIT_OK
    return a, b


def test_hmm_solve_record(hmm_runs):
    a, _ = hmm_runs
    rec = json.loads((a / "hmm_result.json").read_text())
    assert rec["converged"] and rec["iterations"] <= 10
    assert len(rec["residuals"]) == rec["iterations"]
    assert len(rec["alphas"][-1]) == 13
    assert json.loads((a / "run.json").read_text())["config"]["hmm"]["J"] == 256


def test_eval_compares_two_runs(hmm_runs, tmp_path):
    a, b = hmm_runs
    out = tmp_path / "eval"
    argv = ["eval", "--run", str(a), "--run", str(b), "--offsets", "2,4,8", "--out", str(out), *SMALL_REF]
    assert main(argv) == EXIT_OK
    recs = [json.loads(line) for line in (out / "error_report.jsonl").read_text().splitlines()]
    assert {r["metric"] for r in recs} == {"e_mdl", "e_cpl", "e_tot", "e_lo", "e_hi"}
    assert sorted({r["delta"] for r in recs}) == pytest.approx([0.08, 0.16, 0.32])
    assert all(r["value"] >= 0 for r in recs)


def test_train_precompute_and_check_theory(tmp_path):
    data = tmp_path / "data"
    assert main(["gen-data", "--k", "12", "--seed", "3", "--out", str(data)]) == EXIT_OK
    model = tmp_path / "model"
    assert main(["train", "--data", str(data), "--epochs", "2", "--set", "fno.d=8", "--set", "fno.L=2",
                 "--out", str(model)]) == EXIT_OK
    assert (model / "model.rsfno").exists() and (model / "history.npz").exists()
    pre = tmp_path / "pre"
    assert main(["precompute", "--backend", "fno", "--model", str(model), "--J", "128", "--n-micro", "3",
                 "--out", str(pre)]) == EXIT_OK
    assert records(pre)[0]["sites"] == 3
    th = tmp_path / "theory"
    assert main(["check-theory", "--trials", "20000", "--out", str(th)]) == EXIT_OK
    assert all(r["passed"] for r in records(th))


def test_bench(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench", "--n-micro", "3", "--out", str(out)]) == EXIT_OK
    rec = records(out)[0]
    assert rec["backend"] == "bie" and {"precompute", "macro", "micro"} <= set(rec)


@pytest.mark.parametrize("argv", [
    ["gen-data", "--bogus"],
    ["frobnicate"],
    [],
    ["gen-data", "--set", "nosection", "--k", "1"],
    ["gen-data", "--set", "mystery.key=1", "--k", "1"],
    ["hmm-solve", "--set", "hmm.tol=0"],
    ["train"],
    ["eval"],
])
def test_validation_failures_exit_1(argv, tmp_path, capsys):
    if argv and argv[0] != "frobnicate":
        argv = [*argv, "--out", str(tmp_path / "r")]
    assert main(argv) == EXIT_INVALID


def test_malformed_config_exits_1(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[hmm\nJ = 3\n")
    assert main(["hmm-solve", "--config", str(cfg), "--out", str(tmp_path / "r")]) == EXIT_INVALID
    missing = tmp_path / "absent.ini"
    assert main(["hmm-solve", "--config", str(missing), "--out", str(tmp_path / "r2")]) == EXIT_INVALID


def test_ini_config_is_applied(tmp_path):
    cfg = tmp_path / "small.ini"
    cfg.write_text("[dataset]\nK = 3\nseed = 5\n")
    out = tmp_path / "r"
    assert main(["gen-data", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
    assert records(out)[0]["K"] == 3


def test_numerical_failure_exits_2(tmp_path):
    out = tmp_path / "r"
    code = main(["hmm-solve", "--n-micro", "3", "--J", "128", "--set", "hmm.max_iter=1", "--out", str(out)])
    assert code == EXIT_NUMERICAL
    assert json.loads((out / "run.json").read_text())["status"].startswith("numerical")


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "roughslip.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
