from __future__ import annotations

import csv
import subprocess
import sys

import pytest

from sketchspan.cli import main, read_config, space_ratio, trial_seed

PATH_DELETE = "n 5\n+ 1 2\n+ 2 3\n+ 3 4\n- 2 3\n?\n"


def rows(path):
    return list(csv.DictReader(open(path)))


def run(args, env=None):
    return main([str(a) for a in args], env={} if env is None else env)


def test_run_path_delete_stream(tmp_path):
    stream = tmp_path / "s.txt"
    stream.write_text(PATH_DELETE)
    valid = 0
    for seed in range(5):
        out = tmp_path / f"q{seed}.csv"
        code = run(["run", stream, "--seed", seed, "--out", out])
        [row] = rows(out)
        assert row["forest_edge_count"] == "2" and row["component_count"] == "3"
        valid += row["valid"] == "true"
        assert code == (0 if row["valid"] == "true" else 1)
    assert valid >= 4


def test_run_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("n 4\n+ 0 x\n")
    assert run(["run", bad]) == 2
    assert "line 2, column 5" in capsys.readouterr().err
    dup = tmp_path / "dup.txt"
    dup.write_text("n 5\n+ 0 1\n+ 1 0\n")
    assert run(["run", dup]) == 2
    assert run(["run", tmp_path / "missing.txt"]) == 2
    assert run(["run", bad, "--delta", "1.5"]) == 2


def test_run_query_on_empty_graph(tmp_path):
    stream = tmp_path / "e.txt"
    stream.write_text("n 6\n?\n")
    out = tmp_path / "e.csv"
    assert run(["run", stream, "--out", out]) == 0
    [row] = rows(out)
    assert row["forest_edge_count"] == "0" and row["valid"] == "true"


def test_exp_failure_single_trial_and_replay(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["exp", "failure", "--n", 32, "--trials", 1, "--seed", 4, "--out", a]) == 0
    assert run(["exp", "failure", "--n", 32, "--trials", 1, "--seed", 4, "--out", b]) == 0
    assert a.read_bytes() == b.read_bytes()
    data = rows(a)
    trial_rows = [r for r in data if r["trial"] != "summary"]
    assert len(trial_rows) == 1 and data[-1]["trial"] == "summary"
    assert trial_rows[0]["seed"] == str(trial_seed(4, 0))


def test_exp_scaling(tmp_path):
    out = tmp_path / "s.csv"
    assert run(["exp", "scaling", "--n", "16,32,64", "--out", out]) == 0
    data = rows(out)
    assert [int(r["n"]) for r in data] == [16, 32, 64]
    totals = [int(r["total_bits"]) for r in data]
    avgs = [float(r["avg_msg_bits"]) for r in data]
    assert totals == sorted(totals) and avgs == sorted(avgs)
    for r in data:
        assert float(r["avg_msg_bits"]) * int(r["n"]) == int(r["total_bits"])
        assert float(r["ratio"]) == space_ratio(int(r["total_bits"]), int(r["n"]), float(r["delta"]))
    assert run(["exp", "scaling", "--n", "16,x"]) == 2


def test_sim_dist_from_file(tmp_path):
    g = tmp_path / "g.txt"
    g.write_text("n 4\n0 1\n0 2\n0 3\n")
    out = tmp_path / "d.csv"
    assert run(["sim", "dist", "--graph", g, "--delta", "0.1", "--out", out]) == 0
    [row] = rows(out)
    assert row["valid"] == "true" and row["edges"] == "3"
    assert float(row["avg_msg_bits"]) == float(row["max_msg_bits"])


def test_lab_encdec_always_fail(tmp_path):
    out = tmp_path / "e.csv"
    assert run(["lab", "encdec", "--protocol", "fail", "--trials", 100, "--out", out]) == 0
    data = rows(out)
    assert len(data) == 100 and all(r["roundtrip"] == "true" and r["accepted"] == "0" for r in data)


def test_lab_nfold_small(tmp_path):
    out = tmp_path / "n.csv"
    code = run(["lab", "nfold", "--n", 16, "--ur-delta", 2.0 ** -9, "--trials", 3, "--out", out])
    data = rows(out)
    assert len(data) == 3 and code in (0, 1)
    assert all(r["all_correct"] == "true" for r in data if r["valid"] == "true")


def test_lab_dsk_and_size_error(tmp_path, capsys):
    out = tmp_path / "d.csv"
    assert run(["lab", "dsk", "--trials", 5, "--out", out]) == 0
    assert all(r["violations"] == "0" for r in rows(out))
    assert run(["lab", "dsk", "--n", 1000]) == 2
    assert "fifth power" in capsys.readouterr().err
    assert run(["lab", "dsk", "--n", 3 ** 5]) == 2


def test_lab_regime_error_exit_2(capsys):
    assert run(["lab", "encdec", "--c-size", 20, "--trials", 1]) == 2
    assert "alpha" in capsys.readouterr().err


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# lab settings\nn = 32\ntrials = 2\nseed = 9\n")
    assert read_config(cfg) == {"n": "32", "trials": "2", "seed": "9"}
    out = tmp_path / "f.csv"
    assert run(["exp", "failure", "--config", cfg, "--trials", 1, "--out", out]) == 0
    data = rows(out)
    assert len(data) == 2 and data[0]["n"] == "32" and data[0]["seed"] == str(trial_seed(9, 0))
    bad = tmp_path / "bad.cfg"
    bad.write_text("trials 3\n")
    assert run(["exp", "failure", "--config", bad]) == 2


def test_env_seed(tmp_path):
    out = tmp_path / "f.csv"
    assert run(["exp", "failure", "--n", 16, "--trials", 1, "--out", out], env={"SKETCHSPAN_SEED": "12"}) == 0
    assert rows(out)[0]["seed"] == str(trial_seed(12, 0))
    assert run(["exp", "failure", "--n", 16, "--trials", 1], env={"SKETCHSPAN_SEED": "x"}) == 2


def test_usage_errors():
    assert main([]) == 2
    assert main(["lab", "nope"]) == 2
    assert main(["exp", "failure", "--trials", "0"]) == 2
    assert main(["--help"]) == 0


def test_console_script_stdout():
    proc = subprocess.run([sys.executable, "-m", "sketchspan.cli", "lab", "dsk", "--trials", "2"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "trial,seed,n,case,edges,violations"
    assert "structural violations" in proc.stderr
