import json
import re

import pytest

from hiertmle.cli import main


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def sim_dir(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"J": 10, "seed": 3}))
    out = tmp_path / "sim"
    code, _, _ = _run(capsys, "simulate", "--config", cfg, "--out", out)
    assert code == 0
    return out


def test_simulate_writes_long_csv(sim_dir):
    lines = (sim_dir / "data.csv").read_text().splitlines()
    assert lines[0] == "cluster_id,A,Y,W1,W2"
    assert 300 < len(lines) - 1 < 700
    assert "W1 = W" in (sim_dir / "schema.txt").read_text()
    assert json.loads((sim_dir / "manifest.json").read_text())["seed"] == 3


def test_simulate_is_byte_identical(tmp_path, capsys, sim_dir):
    cfg = tmp_path / "sim.json"
    again = tmp_path / "again"
    assert _run(capsys, "simulate", "--config", cfg, "--out", again)[0] == 0
    for name in ("data.csv", "schema.txt", "counterfactuals.csv"):
        assert (again / name).read_bytes() == (sim_dir / name).read_bytes()


def test_malformed_config_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"J": 10, "error_rho": 3}))
    code, _, err = _run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "x")
    assert code == 2 and "error_rho" in err
    cfg.write_text("{not json")
    assert _run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "x")[0] == 2
    assert _run(capsys, "replicate", "--reps", "two", "--out", tmp_path / "x")[0] == 2


TOY = "cluster_id,A,Y\na,1,1\na,1,0\nb,1,1\nc,0,0\nc,0,0\nc,0,1\nd,0,1\nd,0,0\n"


def test_estimate_unadjusted_matches_arithmetic(tmp_path, capsys):
    data = tmp_path / "toy.csv"
    data.write_text(TOY)
    code, out, _ = _run(capsys, "estimate", "--data", data, "--estimators", "unadjusted", "--out", tmp_path / "o")
    assert code == 0
    res = json.loads((tmp_path / "o" / "result.json").read_text())["results"][0]
    # Treated Y^c = (1/2, 1), control Y^c = (1/3, 1/2).
    assert res["ate"] == pytest.approx(0.75 - 5 / 12, abs=1e-12)
    assert re.search(r"unadjusted: -?\d+\.\d% \(95% CI: -?\d+\.\d%, -?\d+\.\d%\)", out)


def test_estimate_all_estimators_on_simulated_data(sim_dir, tmp_path, capsys):
    names = "unadjusted,iptw,gcomp,tmle-ia,tmle-ib,tmle-ii,adaptive-prespec"
    code, out, _ = _run(
        capsys, "estimate", "--data", sim_dir / "data.csv", "--schema", sim_dir / "schema.txt",
        "--estimators", names, "--out", tmp_path / "est",
    )
    assert code == 0
    results = json.loads((tmp_path / "est" / "result.json").read_text())["results"]
    assert [r["estimator"] for r in results] == names.split(",")


def test_estimate_config_errors(sim_dir, tmp_path, capsys):
    conf = tmp_path / "est.json"
    conf.write_text(json.dumps({"q_library": [{"level": "cluster", "adjustment": ["nope"]}]}))
    args = ["estimate", "--data", sim_dir / "data.csv", "--schema", sim_dir / "schema.txt", "--out", tmp_path / "e"]
    code, _, err = _run(capsys, *args, "--config", conf)
    assert code == 2 and "nope" in err
    conf.write_text(json.dumps({"q_library": [{"level": "forest"}]}))
    code, _, err = _run(capsys, *args, "--config", conf)
    assert code == 2 and "forest" in err
    code, _, err = _run(capsys, *args, "--estimators", "magic")
    assert code == 2 and "magic" in err


def test_estimate_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("cluster_id,A,Y\na,1,1\na,0,0\nb,0,1\n")
    assert _run(capsys, "estimate", "--data", bad, "--out", tmp_path / "o")[0] == 3
    assert _run(capsys, "estimate", "--data", tmp_path / "missing.csv", "--out", tmp_path / "o")[0] == 3


def test_estimate_estimation_error(tmp_path, capsys):
    # A covariate that duplicates the exposure makes the outcome design singular.
    data = tmp_path / "d.csv"
    data.write_text("cluster_id,A,Y,E1\na,1,1,1\nb,1,0,1\nc,0,0,0\nd,0,1,0\n")
    schema = tmp_path / "s.txt"
    schema.write_text("E1 = E\n")
    code, _, err = _run(
        capsys, "estimate", "--data", data, "--schema", schema, "--estimators", "tmle-cluster", "--out", tmp_path / "o"
    )
    assert code == 4 and "tmle-cluster" in err


def test_replicate_reports(tmp_path, capsys):
    cfg = tmp_path / "rep.yaml"
    cfg.write_text("J: 10\nsize_mean: 8\nnull_effect: true\ntruth: 0.0\n")
    code, out, _ = _run(capsys, "replicate", "--config", cfg, "--reps", 1, "--threads", 1, "--out", tmp_path / "r")
    assert code == 0
    header = (tmp_path / "r" / "report.csv").read_text().splitlines()[0]
    assert header.split(",")[4] == "type_I"
    body = json.loads((tmp_path / "r" / "report.json").read_text())
    assert all(row["sigma"] == 0.0 for row in body["estimators"])


def test_replicate_byte_identical_across_threads(tmp_path, capsys):
    cfg = tmp_path / "rep.json"
    cfg.write_text(json.dumps({"preset": "calibrated", "J": 12, "size_mean": 10, "population_size": 500}))
    reports = []
    for threads in (1, 2):
        out = tmp_path / f"t{threads}"
        assert _run(capsys, "replicate", "--config", cfg, "--reps", 4, "--threads", threads, "--seed", 8, "--out", out)[0] == 0
        reports.append(((out / "report.csv").read_bytes(), (out / "report.json").read_bytes()))
    assert reports[0] == reports[1]
