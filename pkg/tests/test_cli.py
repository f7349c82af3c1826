import json

import numpy as np
import pytest

from dnresilience import gbd
from dnresilience.cli import main

from _fixtures import six_node


@pytest.fixture
def six_file(tmp_path):
    path = tmp_path / "six.json"
    path.write_text(six_node().to_json())
    return str(path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_pf_builtin(capsys):
    code, out, _ = run(capsys, "pf", "--network", "net24")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "node,parent,v_lpf,v_npf,P_lpf,P_npf,Q_lpf,Q_npf,ell"
    assert len(lines) == 25


def test_pf_sag_shifts_linear_voltages(capsys):
    _, base, _ = run(capsys, "pf", "--network", "net24", "--format", "json")
    _, sag, _ = run(capsys, "pf", "--network", "net24", "--dv0", "0.02", "--format", "json")
    a = np.array([n["v_lpf"] for n in json.loads(base)["nodes"]])
    b = np.array([n["v_lpf"] for n in json.loads(sag)["nodes"]])
    assert np.allclose(a - b, 0.02)


def test_malformed_network_file(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    code, out, err = run(capsys, "pf", "--network", str(bad))
    assert code == 2 and out == "" and "parse error" in err


def test_unknown_network(capsys):
    code, _, err = run(capsys, "pf", "--network", "net7")
    assert code == 2 and "net7" in err


def test_operator_json(capsys, six_file):
    code, out, _ = run(capsys, "operator", "--network", six_file, "--attack", "3,5", "--format", "json")
    assert code == 0
    rec = json.loads(out)
    assert rec["attack"] == [3, 5]
    assert rec["breakdown"]["total"] == pytest.approx(rec["loss"], abs=1e-5)


def test_operator_rejects_non_dg_node(capsys, six_file):
    code, _, err = run(capsys, "operator", "--network", six_file, "--attack", "2")
    assert code == 2 and "no DG" in err


def test_gbd_exit_codes(capsys, six_file):
    code, out, _ = run(capsys, "gbd", "--network", six_file, "--target-resilience", "99.5", "--m", "2")
    assert code == 0
    assert out.splitlines()[0] == "target,resilience,iterations,time_s,cardinality"
    code, out, _ = run(capsys, "gbd", "--network", six_file, "--target-resilience", "5")
    assert code == 3 and "Failure" in out
    code, _, _ = run(capsys, "gbd", "--network", six_file, "--target-resilience", "95", "--iter-limit", "1")
    assert code == 4


@pytest.mark.parametrize("extra", [[], ["--budget", "1", "--target-resilience", "90"], ["--m", "9", "--budget", "1"],
                                   ["--target-resilience", "0"], ["--epsilon", "bogus", "--budget", "1"]])
def test_gbd_config_errors(capsys, six_file, extra):
    code, _, err = run(capsys, "gbd", "--network", six_file, *extra)
    assert code == 2 and err.startswith("error")


def test_gbd_budget_matches_brute_force(capsys, six_file):
    code, out, _ = run(capsys, "gbd", "--network", six_file, "--budget", "1", "--format", "json")
    assert code == 0
    rec = json.loads(out)
    net = six_node()
    brute = gbd.brute_force_maxmin(net, 0.0, 1)
    assert rec["attack"] == [net.dg_ids[i] for i in np.flatnonzero(brute.attack)]


def test_cascade_csv_deterministic(capsys, six_file):
    argv = ("cascade", "--network", six_file, "--permutations", "3", "--seed", "7")
    code, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv)
    assert code == 0 and a == b
    lines = a.splitlines()
    assert lines[0] == "k,perm_0,perm_1,perm_2,worst"
    worst = [float(line.split(",")[-1]) for line in lines[1:]]
    assert len(worst) == 3 and worst == sorted(worst)


def test_cascade_curves(capsys, six_file, tmp_path):
    yv = tmp_path / "yv.csv"
    code, out, _ = run(capsys, "cascade", "--network", six_file, "--permutations", "2", "--maxmin",
                       "--yv-out", str(yv))
    assert code == 0
    assert out.splitlines()[0] == "k,resilience_mm,resilience_ad,value_of_response"
    assert yv.read_text().startswith("k,perm_0,perm_1,worst")


def test_cascade_needs_permutations(capsys, six_file):
    code, _, _ = run(capsys, "cascade", "--network", six_file, "--permutations", "0")
    assert code == 2


def test_sweep_targets(capsys, six_file):
    code, out, _ = run(capsys, "sweep", "--network", six_file, "--targets", "99.5,5", "--m", "2")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "target,resilience,iterations,time_s,cardinality"
    assert lines[2].split(",")[1] == "Failure"


def test_sweep_budgets_and_gap(capsys, six_file):
    code, out, _ = run(capsys, "sweep", "--network", six_file, "--budgets", "1,2", "--m-values", "0,2")
    assert code == 0 and len(out.splitlines()) == 5
    code, out, _ = run(capsys, "sweep", "--network", six_file, "--budgets", "1,2,3", "--m-values", "0,1,2",
                       "--gap")
    assert code == 0 and out.splitlines()[0] == "m,gap_pct"


@pytest.mark.parametrize("extra", [["--targets", ""], [], ["--targets", "90", "--budgets", "1"]])
def test_sweep_needs_one_list(capsys, six_file, extra):
    code, _, _ = run(capsys, "sweep", "--network", six_file, *extra)
    assert code == 2


def test_config_file_with_override(capsys, six_file, tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"network": six_file, "budget": 1, "format": "json"}))
    code, out, _ = run(capsys, "gbd", "--config", str(cfg), "--format", "csv")
    assert code == 0 and out.startswith("k,resilience")
    cfg.write_text(json.dumps({"colour": "blue"}))
    code, _, err = run(capsys, "gbd", "--config", str(cfg))
    assert code == 2 and "colour" in err


def test_out_file(capsys, six_file, tmp_path):
    dest = tmp_path / "pf.csv"
    code, out, _ = run(capsys, "pf", "--network", six_file, "--out", str(dest))
    assert code == 0 and out == ""
    assert dest.read_text().startswith("node,parent")
