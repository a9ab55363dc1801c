import csv
import json
import os

import pytest

from levyldp.harness.cli import main

FAST = ["--set", "run.trajectories=40", "--set", "run.dt=0.05"]


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_tables_and_manifest(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", "--model", "scalar-linear", "--output", str(out), *FAST]) == 0
    rows = _rows(out / "trajectories.csv")
    assert len(rows) == 40 and rows[0]["index"] == "0"
    man = json.loads((out / "manifest.json").read_text())
    assert man["outputs"] == ["moments.csv", "path0.csv", "trajectories.csv"]
    assert man["command"] == "simulate" and man["seed"] == 0
    assert len(man["config_sha256"]) == 64
    assert "numpy" in man["versions"]


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("LEVYLDP_OUTPUT", str(tmp_path / "env"))
    assert main(["skeleton", "--model", "scalar-linear"]) == 0
    assert (tmp_path / "env" / "skeleton.csv").exists()


def test_strict_order_is_byte_identical(tmp_path):
    args = ["simulate", "--model", "linear", "--strict-order", "--seed", "3", *FAST]
    assert main(args + ["--output", str(tmp_path / "a")]) == 0
    assert main(args + ["--output", str(tmp_path / "b")]) == 0
    for name in ("trajectories.csv", "path0.csv", "moments.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_worker_threads_do_not_change_tables(tmp_path):
    base = ["simulate", "--model", "scalar-linear", *FAST]
    assert main(base + ["--output", str(tmp_path / "a")]) == 0
    assert main(base + ["--workers", "4", "--set", "run.trajectories=40",
                        "--output", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "trajectories.csv").read_bytes() == \
        (tmp_path / "b" / "trajectories.csv").read_bytes()


def test_rate_with_oracle(tmp_path):
    out = tmp_path / "rate"
    assert main(["rate", "--model", "scalar-linear", "--target", "XT>=2.0", "--output", str(out)]) == 0
    cost = float(_rows(out / "rate.csv")[0]["cost"])
    oracle = float(_rows(out / "oracle.csv")[0]["cost"])
    assert cost <= oracle + 1e-9 and oracle - cost < 0.01
    assert (out / "control.json").exists()


def test_control_file_round_trip(tmp_path):
    assert main(["rate", "--model", "scalar-linear", "--output", str(tmp_path / "r")]) == 0
    ctl = str(tmp_path / "r" / "control.json")
    assert main(["skeleton", "--model", "scalar-linear", "--control", ctl,
                 "--output", str(tmp_path / "s")]) == 0
    last = _rows(tmp_path / "s" / "skeleton.csv")[-1]
    assert float(last["x0"]) >= 1.5 - 1e-3


def test_check_conditions(tmp_path):
    out = tmp_path / "cc"
    assert main(["check-conditions", "--model", "burgers", "--set", "conditions.samples=100",
                 "--output", str(out)]) == 0
    names = [r["condition"] for r in _rows(out / "conditions.csv")]
    assert "coercivity" in names and "local_monotonicity" in names
    assert _rows(out / "noise_conditions.csv")


def test_skeleton_continuity(tmp_path):
    out = tmp_path / "sk"
    assert main(["skeleton", "--model", "scalar-linear", "--continuity",
                 "--set", "continuity.members=4", "--output", str(out)]) == 0
    assert len(_rows(out / "continuity.csv")) == 4


@pytest.mark.parametrize("argv", [
    ["simulate", "--bogus"],
    ["teleport"],
    ["simulate", "--set", "run.seed=abc"],
    ["simulate", "--set", "nosection.key=1"],
    ["rate", "--target", "XT=>1"],
    ["simulate", "--seed", "-1"],
])
def test_validation_errors_exit_2_without_outputs(tmp_path, argv):
    out = tmp_path / "bad"
    assert main(argv + ["--output", str(out)]) == 2
    assert not out.exists()


def test_malformed_config_file_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[run]\nseed = 1\nflux = 3\n")
    out = tmp_path / "o"
    assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 2
    assert "line 3" in capsys.readouterr().err
    assert not out.exists()
    assert main(["simulate", "--config", str(tmp_path / "missing.ini"), "--output", str(out)]) == 2


def test_numerical_failure_exits_3(tmp_path, capsys):
    # a huge control in a multiplicative model overflows the skeleton
    ctl = tmp_path / "g.json"
    ctl.write_text(json.dumps({"t_knots": [0.0, 1.0], "values": [[1e300]], "atom_cell": [0],
                               "z_edges": None}))
    out = tmp_path / "o"
    code = main(["skeleton", "--model", "scalar-linear", "--control", str(ctl), "--output", str(out)])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
    assert not os.path.exists(out / "manifest.json")
