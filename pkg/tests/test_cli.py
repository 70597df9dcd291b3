import csv
import json
import os

import pytest

from riccilab import cli
from riccilab.config import parse_config
from riccilab.errors import ConfigError, ExtinctionReached
from riccilab.report import ENERGY_HEADER, NO_CHECKS, Report, summary_document


def run(tmp_path, *argv, config=None):
    args = list(argv)
    if config is not None:
        path = tmp_path / "scenario.ini"
        path.write_text(config)
        args += ["--config", str(path)]
    return cli.main(args)


def read_tree(root):
    out = {}
    for name in sorted(os.listdir(root)):
        with open(os.path.join(root, name), "rb") as fh:
            out[name] = fh.read()
    return out


# -- configuration -------------------------------------------------------------------------


@pytest.mark.parametrize("text, field", [
    ("scenario = flow\nsigma = 1.5\n", "sigma"),
    ("scenario = flow\nspeed = 2\n", "speed"),
    ("scenario = flow\ndt = 0.1\ndt = 0.2\n", "dt"),
    ("scenario = energy\n", "seed"),
    ("scenario = convergence-study\nseed = 1\nresolutions = 32, 64\n", "resolutions"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.field == field


def test_scenario_mismatch_is_rejected():
    with pytest.raises(ConfigError, match="flow"):
        parse_config("scenario = energy\nseed = 1\n", scenario="flow")


def test_config_error_exits_with_two(tmp_path, capsys):
    assert run(tmp_path, "flow", "--sigma", "1.5", "--out", str(tmp_path / "o")) == cli.EXIT_CONFIG
    assert "sigma" in capsys.readouterr().err


def test_empty_report_is_not_a_pass():
    doc = summary_document([])
    assert doc["status"] == NO_CHECKS and doc["passed"] is False


# -- artifacts --------------------------------------------------------------------------------


def test_energy_tables(tmp_path):
    out = tmp_path / "energy"
    code = run(tmp_path, "energy", "--seed", "3", "--resolution", "32", "--out", str(out),
               config="a = 1\nt_end = 0.04\ndeltas = 1e-3, 1e-4\n")
    assert code == cli.EXIT_OK
    with open(out / "energy_delta_0.001.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == ENERGY_HEADER == ("t", "B_r", "H_r", "K_r", "E_r")
    assert float(rows[1][0]) > 0 and all(float(v) >= 0 for v in rows[1])
    assert (out / "energy.png").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["passed"] and summary["config"]["a"] == 1.0


def test_reruns_are_byte_identical(tmp_path):
    trees = []
    for k in range(3):
        out = tmp_path / f"run{k}"
        assert run(tmp_path, "flow", "--out", str(out), "--resolution", "32") == cli.EXIT_OK
        trees.append(read_tree(out))
    assert trees[0] == trees[1] == trees[2]
    assert "flow_radius.png" in trees[0] and "radius_error.dat" in trees[0]


def test_thread_count_does_not_change_artifacts(tmp_path, monkeypatch):
    trees = []
    for threads in ("1", "2"):
        monkeypatch.setenv("LAB_THREADS", threads)
        out = tmp_path / f"threads{threads}"
        code = run(tmp_path, "verify-identities", "--seed", "4", "--resolution", "32", "--out", str(out),
                   "--no-figures", config="dims = 2\nsamples = 3\n")
        assert code == cli.EXIT_OK
        trees.append(read_tree(out))
    assert trees[0] == trees[1]


def test_uniqueness_of_round_cylinder(tmp_path):
    out = tmp_path / "uniq"
    code = run(tmp_path, "uniqueness", "--out", str(out), "--no-figures",
               config="family = shrinking-cylinder\na = 1\n")
    assert code == cli.EXIT_OK
    with open(out / "uniqueness.csv", newline="") as fh:
        values = [float(r["E_r"]) for r in csv.DictReader(fh)]
    assert max(values) <= 1e-15
    assert all(a > b for a, b in zip(values, values[1:]))


# -- exit codes -----------------------------------------------------------------------------


def test_numerical_breakdown_exits_with_four(tmp_path, monkeypatch):
    def extinct(cfg):
        raise ExtinctionReached(0.1)

    monkeypatch.setattr(cli, "run_scenario", extinct)
    assert run(tmp_path, "flow", "--out", str(tmp_path / "o")) == cli.EXIT_NUMERICAL


def test_failed_check_exits_with_three(tmp_path, monkeypatch, capsys):
    def failing(cfg):
        rep = Report(cfg.scenario)
        rep.check("always-fails", False)
        return rep

    monkeypatch.setattr(cli, "run_scenario", failing)
    out = tmp_path / "o"
    assert run(tmp_path, "flow", "--out", str(out)) == cli.EXIT_CHECK
    assert "FAIL  always-fails" in capsys.readouterr().out
    assert json.loads((out / "summary.json").read_text())["status"] == "fail"


def test_unwritable_output_exits_with_two(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run(tmp_path, "flow", "--out", str(blocker / "sub")) == cli.EXIT_CONFIG
