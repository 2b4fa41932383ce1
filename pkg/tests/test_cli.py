import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from minibatch_ac import checks, cli
from minibatch_ac.checks import CheckResult


def test_version_via_module():
    out = subprocess.run([sys.executable, "-m", "minibatch_ac.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "0.1.0"


def test_oracle_dump_stdout(capsys):
    assert cli.main(["oracle-dump", "--mdp", "two_state_chain"]) == 0
    dump = json.loads(capsys.readouterr().out)
    assert dump["J"] == pytest.approx(5.0)
    assert np.allclose(dump["V"], [5.0, 5.0])
    assert np.allclose(dump["grad_J"], [-1.25, 1.25, 1.25, -1.25])


def test_oracle_dump_file_and_params(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"mdp": {"generator": "random_garnet", "seed": 4,
                                           "params": {"S": 5, "A": 3, "branching": 2}},
                                   "algorithm": {"kind": "td"}}))
    out = tmp_path / "o.json"
    assert cli.main(["oracle-dump", "--config", str(cfg),
                     "--params", ",".join(["0.1"] * 15), "--out", str(out)]) == 0
    dump = json.loads(out.read_text())
    assert len(dump["td_star"]) == 5 and dump["zeta_critic"] == pytest.approx(0.0, abs=1e-20)


def test_oracle_dump_wrong_param_count_is_config_error(capsys):
    assert cli.main(["oracle-dump", "--mdp", "two_state_chain", "--params", "1,2"]) == 1
    assert "config error" in capsys.readouterr().err


def test_generator_without_params_is_config_error():
    assert cli.main(["oracle-dump", "--mdp", "random_garnet"]) == 1


def test_missing_config_file_is_config_error(tmp_path):
    assert cli.main(["run-td", "--config", str(tmp_path / "nope.yaml")]) == 1


def test_kind_mismatch_is_config_error(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"mdp": {"generator": "two_state_chain"},
                                 "algorithm": {"kind": "td"}}))
    assert cli.main(["run-ac", "--config", str(p)]) == 1


def test_bad_mdp_file_is_config_error(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text(json.dumps({"num_states": 2, "num_actions": 1, "discount": 0.9,
                               "transition": [[[0.5, 0.6]], [[1.0, 0.0]]],
                               "reward": [[[0, 0]], [[0, 0]]]}))
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({"mdp": {"file": str(bad)}, "algorithm": {"kind": "td"}}))
    assert cli.main(["run-td", "--config", str(p)]) == 1


def test_run_td_writes_outputs(tmp_path, capsys):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump({
        "name": "td", "mdp": {"generator": "random_garnet",
                              "params": {"S": 4, "A": 2, "branching": 2}, "seed": 1},
        "algorithm": {"kind": "td", "n_outer": 10, "batch": 8},
        "sweep": {"batch": [8, 32]}, "replications": 2,
        "scaling": [{"axis": "batch", "metric": "theta_err_sq", "slope_range": [-5, 5]}]}))
    out = tmp_path / "out"
    assert cli.main(["run-td", "--config", str(p), "--out", str(out), "--trace"]) == 0
    text = capsys.readouterr().out
    assert "slope theta_err_sq vs batch" in text
    assert (out / "results.csv").exists() and (out / "manifest.json").exists()
    assert len(list((out / "traces").iterdir())) == 4


@pytest.mark.parametrize("kind", ["ac", "nac"])
def test_run_actor_defaults_json(tmp_path, kind):
    assert cli.main([f"run-{kind}", "--out", str(tmp_path), "--format", "json", "--seed", "3"]) == 0
    res = json.loads((tmp_path / "results.json").read_text())
    assert res["manifest"]["base_seed"] == 3 and res["manifest"]["kind"] == kind


def test_sweep_requires_config():
    with pytest.raises(SystemExit):
        cli.main(["sweep"])


def _fake(passed):
    def check(seed=0):
        r = CheckResult("x", "fake", 1.0)
        r.add("q", 1.0, "= 1", passed)
        return r
    return check


def test_check_exit_codes(monkeypatch, tmp_path):
    monkeypatch.setattr(checks, "CHECKS", {"1": _fake(True), "2": _fake(False)})
    assert cli.main(["check", "--only", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "check.csv").read_text().splitlines()[0] == \
        "criterion,quantity,value,bound,passed"
    assert cli.main(["check", "--only", "1,2"]) == 2
    assert cli.main(["check", "--only", "42"]) == 1


def test_console_script_help():
    out = subprocess.run(["minibatch-ac", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "oracle-dump" in out.stdout
