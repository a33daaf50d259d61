import json
import math

import numpy as np
import pytest

from config import CLIConstants, RunConfigManager
from core import ExperimentRunner, RunReport, exit_code
from core.application import _jsonable
from main import build_parser, main
from utils import ConfigError


def _argv(tmp_path, *extra):
    return [*extra, "--out", str(tmp_path / "out"), "--profiles-file", str(tmp_path / "profiles.json")]


def test_parser_choices():
    parser = build_parser()
    args = parser.parse_args(["absorb-run", "--case", "strip", "--threads", "3"])
    assert args.subcommand == "absorb-run"
    assert args.case == "strip"
    assert args.threads == 3
    assert args.out == "out"
    for bad in (["teleport"], ["absorb-run", "--case", "disk"], ["absorb-run", "--threads", "0"]):
        with pytest.raises(SystemExit):
            parser.parse_args(bad)


def test_malformed_config_exits_with_config_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{", encoding="utf-8")
    assert main(_argv(tmp_path, "check-geometry", "--config", str(bad))) == CLIConstants.EXIT_CONFIG


def test_invalid_value_exits_with_config_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"grid": {"n": 10}}), encoding="utf-8")
    assert main(_argv(tmp_path, "maxwell-evolve", "--config", str(cfg))) == 2


def test_unknown_profile_exits_with_config_code(tmp_path):
    assert main(_argv(tmp_path, "rescale-check", "--profile", "missing")) == 2


def test_jsonable():
    value = {1: np.float64(math.inf), "a": np.array([1, 2]), "b": (np.int32(3), np.bool_(True)), "z": 1 + 2j}
    assert _jsonable(value) == {"1": None, "a": [1, 2], "b": [3, True], "z": [1.0, 2.0]}
    json.dumps(_jsonable({"x": np.array([[0.5, np.nan]])}))


def test_exit_codes():
    report = RunReport("check-geometry", {})
    assert exit_code(report) == 0
    report.add_criterion("gcc", False, 3.0, 2.0)
    assert not report.passed
    assert exit_code(report) == 1
    report.error = {"type": "ConfigError", "message": "grid.n: must be a power of two"}
    assert exit_code(report) == 2
    report.error = {"type": "SteeringError", "message": "residual"}
    assert exit_code(report) == 1


def test_report_serialises(tmp_path):
    report = RunReport("rescale-check", {"seed": 1})
    report.add_criterion("identity", True, np.float64(0.0), 1e-12)
    report.results["rows"] = np.arange(3)
    data = json.loads(json.dumps(report.to_dict()))
    assert data["passed"] is True
    assert data["results"]["rows"] == [0, 1, 2]
    assert data["criteria"]["identity"]["value"] == 0.0


def test_runner_rejects_unknown_subcommand(tmp_path):
    runner = ExperimentRunner(RunConfigManager().load(), str(tmp_path / "out"))
    with pytest.raises(ConfigError):
        runner.run("teleport")
