import json

import pytest

from config import ExperimentProfilesManager, RunConfigManager
from utils import ConfigError


def _load(tmp_path, overrides, **kwargs):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(overrides), encoding="utf-8")
    return RunConfigManager(str(path), **kwargs).load()


# ========== Run Config ==========

def test_defaults_validate():
    config = RunConfigManager().load()
    assert config.source == "<defaults>"
    assert config.get("physics.c") == 10.0
    assert config.get("physics.missing", 5) == 5
    assert config.grid["n"] & (config.grid["n"] - 1) == 0
    assert isinstance(config.seed, int)


def test_overrides_and_seed(tmp_path):
    config = _load(tmp_path, {"physics": {"c": 20.0}, "reference": {"strip": {"half_width": 0.15}}},
                   seed_override=7)
    assert config.physics["c"] == 20.0
    assert config.physics["b0"] == 1.0
    assert config.reference["strip"]["half_width"] == 0.15
    assert config.reference["strip"]["direction"] == [1, 0]
    assert config.seed == 7


def test_preset_then_file(tmp_path):
    config = _load(tmp_path, {"grid": {"k_max": 4}}, preset={"grid": {"n": 32, "k_max": 6}})
    assert config.grid == {"n": 32, "k_max": 4}


def test_free_form_control_set(tmp_path):
    omega = {"kind": "strip", "direction": [1, 1], "offset": [0.0, 0.0], "half_width": 0.1}
    config = _load(tmp_path, {"geometry": {"omega": omega}})
    assert config.geometry["omega"] == omega


@pytest.mark.parametrize("overrides, message", [
    ({"physics": {"c_list": [1.0, 2.0, -1.0]}}, "physics.c_list[2]: must be > 0"),
    ({"physics": {"speed": 1.0}}, "physics.speed: unknown key"),
    ({"grid": 5}, "grid: must be an object"),
    ({"grid": {"n": 12}}, "grid.n: must be a power of two"),
    ({"grid": {"n": 16, "k_max": 8}}, "grid.k_max: must be <= n/2 - 1 = 7"),
    ({"physics": {"c": True}}, "physics.c: must be a number"),
    ({"physics": {"lambda": 0}}, "physics.lambda: must be nonzero"),
    ({"geometry": {"r0": 0.3}}, "geometry.r0"),
    ({"time": {"T": 1.0, "dt": 2.0}}, "time.dt: must not exceed the horizon T"),
    ({"control": {"target": "sideways"}}, "control.target"),
    ({"absorption": {"mu_particles": 3}}, "absorption.mu_particles"),
    ({"reference": {"T_parts": [1.0, 2.0]}}, "reference.T_parts"),
    ({"rescale": {"lambda_list": [1.0, 0.0]}}, "rescale.lambda_list[1]: must be nonzero"),
])
def test_invalid_values_name_their_path(tmp_path, overrides, message):
    with pytest.raises(ConfigError) as info:
        _load(tmp_path, overrides)
    assert str(info.value).startswith(message)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        RunConfigManager(str(tmp_path / "absent.json")).load()
    bad = tmp_path / "bad.json"
    bad.write_text("{\"grid\": ", encoding="utf-8")
    with pytest.raises(ConfigError) as info:
        RunConfigManager(str(bad)).load()
    assert "invalid JSON" in str(info.value)
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfigManager(str(listed)).load()


# ========== Presets ==========

def test_presets_file_is_seeded(tmp_path):
    path = tmp_path / "profiles.json"
    profiles = ExperimentProfilesManager(str(path))
    assert path.exists()
    assert profiles.get_active_profile_name("absorb-run") == "Default"
    assert profiles.get_profile("rescale-check") == {"grid": {"n": 16, "k_max": 4}}
    assert profiles.get_profile("rescale-check", "nope") == {}


def test_preset_lifecycle(tmp_path):
    path = str(tmp_path / "profiles.json")
    profiles = ExperimentProfilesManager(path)
    assert profiles.create_profile("maxwell-evolve", "fine", {"grid": {"n": 64, "k_max": 12}})
    assert not profiles.create_profile("maxwell-evolve", "fine")
    assert not profiles.create_profile("maxwell-evolve", "  ")
    assert profiles.switch_profile("maxwell-evolve", "fine")
    assert profiles.rename_profile("maxwell-evolve", "fine", "finer")
    assert profiles.get_active_profile_name("maxwell-evolve") == "finer"
    assert not profiles.rename_profile("maxwell-evolve", "Default", "other")

    reloaded = ExperimentProfilesManager(path)
    assert reloaded.has_profile("maxwell-evolve", "finer")
    assert reloaded.get_profile("maxwell-evolve") == {"grid": {"n": 64, "k_max": 12}}
    assert not reloaded.delete_profile("maxwell-evolve", "Default")
    assert reloaded.delete_profile("maxwell-evolve", "finer")
    assert reloaded.get_active_profile_name("maxwell-evolve") == "Default"
    assert reloaded.get_profile_names("maxwell-evolve") == ["Default"]
    assert reloaded.is_default_profile("Default")
    assert not reloaded.is_default_profile("finer")


def test_broken_presets_file_is_rebuilt(tmp_path):
    path = tmp_path / "profiles.json"
    path.write_text("not json", encoding="utf-8")
    profiles = ExperimentProfilesManager(str(path))
    assert profiles.get_profile_names("check-geometry") == ["Default"]
    assert json.loads(path.read_text(encoding="utf-8"))["check-geometry"]["active_profile"] == "Default"
