"""
Experiment presets - named run-config overlays stored per subcommand in a
single file.

File structure (profiles.json):
{
    "absorb-run": {
        "active_profile": "Default",
        "profiles": { "Default": { ...overrides... }, ... }
    },
    "approx-sweep": { ... },
    ...
}
"""
import copy
import json
import os
from typing import Any, Dict, List

from utils import get_logger
from .config import CLIConstants

logger = get_logger(__name__)

DEFAULT_PROFILE_NAME = "Default"

# Desk-scale acceptance presets; keys are overlays on the defaults table.
_DEFAULT_PRESETS: Dict[str, Dict[str, Any]] = {
    "check-geometry": {},
    "maxwell-evolve": {"grid": {"n": 32, "k_max": 6}},
    "approx-sweep": {"grid": {"n": 64, "k_max": 8}},
    "control-maxwell": {"grid": {"n": 32, "k_max": 4}},
    "bend-verify": {},
    "reference-build": {"grid": {"n": 32, "k_max": 6}},
    "absorb-run": {"grid": {"n": 32, "k_max": 6}},
    "rescale-check": {"grid": {"n": 16, "k_max": 4}},
}


def get_default_preset(subcommand: str) -> Dict[str, Any]:
    return copy.deepcopy(_DEFAULT_PRESETS.get(subcommand, {}))


class ExperimentProfilesManager:
    """Manages presets for every subcommand in a single file."""

    def __init__(self, profiles_file: str = None):
        self.profiles_file = profiles_file or CLIConstants.PROFILES_FILE
        self.data: Dict[str, Any] = {}
        self._load()

    def _load(self) -> None:
        if os.path.exists(self.profiles_file):
            try:
                with open(self.profiles_file, 'r', encoding='utf-8') as f:
                    self.data = json.load(f)
                logger.info(f"Profiles loaded from {self.profiles_file}")
            except Exception as e:
                logger.error(f"Error loading profiles: {e}", exc_info=True)
                self.data = {}
        if not isinstance(self.data, dict):
            self.data = {}

        changed = False
        for subcommand in CLIConstants.SUBCOMMANDS:
            changed |= self._ensure_defaults(subcommand)
        if changed:
            self._save()

    def _ensure_defaults(self, section: str) -> bool:
        """Ensure a section has proper structure and a default preset."""
        before = json.dumps(self.data.get(section), sort_keys=True)
        if section not in self.data or not isinstance(self.data[section], dict):
            self.data[section] = {}
        entry = self.data[section]
        entry.setdefault("profiles", {})
        entry.setdefault("active_profile", DEFAULT_PROFILE_NAME)
        if DEFAULT_PROFILE_NAME not in entry["profiles"]:
            entry["profiles"][DEFAULT_PROFILE_NAME] = get_default_preset(section)
        if entry["active_profile"] not in entry["profiles"]:
            entry["active_profile"] = DEFAULT_PROFILE_NAME
        return json.dumps(self.data[section], sort_keys=True) != before

    def _save(self) -> None:
        try:
            with open(self.profiles_file, 'w', encoding='utf-8') as f:
                json.dump(self.data, f, indent=CLIConstants.JSON_INDENT, sort_keys=True)
            logger.debug("Profiles saved")
        except Exception as e:
            logger.error(f"Error saving profiles: {e}", exc_info=True)

    # ========== Preset Operations ==========

    def _section(self, subcommand: str) -> Dict[str, Any]:
        if subcommand not in self.data:
            self._ensure_defaults(subcommand)
        return self.data[subcommand]

    def get_profile_names(self, subcommand: str) -> List[str]:
        return list(self._section(subcommand)["profiles"].keys())

    def get_active_profile_name(self, subcommand: str) -> str:
        return self._section(subcommand)["active_profile"]

    def get_profile(self, subcommand: str, profile_name: str = None) -> Dict[str, Any]:
        section = self._section(subcommand)
        name = profile_name or section["active_profile"]
        if name not in section["profiles"]:
            return {}
        return copy.deepcopy(section["profiles"][name])

    def has_profile(self, subcommand: str, profile_name: str) -> bool:
        return profile_name in self._section(subcommand)["profiles"]

    def create_profile(self, subcommand: str, profile_name: str, overrides: Dict[str, Any] = None) -> bool:
        section = self._section(subcommand)
        if not profile_name or not profile_name.strip() or profile_name in section["profiles"]:
            return False
        section["profiles"][profile_name] = copy.deepcopy(overrides) if overrides is not None \
            else self.get_profile(subcommand)
        self._save()
        logger.info(f"{subcommand} profile '{profile_name}' created")
        return True

    def delete_profile(self, subcommand: str, profile_name: str) -> bool:
        section = self._section(subcommand)
        if self.is_default_profile(profile_name) or profile_name not in section["profiles"]:
            return False
        if section["active_profile"] == profile_name:
            section["active_profile"] = DEFAULT_PROFILE_NAME
        del section["profiles"][profile_name]
        self._save()
        logger.info(f"{subcommand} profile '{profile_name}' deleted")
        return True

    def rename_profile(self, subcommand: str, old_name: str, new_name: str) -> bool:
        section = self._section(subcommand)
        if self.is_default_profile(old_name) or old_name not in section["profiles"] or \
           new_name in section["profiles"] or not new_name or not new_name.strip():
            return False
        section["profiles"][new_name] = section["profiles"].pop(old_name)
        if section["active_profile"] == old_name:
            section["active_profile"] = new_name
        self._save()
        logger.info(f"{subcommand} profile renamed from '{old_name}' to '{new_name}'")
        return True

    def switch_profile(self, subcommand: str, profile_name: str) -> bool:
        section = self._section(subcommand)
        if profile_name not in section["profiles"]:
            return False
        section["active_profile"] = profile_name
        self._save()
        logger.info(f"Switched to {subcommand} profile '{profile_name}'")
        return True

    def is_default_profile(self, profile_name: str) -> bool:
        return profile_name == DEFAULT_PROFILE_NAME
