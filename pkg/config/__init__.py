from .config import (
    AppInfo, GridDefaults, MaxwellDefaults, ControlDefaults, CharacteristicsDefaults,
    GeometryDefaults, ReferenceDefaults, AbsorptionDefaults, CLIConstants,
    get_default_run_config, schema_of, RUN_CONFIG_KEYS, RUN_CONFIG_SCHEMA, FREE_FORM_KEYS
)


def __getattr__(name):
    # settings/profile managers depend on utils logging; load them lazily
    if name in ('RunConfigManager', 'RunConfig'):
        from . import settings_manager
        return getattr(settings_manager, name)
    if name in ('ExperimentProfilesManager',):
        from . import profiles_manager
        return getattr(profiles_manager, name)
    raise AttributeError(f"module 'config' has no attribute {name!r}")


__all__ = [
    'RunConfigManager', 'RunConfig', 'ExperimentProfilesManager',
    'AppInfo', 'GridDefaults', 'MaxwellDefaults', 'ControlDefaults', 'CharacteristicsDefaults',
    'GeometryDefaults', 'ReferenceDefaults', 'AbsorptionDefaults', 'CLIConstants',
    'get_default_run_config', 'schema_of', 'RUN_CONFIG_KEYS', 'RUN_CONFIG_SCHEMA', 'FREE_FORM_KEYS'
]
