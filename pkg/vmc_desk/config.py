import copy
import json
from pathlib import Path

from django.conf import settings

from .errors import ConfigError


def _merge(base, override, path=''):
    """
    Deep-merge override into a copy of base; keys must already exist in base
    """
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f'{path}.{key}' if path else key
        if key not in merged:
            raise ConfigError(f'Unknown config key "{where}"')
        if isinstance(merged[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f'Config key "{where}" must be an object')
            merged[key] = _merge(merged[key], value, where)
        else:
            merged[key] = value
    return merged


def load_config(path=None, overrides=None):
    """
    Return settings.VMC with the JSON file at `path` and then the
    `overrides` dict merged over it.
    """
    config = copy.deepcopy(settings.VMC)
    if path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f'Config file {path} does not exist')
        try:
            file_config = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f'Config file {path} is not valid JSON: {e}') from e
        if not isinstance(file_config, dict):
            raise ConfigError(f'Config file {path} must hold a JSON object')
        config = _merge(config, file_config)
    if overrides:
        config = _merge(config, overrides)
    return config


def section_kwargs(section, fields):
    """
    Pick the keys of a config section that a dataclass accepts
    """
    return {key: value for key, value in section.items() if key in fields}
