# flight_elements/data_files.py
"""YAML loading for model, schedule, scenario and sweep files."""
import yaml
from packaging.version import InvalidVersion, Version

from utils import resolve_path
from .errors import ConfigError


def load_yaml_file(path, what="file"):
    """Loads a YAML mapping, raising ConfigError with the path on any failure."""
    resolved = resolve_path(path)
    try:
        with open(resolved, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read {what} '{resolved}': {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed {what} '{resolved}': {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{what.capitalize()} '{resolved}' must contain a mapping")
    return data


def check_schema_version(data, supported, what="file", error_cls=ConfigError):
    """Accepts any schema version sharing the major number of ``supported``."""
    raw = data.get("schema_version")
    if raw is None:
        raise error_cls(f"{what} has no schema_version")
    try:
        found = Version(str(raw))
    except InvalidVersion as e:
        raise error_cls(f"{what} has an invalid schema_version '{raw}'") from e
    if found.major != Version(supported).major:
        raise error_cls(f"{what} schema_version {found} is not compatible with {supported}")
    return found


def require_keys(data, keys, what):
    missing = [key for key in keys if key not in data]
    if missing:
        raise ConfigError(f"{what} is missing required keys: {', '.join(missing)}")
