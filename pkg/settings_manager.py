# settings_manager.py
import copy
import json
import logging
import os

from constants import (
    DEFAULT_LIMITER_SCHEDULE_FILE, DEFAULT_MODEL_FILE, SETTINGS_FILE, STANDARD_GRAVITY,
)
from utils import resolve_path

logger = logging.getLogger(__name__)


def get_default_settings():
    """Returns a dictionary of default application settings."""
    return {
        "model_file": DEFAULT_MODEL_FILE,
        "limiter_schedule_file": DEFAULT_LIMITER_SCHEDULE_FILE,
        "time_step_s": 0.01,
        "gravity_m_s2": STANDARD_GRAVITY,
        "integrator": "rk4",
        "max_rate_deg_s": 2000.0,
        "max_alpha_deg": 90.0,
        "max_nz_g": 40.0,
        "gains": {"alpha": 2.5, "beta": 1.0, "p": 10.0, "q": 10.0, "r": 5.0},
        "rate_measurement": "true_derivative",
        "differentiator_bandwidth_rad_s": 40.0,
        "differentiator_damping": 0.7,
        "effectiveness_step_deg": 0.1,
        "allocator_tolerance": 1e-10,
        "allocator_max_iterations": 50,
        "iams_shrink_margin": 0.3,
        "lyapunov_gain_scale_per_s": 2.0,
        "guard_hysteresis_s": 0.2,
        "guard_authority_recovery": False,
        "trim_tolerance": 1e-8,
        "trim_max_iterations": 200,
        "stability_settling_fraction": 0.25,
        "stability_growth_ratio": 1.5,
        "stability_rate_floor_deg_s": 5.0,
        "tracking_alpha_tolerance_deg": 2.0,
        "tracking_roll_rate_fraction": 0.15,
        "tracking_roll_rate_floor_deg_s": 10.0,
        "tracking_hold_fraction": 0.5,
        "ams_snapshot_every_n_steps": 0,
        "csv_float_format": "%.10g",
        "log_level": "INFO",
        "last_deps_check_timestamp": 0.0,
        "app_version_at_last_deps_check": "0.0.0",
    }


def _repair_types(loaded, defaults):
    """Replaces values whose type disagrees with the default's."""
    for key, default_value in defaults.items():
        value = loaded.get(key)
        if isinstance(default_value, dict):
            if not isinstance(value, dict):
                loaded[key] = copy.deepcopy(default_value)
            else:
                merged = dict(default_value)
                merged.update(value)
                loaded[key] = _repair_types(merged, default_value)
            continue
        if isinstance(default_value, bool):
            ok = isinstance(value, bool)
        elif isinstance(default_value, (int, float)):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            if ok and isinstance(default_value, int) and not isinstance(default_value, bool):
                ok = float(value).is_integer()
                if ok:
                    loaded[key] = value = int(value)
        else:
            ok = isinstance(value, type(default_value))
        if not ok:
            logger.warning("Setting '%s' has invalid value %r; using default %r", key, value, default_value)
            loaded[key] = copy.deepcopy(default_value)
    return loaded


def _config_error(message):
    # Deferred: the dependency check loads settings before numpy is known to exist.
    from flight_elements.errors import ConfigError

    return ConfigError(message)


def load_settings(path=None):
    """Loads settings, using defaults if the default file is missing or invalid.

    An explicitly requested file that cannot be read raises ConfigError.
    """
    explicit = path is not None
    settings_path = resolve_path(path if explicit else SETTINGS_FILE)
    defaults = get_default_settings()
    try:
        if os.path.exists(settings_path):
            with open(settings_path, "r", encoding="utf-8") as f:
                loaded_settings = json.load(f)
            if not isinstance(loaded_settings, dict):
                raise ValueError("top level must be an object")

            # Update loaded settings with any new default keys
            for key, default_value in defaults.items():
                if key not in loaded_settings:
                    loaded_settings[key] = default_value
            return _repair_types(loaded_settings, defaults)
        if explicit:
            raise _config_error(f"Settings file '{settings_path}' does not exist")
        return defaults
    except (json.JSONDecodeError, ValueError, OSError) as e:
        if explicit:
            raise _config_error(f"Error loading settings from {settings_path}: {e}") from e
        logger.warning("Error loading settings from %s: %s. Using defaults.", settings_path, e)
        return defaults


def save_settings(settings_data, path=None):
    """Saves the provided settings data to the settings file."""
    settings_path = resolve_path(path or SETTINGS_FILE)
    try:
        with open(settings_path, "w", encoding="utf-8") as f:
            json.dump(settings_data, f, indent=4)
        return True
    except OSError as e:
        logger.error("Error saving settings to %s: %s", settings_path, e)
        return False


# --- Typed Views ---

def build_sim_config(settings, duration=10.0):
    from flight_elements.sim_core import SimConfig

    return SimConfig(
        dt=float(settings["time_step_s"]),
        duration=duration,
        integrator=settings["integrator"],
        gravity=float(settings["gravity_m_s2"]),
        max_rate_deg_s=float(settings["max_rate_deg_s"]),
        max_alpha_deg=float(settings["max_alpha_deg"]),
        max_nz_g=float(settings["max_nz_g"]),
    )


def build_gains(settings):
    from flight_elements.errors import ConfigError
    from flight_elements.indi_control import ControllerGains

    try:
        return ControllerGains(**{k: float(v) for k, v in settings["gains"].items()})
    except TypeError as e:
        raise ConfigError(f"Invalid controller gains: {e}") from e


def build_guard_settings(settings):
    from flight_elements.loc_guard import GuardSettings

    return GuardSettings(
        shrink_margin=float(settings["iams_shrink_margin"]),
        lyapunov_gain_scale=float(settings["lyapunov_gain_scale_per_s"]),
        hysteresis_s=float(settings["guard_hysteresis_s"]),
        authority_recovery=bool(settings["guard_authority_recovery"]),
    )


def build_run_settings(settings):
    """All numerical settings of a closed-loop run."""
    from flight_elements.harness import RunSettings, StabilityCriteria, TrackingCriteria

    return RunSettings(
        sim=build_sim_config(settings),
        gains=build_gains(settings),
        guard=build_guard_settings(settings),
        stability=StabilityCriteria(
            settling_fraction=float(settings["stability_settling_fraction"]),
            growth_ratio=float(settings["stability_growth_ratio"]),
            rate_floor_deg_s=float(settings["stability_rate_floor_deg_s"]),
        ),
        tracking=TrackingCriteria(
            alpha_tolerance_deg=float(settings["tracking_alpha_tolerance_deg"]),
            roll_rate_fraction=float(settings["tracking_roll_rate_fraction"]),
            roll_rate_floor_deg_s=float(settings["tracking_roll_rate_floor_deg_s"]),
            hold_fraction=float(settings["tracking_hold_fraction"]),
        ),
        rate_measurement=settings["rate_measurement"],
        differentiator_bandwidth=float(settings["differentiator_bandwidth_rad_s"]),
        differentiator_damping=float(settings["differentiator_damping"]),
        effectiveness_step_deg=float(settings["effectiveness_step_deg"]),
        allocator_tolerance=float(settings["allocator_tolerance"]),
        allocator_max_iterations=int(settings["allocator_max_iterations"]),
        trim_tolerance=float(settings["trim_tolerance"]),
        trim_max_iterations=int(settings["trim_max_iterations"]),
        ams_snapshot_every_n_steps=int(settings["ams_snapshot_every_n_steps"]),
    )
