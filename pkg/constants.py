# constants.py
import os

# --- Application Version ---
APP_VERSION = "1.0.0"

# --- File/Path Constants ---
SETTINGS_FILE = "settings.json"

PROJECT_ROOT = os.path.dirname(os.path.abspath(__file__))

DEFAULT_MODEL_FILE = os.path.join("data", "f16_surrogate.yaml")
DEFAULT_LIMITER_SCHEDULE_FILE = os.path.join("data", "limiter_schedule.yaml")
DEFAULT_OUTPUT_DIR = "runs"

# --- Data File Schemas ---
# Major versions understood by the loaders.
AERO_MODEL_SCHEMA = "1.0"
LIMITER_SCHEDULE_SCHEMA = "1.0"
SCENARIO_SCHEMA = "1.0"
SWEEP_SCHEMA = "1.0"

# --- Physical Constants ---
STANDARD_GRAVITY = 9.80665
ATMOSPHERE_MAX_ALTITUDE_M = 20000.0

# --- Guard Modes ---
GUARD_OFF = "off"
GUARD_LYAPUNOV = "lyapunov"
GUARD_SCHEDULED = "scheduled"
GUARD_MODES = (GUARD_OFF, GUARD_LYAPUNOV, GUARD_SCHEDULED)

# --- Run Outcomes ---
OUTCOME_STABLE = "stable"
OUTCOME_UNSTABLE = "unstable"
OUTCOME_DIVERGED = "diverged"
OUTCOME_GUARD_TERMINATED = "guard-terminated"
OUTCOME_TRIM_FAILED = "trim-failed"
OUTCOME_ERROR = "error"

# --- Time History Columns (CSV order) ---
# Per-surface deflection columns go between the command and allocation groups.
STATE_COLUMNS = (
    "time_s",
    "V_m_s", "alpha_deg", "beta_deg",
    "p_deg_s", "q_deg_s", "r_deg_s",
    "phi_deg", "theta_deg", "psi_deg",
    "north_m", "east_m", "h_m",
    "mach", "nz_g",
)
COMMAND_COLUMNS = (
    "alpha_cmd_deg", "beta_cmd_deg", "p_cmd_deg_s",
    "alpha_cmd_guarded_deg", "p_cmd_guarded_deg_s",
    "q_cmd_deg_s", "r_cmd_deg_s",
)
ALLOCATION_COLUMNS = (
    "tau_c_l", "tau_c_m", "tau_c_n",
    "dtau_l", "dtau_m", "dtau_n",
    "alloc_residual", "alloc_margin", "alloc_status",
)
GUARD_COLUMNS = (
    "loc_risk", "iams_margin", "guard_active", "demand_scale",
    "p_lim_deg_s", "q_lim_deg_s", "r_lim_deg_s", "alpha_lim_deg",
    "p_sat_deg_s", "q_sat_deg_s", "r_sat_deg_s", "alpha_sat_deg",
)

# Allocation status codes as written to the time history.
ALLOC_STATUS_CODES = {"exact": 0, "relaxed": 1, "error": 2}

# --- Sweep Grid Columns ---
GRID_COLUMNS = (
    "index", "altitude_m", "mach", "alpha_cmd_deg", "p_cmd_deg_s",
    "guard_mode", "outcome", "stable", "maneuver_achieved", "error",
)
GRID_DECIMALS = 6

# --- Message Prefixes/IDs for Queue ---
MSG_SWEEP_STARTED = "SWEEP_STARTED"
MSG_SWEEP_POINT_DONE = "SWEEP_POINT_DONE"
MSG_SWEEP_POINT_FAILED = "SWEEP_POINT_FAILED"
MSG_SWEEP_DONE = "SWEEP_DONE"

# --- CLI Exit Codes ---
EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_TRIM_FAILURE = 3
EXIT_IO_ERROR = 4
