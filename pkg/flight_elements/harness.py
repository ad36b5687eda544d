# flight_elements/harness.py
"""Scenario definitions, the closed-loop simulation run and run classification."""
from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.spatial as sp

from constants import (
    ALLOCATION_COLUMNS, ALLOC_STATUS_CODES, COMMAND_COLUMNS, GUARD_COLUMNS, OUTCOME_DIVERGED,
    OUTCOME_GUARD_TERMINATED, OUTCOME_STABLE, OUTCOME_UNSTABLE, SCENARIO_SCHEMA, STATE_COLUMNS,
)
from .airframe_model import CG_RANGE, atmosphere, control_effectiveness
from .control_alloc import AllocationProblem, AllocationStatus, ControlAllocator
from .data_files import check_schema_version, load_yaml_file, require_keys
from .errors import (
    AllocationError, ConfigError, DivergenceError, DomainError, EffectivenessError, SingularGMatrixError,
)
from .indi_control import AngleRateDifferentiator, ControllerGains, PilotCommand, g_matrix, inner_loop, outer_loop
from .loc_guard import (
    CommandGuard, GuardMode, GuardSettings, LyapunovGain, SaturationLimits, alpha_saturation, detect, fit_demand,
    rate_saturation, relax_limits, scheduled_limits,
)
from .moment_set import build_iams, incremental_bounds, shrink
from .sim_core import (
    FlightContext, SimConfig, actuator_step, derivative_with_coefficients, load_factor,
    step_rk4, trim_level_flight,
)

logger = logging.getLogger(__name__)

TRIM_LITERAL = "trim"
RATE_MEASUREMENTS = ("true_derivative", "filtered")


# =============================
# SETTINGS
# =============================

@dataclass(frozen=True)
class StabilityCriteria:
    settling_fraction: float = 0.25
    growth_ratio: float = 1.5
    rate_floor_deg_s: float = 5.0

    def __post_init__(self):
        if not 0.0 < self.settling_fraction <= 1.0:
            raise ConfigError(f"Settling fraction must lie in (0, 1], got {self.settling_fraction}")
        if self.growth_ratio <= 1.0:
            raise ConfigError("Stability growth ratio must exceed 1")


@dataclass(frozen=True)
class TrackingCriteria:
    alpha_tolerance_deg: float = 2.0
    roll_rate_fraction: float = 0.15
    roll_rate_floor_deg_s: float = 10.0
    hold_fraction: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.hold_fraction <= 1.0:
            raise ConfigError(f"Tracking hold fraction must lie in (0, 1], got {self.hold_fraction}")


@dataclass(frozen=True)
class RunSettings:
    """Numerical settings of one closed-loop run, built from settings.json."""

    sim: SimConfig = field(default_factory=SimConfig)
    gains: ControllerGains = field(default_factory=ControllerGains)
    guard: GuardSettings = field(default_factory=GuardSettings)
    stability: StabilityCriteria = field(default_factory=StabilityCriteria)
    tracking: TrackingCriteria = field(default_factory=TrackingCriteria)
    rate_measurement: str = "true_derivative"
    differentiator_bandwidth: float = 40.0
    differentiator_damping: float = 0.7
    effectiveness_step_deg: float = 0.1
    allocator_tolerance: float = 1e-10
    allocator_max_iterations: int = 50
    trim_tolerance: float = 1e-8
    trim_max_iterations: int = 200
    ams_snapshot_every_n_steps: int = 0

    def __post_init__(self):
        if self.rate_measurement not in RATE_MEASUREMENTS:
            raise ConfigError(
                f"Unknown rate_measurement '{self.rate_measurement}' (expected one of: {', '.join(RATE_MEASUREMENTS)})"
            )
        if self.effectiveness_step_deg <= 0.0:
            raise ConfigError("Effectiveness step must be positive")
        if self.ams_snapshot_every_n_steps < 0:
            raise ConfigError("AMS snapshot interval must be non-negative")


# =============================
# SCENARIOS
# =============================

@dataclass(frozen=True)
class CommandProfile:
    """Piecewise-constant command; a value of "trim" means the trim value."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if not self.times or len(self.times) != len(self.values):
            raise ConfigError("Command profile needs matching, non-empty breakpoint lists")
        if self.times[0] != 0.0:
            raise ConfigError("Command profile must start at t = 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ConfigError("Command profile breakpoints must be strictly increasing in time")
        for value in self.values:
            if value != TRIM_LITERAL and not math.isfinite(value):
                raise ConfigError(f"Command profile value {value!r} is neither finite nor '{TRIM_LITERAL}'")

    @classmethod
    def constant(cls, value):
        return cls(times=(0.0,), values=(value,))

    @classmethod
    def step(cls, initial, final, at):
        return cls(times=(0.0, float(at)), values=(initial, final))

    @classmethod
    def parse(cls, raw, name="command"):
        if isinstance(raw, (int, float, str)) and not isinstance(raw, bool):
            raw = [[0.0, raw]]
        if not isinstance(raw, list):
            raise ConfigError(f"Profile '{name}' must be a number, '{TRIM_LITERAL}' or a list of [time, value]")
        times, values = [], []
        for item in raw:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise ConfigError(f"Profile '{name}': breakpoint {item!r} is not a [time, value] pair")
            t, v = item
            try:
                times.append(float(t))
                values.append(TRIM_LITERAL if v == TRIM_LITERAL else float(v))
            except (TypeError, ValueError) as e:
                raise ConfigError(f"Profile '{name}': invalid breakpoint {item!r}") from e
        try:
            return cls(times=tuple(times), values=tuple(values))
        except ConfigError as e:
            raise ConfigError(f"Profile '{name}': {e}") from e

    def value(self, t, trim_value=0.0):
        index = max(0, bisect.bisect_right(self.times, t + 1e-9) - 1)
        v = self.values[index]
        return trim_value if v == TRIM_LITERAL else v

    @property
    def last_change(self):
        return self.times[-1]


@dataclass(frozen=True)
class ManeuverScenario:
    name: str
    mach: float
    altitude_m: float
    cg: float
    alpha_cmd_deg: CommandProfile
    beta_cmd_deg: CommandProfile = CommandProfile.constant(0.0)
    p_cmd_deg_s: CommandProfile = CommandProfile.constant(0.0)
    guard_mode: str = GuardMode.OFF.value
    duration_s: float = 10.0
    ams_snapshot_times_s: tuple = ()

    def __post_init__(self):
        if not self.mach > 0.0:
            raise ConfigError(f"Scenario '{self.name}': Mach must be positive")
        if not CG_RANGE[0] <= self.cg <= CG_RANGE[1]:
            raise ConfigError(f"Scenario '{self.name}': CG {self.cg} outside supported range {CG_RANGE}")
        if not self.duration_s > 0.0:
            raise ConfigError(f"Scenario '{self.name}': duration must be positive")
        for profile in (self.alpha_cmd_deg, self.beta_cmd_deg, self.p_cmd_deg_s):
            if profile.last_change > self.duration_s:
                raise ConfigError(f"Scenario '{self.name}': command breakpoint beyond the duration")
        object.__setattr__(self, "guard_mode", GuardMode.parse(self.guard_mode).value)

    @classmethod
    def from_mapping(cls, data, source="<mapping>"):
        what = f"Scenario {source}"
        check_schema_version(data, SCENARIO_SCHEMA, what)
        require_keys(data, ("initial", "commands"), what)
        initial, commands = data["initial"], data["commands"]
        require_keys(initial, ("mach", "altitude_m"), f"{what} initial")
        require_keys(commands, ("alpha_deg",), f"{what} commands")
        try:
            return cls(
                name=str(data.get("name", source)),
                mach=float(initial["mach"]),
                altitude_m=float(initial["altitude_m"]),
                cg=float(initial.get("cg", 0.35)),
                alpha_cmd_deg=CommandProfile.parse(commands["alpha_deg"], "alpha_deg"),
                beta_cmd_deg=CommandProfile.parse(commands.get("beta_deg", 0.0), "beta_deg"),
                p_cmd_deg_s=CommandProfile.parse(commands.get("p_deg_s", 0.0), "p_deg_s"),
                guard_mode=data.get("guard_mode", GuardMode.OFF.value),
                duration_s=float(data.get("duration_s", 10.0)),
                ams_snapshot_times_s=tuple(float(t) for t in data.get("ams_snapshot_times_s", ())),
            )
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{what}: {e}") from e

    @classmethod
    def load(cls, path):
        return cls.from_mapping(load_yaml_file(path, "scenario file"), source=str(path))

    def with_guard(self, mode):
        return replace(self, guard_mode=GuardMode.parse(mode).value)


# =============================
# RUN RECORD
# =============================

@dataclass
class RunRecord:
    scenario: ManeuverScenario
    trim: object
    history: pd.DataFrame
    completed: bool
    termination_reason: str = ""
    outcome: str = OUTCOME_STABLE
    maneuver_achieved: bool = False
    final_state: object = None
    ams_snapshots: list = field(default_factory=list)
    extrapolation_count: int = 0
    guard_activations: int = 0

    @property
    def guard_mode(self):
        return self.scenario.guard_mode

    @property
    def time_reached_s(self):
        if self.history.empty:
            return 0.0
        return float(self.history["time_s"].iloc[-1])

    def summary(self):
        h = self.history
        dt = float(h["time_s"].diff().median()) if len(h) > 1 else 0.0

        def peak(column):
            return float(h[column].abs().max()) if len(h) else 0.0

        risk_times = h.loc[h["loc_risk"] > 0, "time_s"] if len(h) else pd.Series(dtype=float)
        return {
            "scenario": self.scenario.name,
            "guard_mode": self.guard_mode,
            "outcome": self.outcome,
            "maneuver_achieved": bool(self.maneuver_achieved),
            "completed": bool(self.completed),
            "termination_reason": self.termination_reason,
            "time_reached_s": self.time_reached_s,
            "duration_s": self.scenario.duration_s,
            "trim": {
                "alpha_deg": math.degrees(self.trim.state.alpha),
                "pitch_deflection_deg": float(self.trim.actuator.deflections[0]),
                "thrust_N": float(self.trim.thrust),
                "residual": float(self.trim.residual),
            },
            "peaks": {
                "p_deg_s": peak("p_deg_s"),
                "q_deg_s": peak("q_deg_s"),
                "r_deg_s": peak("r_deg_s"),
                "alpha_deg": peak("alpha_deg"),
                "nz_g": peak("nz_g"),
            },
            "max_alloc_residual": peak("alloc_residual"),
            "first_loc_detection_s": float(risk_times.iloc[0]) if len(risk_times) else None,
            "guard_activations": int(self.guard_activations),
            "guard_active_time_s": float(h["guard_active"].sum() * dt) if len(h) else 0.0,
            "extrapolation_count": int(self.extrapolation_count),
        }


# =============================
# CLASSIFICATION
# =============================

def _settling_window(history, fraction):
    t = history["time_s"].to_numpy()
    start = t[-1] - fraction * (t[-1] - t[0])
    return history[history["time_s"] >= start - 1e-9]


def classify_stability(record, criteria=StabilityCriteria(), max_rate_deg_s=2000.0):
    """``stable`` for a full-duration run whose rates stay bounded late in the run."""
    if not record.completed:
        return record.outcome if record.outcome != OUTCOME_STABLE else OUTCOME_DIVERGED
    h = record.history
    if h.empty or not np.all(np.isfinite(h[["V_m_s", "alpha_deg", "beta_deg", "p_deg_s", "q_deg_s", "r_deg_s"]].to_numpy())):
        return OUTCOME_DIVERGED
    rates = h[["p_deg_s", "q_deg_s", "r_deg_s"]].abs().to_numpy()
    if rates.max() >= max_rate_deg_s:
        return OUTCOME_UNSTABLE

    window = _settling_window(h, criteria.settling_fraction)
    norms = np.linalg.norm(window[["p_deg_s", "q_deg_s", "r_deg_s"]].to_numpy(), axis=1)
    if norms.size < 4:
        return OUTCOME_STABLE
    half = norms.size // 2
    first, second = norms[:half].max(), norms[half:].max()
    if second > criteria.growth_ratio * first and second > criteria.rate_floor_deg_s:
        return OUTCOME_UNSTABLE
    return OUTCOME_STABLE


def _held_segments(history):
    """(start, stop) row ranges over which the alpha and roll-rate commands stay constant."""
    commands = history[["alpha_cmd_deg", "p_cmd_deg_s"]].to_numpy()
    changed = np.flatnonzero(np.any(np.diff(commands, axis=0) != 0.0, axis=1)) + 1
    starts = np.concatenate([[0], changed])
    stops = np.append(changed, len(history))
    return list(zip(starts, stops))


def maneuver_achieved(record, criteria=TrackingCriteria()):
    """Whether a stable run tracks every held alpha and roll-rate command.

    Each stretch of constant commands is judged on its final
    ``hold_fraction``; a command missed early in the maneuver fails the run
    even if the last command is met.
    """
    if record.outcome != OUTCOME_STABLE or record.history.empty:
        return False
    h = record.history
    for start, stop in _held_segments(h):
        held = h.iloc[start:stop]
        first = min(len(held) - 1, int(len(held) * (1.0 - criteria.hold_fraction)))
        tail = held.iloc[first:]
        alpha_error = abs(tail["alpha_deg"].mean() - tail["alpha_cmd_deg"].iloc[0])
        p_cmd = tail["p_cmd_deg_s"].iloc[0]
        p_error = abs(tail["p_deg_s"].mean() - p_cmd)
        p_tolerance = max(criteria.roll_rate_fraction * abs(p_cmd), criteria.roll_rate_floor_deg_s)
        if alpha_error > criteria.alpha_tolerance_deg or p_error > p_tolerance:
            return False
    return True


def hull_volume(points, lower, upper):
    """Returns (volume, degenerate) of the hull of ``points`` scaled to the unit cube."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    lower = np.asarray(lower, dtype=float)
    span = np.asarray(upper, dtype=float) - lower
    if np.any(span <= 0.0) or len(points) < 4:
        return 0.0, True
    normalized = (points - lower) / span
    try:
        return float(sp.ConvexHull(normalized).volume), False
    except sp.QhullError:
        return 0.0, True


# =============================
# CLOSED LOOP
# =============================

def history_columns(surface_names):
    """Time-history column order for a given surface suite."""
    deflections = tuple(f"u_cmd_{name}_deg" for name in surface_names) + tuple(
        f"u_{name}_deg" for name in surface_names
    )
    return list(STATE_COLUMNS + COMMAND_COLUMNS + deflections + ALLOCATION_COLUMNS + GUARD_COLUMNS)


def _snapshot(t, demand, iams, shrunk, inside, margin):
    return {
        "time_s": t,
        "demand": [float(v) for v in demand],
        "inside": bool(inside),
        "margin": float(margin),
        "iams": iams.to_dict(),
        "shrunk_iams": shrunk.to_dict(),
    }


def _row(t, state, atmos, nz, cmd, guarded_alpha, rates, u_cmd, actuator, demand, dtau,
         allocation, alloc_margin, loc_risk, margin, active, demand_scale, limits, sat):
    deg = math.degrees
    active_limits = limits if active else SaturationLimits.inactive()
    values = [
        t, state.V, deg(state.alpha), deg(state.beta),
        deg(state.p), deg(state.q), deg(state.r),
        deg(state.phi), deg(state.theta), deg(state.psi),
        state.north, state.east, state.h,
        state.V / atmos.speed_of_sound, nz,
        deg(cmd.alpha), deg(cmd.beta), deg(cmd.p),
        deg(guarded_alpha), deg(rates[0]), deg(rates[1]), deg(rates[2]),
        *u_cmd, *actuator.deflections,
        *demand.tau_c, *dtau,
        allocation[0], alloc_margin, ALLOC_STATUS_CODES[allocation[1]],
        int(loc_risk), margin, int(active), demand_scale,
        *(deg(v) if math.isfinite(v) else math.nan for v in (*active_limits.rates, active_limits.alpha)),
        *(deg(v) if math.isfinite(v) else math.nan for v in (*sat.rates, sat.alpha)),
    ]
    return values


def run_scenario(scenario, aircraft, settings=RunSettings(), schedule=None):
    """Trims at the scenario condition and flies the closed loop for its duration.

    Raises TrimError when no trim exists; divergence ends the run with a
    non-stable outcome instead.
    """
    model, suite = aircraft.model, aircraft.suite
    params = aircraft.params.with_cg(scenario.cg)
    sim = replace(settings.sim, duration=scenario.duration_s)
    dt, gravity, gains = sim.dt, sim.gravity, settings.gains
    mode = GuardMode.parse(scenario.guard_mode)
    if mode is GuardMode.SCHEDULED and schedule is None:
        raise ConfigError("Scheduled guard mode needs a limiter schedule")

    trim = trim_level_flight(scenario.mach, scenario.altitude_m, params, model, suite, gravity,
                             settings.trim_tolerance, settings.trim_max_iterations)
    ctx = FlightContext(model=model, params=params, thrust=trim.thrust, gravity=gravity)
    trim_alpha_deg = math.degrees(trim.state.alpha)

    allocator = ControlAllocator(settings.allocator_tolerance, settings.allocator_max_iterations)
    guard = CommandGuard(mode, settings.guard.hysteresis_s)
    lyapunov = LyapunovGain.from_inertia(params.inertia, settings.guard.lyapunov_gain_scale)
    differentiator = None
    if settings.rate_measurement == "filtered":
        differentiator = AngleRateDifferentiator(settings.differentiator_bandwidth,
                                                 settings.differentiator_damping, dt)
        differentiator.reset([trim.state.alpha, trim.state.beta])

    snapshot_steps = {int(round(t / dt)) for t in scenario.ams_snapshot_times_s}
    every = settings.ams_snapshot_every_n_steps
    max_rate = math.radians(sim.max_rate_deg_s)
    max_alpha = math.radians(sim.max_alpha_deg)

    state, actuator = trim.state, trim.actuator
    G = None
    rows, snapshots = [], []
    completed, outcome, reason = True, OUTCOME_STABLE, ""
    extrapolations = 0

    logger.info("Running '%s' (guard %s) for %.2f s", scenario.name, mode.value, scenario.duration_s)
    for k in range(sim.steps):
        t = round(k * dt, 10)
        try:
            atmos = atmosphere(state.h)
            xdot, coeffs = derivative_with_coefficients(state, actuator.deflections, ctx, atmos)
            extrapolations += int(coeffs.extrapolated)

            # --- sense ---
            if differentiator is None:
                angle_rates0 = xdot[1:3]
            else:
                angle_rates0 = differentiator.update([state.alpha, state.beta])
            rates0 = np.array([state.q, state.r])
            try:
                G = g_matrix(state, params, atmos, coeffs)
            except SingularGMatrixError as e:
                if G is None:
                    raise DivergenceError(str(e), last_state=state) from e
                logger.debug("Keeping previous outer-loop matrix at t=%.2f s: %s", t, e)

            cmd = PilotCommand(
                alpha=math.radians(scenario.alpha_cmd_deg.value(t, trim_alpha_deg)),
                beta=math.radians(scenario.beta_cmd_deg.value(t)),
                p=math.radians(scenario.p_cmd_deg_s.value(t)),
            )
            qbar = 0.5 * atmos.density * state.V ** 2

            # --- outer and inner loops ---
            q_cmd, r_cmd = outer_loop(cmd, state, angle_rates0, rates0, G, gains)
            raw_rates = np.array([cmd.p, q_cmd, r_cmd])
            u0 = actuator.deflections
            phi = control_effectiveness(model, state, u0, params, suite, settings.effectiveness_step_deg)
            current = coeffs.moments
            baseline = current - phi @ np.radians(u0)
            demand = inner_loop(raw_rates, state, params, qbar, gains, baseline)

            # --- detect ---
            bounds = incremental_bounds(u0, suite, dt)
            iams = build_iams(phi, bounds, settings.allocator_tolerance)
            shrunk = shrink(iams, settings.guard.shrink_factor)
            dtau_raw = demand.total - current
            loc_risk, margin = detect(shrunk, dtau_raw)
            active = guard.update(loc_risk, t)

            # --- guard ---
            sat = SaturationLimits.inactive(t)
            limits = SaturationLimits.inactive(t)
            if mode is GuardMode.LYAPUNOV:
                rate_sat = rate_saturation(state.omega, params.inertia, lyapunov, gains)
                alpha_sat = alpha_saturation(state, angle_rates0, rates0, rate_sat, G, gains)
                sat = SaturationLimits(*rate_sat, alpha=alpha_sat, active=True, time=t)
                limits = sat
                if active and settings.guard.authority_recovery:
                    sat_demand = inner_loop(sat.rates, state, params, qbar, gains, baseline).total - current
                    fraction = shrunk.max_feasible_fraction(sat_demand, dtau_raw)
                    limits = relax_limits(sat, raw_rates, cmd.alpha, fraction)
            elif mode is GuardMode.SCHEDULED:
                limits = scheduled_limits(state, atmos, schedule)

            guarded = guard.apply(cmd, raw_rates, limits, state.omega)
            rates = guarded.rates
            if guarded.clamped:
                q_g, r_g = outer_loop(guarded.command, state, angle_rates0, rates0, G, gains)
                rates = guard.apply(guarded.command, [guarded.command.p, q_g, r_g], limits, state.omega).rates
                demand = inner_loop(rates, state, params, qbar, gains, baseline)
            demand_scale = 1.0
            if active and mode is GuardMode.LYAPUNOV:
                demand, demand_scale = fit_demand(demand, current, iams)

            # --- allocate ---
            u0_rad = np.radians(u0)
            problem = AllocationProblem(phi=phi, tau_c=demand.tau_c, lower=u0_rad + bounds.lower,
                                        upper=u0_rad + bounds.upper, u0=u0_rad)
            try:
                result = allocator.allocate(problem)
                u_cmd_rad, residual, status = result.u, result.relative_residual, result.status
            except AllocationError as e:
                logger.warning("Allocation failed at t=%.2f s: %s", t, e)
                u_cmd_rad = e.best_iterate if e.best_iterate is not None else u0_rad
                residual, status = math.nan, AllocationStatus.ERROR
            dtau = phi @ (u_cmd_rad - u0_rad)
            alloc_margin = shrunk.contains(dtau)[1]
            u_cmd = np.degrees(u_cmd_rad)

            nz = load_factor(state, coeffs, params, atmos, gravity)
            rows.append(_row(t, state, atmos, nz, cmd, guarded.command.alpha, rates, u_cmd, actuator, demand,
                             dtau, (residual, status.value), alloc_margin, loc_risk, margin, active, demand_scale,
                             limits, sat))
            if k in snapshot_steps or (every and k % every == 0):
                snapshots.append(_snapshot(t, dtau_raw, iams, shrunk, not loc_risk, margin))

            # --- actuate and integrate ---
            actuator = actuator_step(actuator, u_cmd, suite, dt)
            state = step_rk4(state, actuator, ctx, dt)
        except (DivergenceError, EffectivenessError) as e:
            completed, outcome, reason = False, OUTCOME_DIVERGED, str(e)
            break
        except DomainError as e:
            completed, outcome, reason = False, OUTCOME_GUARD_TERMINATED, str(e)
            break

        if np.any(np.abs(state.omega) > max_rate):
            completed, outcome, reason = False, OUTCOME_DIVERGED, "body rate beyond divergence threshold"
        elif abs(state.alpha) > max_alpha:
            completed, outcome, reason = False, OUTCOME_DIVERGED, "angle of attack beyond divergence threshold"
        elif abs(nz) > sim.max_nz_g:
            completed, outcome, reason = False, OUTCOME_DIVERGED, "load factor beyond divergence threshold"
        if not completed:
            break

    history = pd.DataFrame(rows, columns=history_columns(suite.names))
    record = RunRecord(
        scenario=scenario,
        trim=trim,
        history=history,
        completed=completed,
        termination_reason=reason,
        outcome=outcome,
        final_state=state,
        ams_snapshots=snapshots,
        extrapolation_count=extrapolations,
        guard_activations=guard.activations,
    )
    record.outcome = classify_stability(record, settings.stability, sim.max_rate_deg_s)
    record.maneuver_achieved = maneuver_achieved(record, settings.tracking)
    if completed:
        logger.info("Run '%s' finished: %s", scenario.name, record.outcome)
    else:
        logger.info("Run '%s' ended at t=%.2f s: %s (%s)", scenario.name, record.time_reached_s, outcome, reason)
    return record


