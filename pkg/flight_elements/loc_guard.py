# flight_elements/loc_guard.py
"""Loss-of-control detection and command saturation.

Detection flags a moment demand outside the shrunk incremental attainable
moment set. Prevention replaces the offending rate and angle-of-attack
commands with values whose tracking produces the stabilizing moment -K w,
for which V = w' J w decreases along the trajectory. A scheduled limiter
keyed on Mach and altitude is the conventional baseline.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import NamedTuple

import numpy as np

from constants import GUARD_LYAPUNOV, GUARD_OFF, GUARD_SCHEDULED, LIMITER_SCHEDULE_SCHEMA
from .data_files import check_schema_version, load_yaml_file, require_keys
from .errors import ConfigError, DomainError
from .indi_control import MomentDemand, PilotCommand

logger = logging.getLogger(__name__)

SCHEDULE_TABLES = ("alpha_max_deg", "p_max_deg_s", "q_max_deg_s", "r_max_deg_s")


class GuardMode(str, Enum):
    OFF = GUARD_OFF
    LYAPUNOV = GUARD_LYAPUNOV
    SCHEDULED = GUARD_SCHEDULED

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError as e:
            choices = ", ".join(m.value for m in cls)
            raise ConfigError(f"Unknown guard mode '{value}' (expected one of: {choices})") from e


@dataclass(frozen=True)
class GuardSettings:
    shrink_margin: float = 0.3
    lyapunov_gain_scale: float = 2.0
    hysteresis_s: float = 0.2
    authority_recovery: bool = False

    def __post_init__(self):
        if not 0.0 <= self.shrink_margin < 1.0:
            raise ConfigError(f"IAMS shrink margin must lie in [0, 1), got {self.shrink_margin}")
        if not self.lyapunov_gain_scale > 0.0:
            raise ConfigError("Lyapunov gain scale must be positive")
        if self.hysteresis_s < 0.0:
            raise ConfigError("Guard hysteresis must be non-negative")

    @property
    def shrink_factor(self):
        return 1.0 - self.shrink_margin


@dataclass(frozen=True, eq=False)
class LyapunovGain:
    """Symmetric positive-definite K of the stabilizing moment M = -K w."""

    K: np.ndarray

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.shape != (3, 3) or not np.all(np.isfinite(K)):
            raise DomainError("Lyapunov gain must be a finite 3x3 matrix")
        if not np.allclose(K, K.T, rtol=0.0, atol=1e-9 * max(1.0, np.abs(K).max())):
            raise DomainError("Lyapunov gain must be symmetric")
        if np.linalg.eigvalsh(K).min() <= 0.0:
            raise DomainError("Lyapunov gain must be positive definite")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @classmethod
    def from_inertia(cls, inertia, scale=2.0):
        """Diagonal gain K_ii = scale * J_ii, scale in 1/s."""
        return cls(np.diag(scale * np.diag(np.asarray(inertia, dtype=float))))


@dataclass(frozen=True)
class SaturationLimits:
    """Active command limits. Inactive limits are +inf sentinels."""

    p: float = math.inf
    q: float = math.inf
    r: float = math.inf
    alpha: float = math.inf
    active: bool = False
    time: float = math.nan

    def __post_init__(self):
        if self.active and not all(math.isfinite(v) for v in (self.p, self.q, self.r, self.alpha)):
            raise DomainError("Active saturation limits must be finite")

    @classmethod
    def inactive(cls, time=math.nan):
        return cls(time=time)

    @property
    def rates(self):
        return np.array([self.p, self.q, self.r])


class GuardedCommand(NamedTuple):
    command: PilotCommand
    rates: np.ndarray
    clamped: bool


# --- Scheduled Limiter ---

class LimiterSchedule:
    """Limit tables indexed by (altitude slice, Mach breakpoint)."""

    def __init__(self, altitudes, mach, tables):
        self.altitudes = np.array(altitudes, dtype=float).reshape(-1)
        self.mach = np.array(mach, dtype=float).reshape(-1)
        if self.altitudes.size == 0 or self.mach.size == 0:
            raise ConfigError("Limiter schedule has an empty breakpoint list")
        if np.any(np.diff(self.altitudes) <= 0.0) or np.any(np.diff(self.mach) <= 0.0):
            raise ConfigError("Limiter schedule breakpoints must be strictly increasing")
        self.tables = {}
        for name in SCHEDULE_TABLES:
            if name not in tables:
                raise ConfigError(f"Limiter schedule is missing table '{name}'")
            table = np.array(tables[name], dtype=float)
            if table.shape != (self.altitudes.size, self.mach.size):
                raise ConfigError(
                    f"Limiter table '{name}' must be {self.altitudes.size}x{self.mach.size}, got {table.shape}"
                )
            if not np.all(np.isfinite(table)) or np.any(table <= 0.0):
                raise ConfigError(f"Limiter table '{name}' must hold positive finite values")
            # Within an altitude slice dynamic pressure grows with Mach.
            if np.any(np.diff(table, axis=1) > 0.0):
                raise ConfigError(f"Limiter table '{name}' must not increase with dynamic pressure")
            self.tables[name] = table

    @classmethod
    def from_mapping(cls, data, source="<mapping>"):
        check_schema_version(data, LIMITER_SCHEDULE_SCHEMA, f"Limiter schedule {source}")
        require_keys(data, ("altitudes_m", "mach") + SCHEDULE_TABLES, f"Limiter schedule {source}")
        try:
            return cls(data["altitudes_m"], data["mach"], {name: data[name] for name in SCHEDULE_TABLES})
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Limiter schedule {source}: {e}") from e

    @classmethod
    def load(cls, path):
        return cls.from_mapping(load_yaml_file(path, "limiter schedule"), source=str(path))

    def lookup(self, mach, altitude):
        """Bilinear interpolation, clamped to the edge values outside the tables."""
        result = {}
        for name, table in self.tables.items():
            per_slice = np.array([np.interp(mach, self.mach, row) for row in table])
            result[name] = float(np.interp(altitude, self.altitudes, per_slice))
        return result


def scheduled_limits(state, atmos, schedule):
    values = schedule.lookup(state.V / atmos.speed_of_sound, state.h)
    return SaturationLimits(
        p=math.radians(values["p_max_deg_s"]),
        q=math.radians(values["q_max_deg_s"]),
        r=math.radians(values["r_max_deg_s"]),
        alpha=math.radians(values["alpha_max_deg"]),
        active=True,
    )


# --- Detection ---

def detect(shrunk_set, demand):
    """Returns (loc_risk, margin) for an incremental moment demand."""
    inside, margin = shrunk_set.contains(demand)
    return not inside, margin


# --- Lyapunov Saturation ---

def _gain_matrix(K):
    return np.asarray(getattr(K, "K", K), dtype=float)


def _rate_gains(gains):
    return np.asarray(getattr(gains, "rate", gains), dtype=float)


def _angle_gains(gains):
    return np.asarray(getattr(gains, "angle", gains), dtype=float)


def stabilizing_moments(omega, K):
    return -_gain_matrix(K) @ np.asarray(omega, dtype=float)


def rate_saturation(omega, J, K, gains):
    """Rate commands whose first-order tracking yields the moment -K w."""
    omega = np.asarray(omega, dtype=float)
    J = np.asarray(J, dtype=float)
    accel = np.linalg.solve(J, stabilizing_moments(omega, K) - np.cross(omega, J @ omega))
    return accel / _rate_gains(gains) + omega


def angle_saturation(state, angle_rates0, rates0, rate_sat, G, gains):
    """(alpha_sat, beta_sat) from the saturated pitch and yaw rates."""
    G = np.asarray(getattr(G, "matrix", G), dtype=float)
    increment = np.asarray(rate_sat, dtype=float)[-2:] - np.asarray(rates0, dtype=float)
    rates = np.asarray(angle_rates0, dtype=float) + G @ increment
    return rates / _angle_gains(gains) + np.array([state.alpha, state.beta])


def alpha_saturation(state, angle_rates0, rates0, rate_sat, G, gains):
    # Sideslip is never intervened.
    return float(angle_saturation(state, angle_rates0, rates0, rate_sat, G, gains)[0])


def relax_limits(limits, rate_cmds, alpha_cmd, fraction):
    """Moves each limit from its stabilizing value toward the raw command."""
    rate_cmds = np.asarray(rate_cmds, dtype=float)
    rates = limits.rates + fraction * (rate_cmds - limits.rates)
    alpha = limits.alpha + fraction * (alpha_cmd - limits.alpha)
    return replace(limits, p=float(rates[0]), q=float(rates[1]), r=float(rates[2]), alpha=float(alpha))


def fit_demand(demand, current, attainable):
    """Scales the moment increment of ``demand`` along its own direction into ``attainable``.

    The zero increment always lies in the incremental set, so the ray from it
    toward the requested increment meets the set boundary. Returns
    (demand, scale) with scale in [0, 1].
    """
    increment = np.asarray(demand.total, dtype=float) - np.asarray(current, dtype=float)
    scale = attainable.max_feasible_fraction(np.zeros(3), increment)
    if scale >= 1.0:
        return demand, 1.0
    total = current + scale * increment
    return MomentDemand(tau_c=total - demand.baseline, total=total, baseline=demand.baseline), scale


# --- Command Clamping ---

def _destabilizing_direction(rates_now, rate_cmds):
    """Sign of growth for each channel: the current rate, or the command when at rest."""
    now = np.sign(np.asarray(rates_now, dtype=float))
    return np.where(now != 0.0, now, np.sign(rate_cmds))


def apply_guard(cmd, rate_cmds, limits, loc_risk, mode, rates_now=None):
    """Applies the limits of ``mode`` to the pilot command and the rate commands.

    ``rate_cmds`` is (p_cmd, q_cmd, r_cmd); the returned command carries the
    guarded alpha and p commands, the returned rates all three channels.
    Lyapunov limits are one-sided: a rate command is replaced by its limit
    only when it lies beyond the limit in the direction the body rate
    ``rates_now`` is already turning. Commands that reverse the motion pass.
    """
    mode = GuardMode.parse(mode)
    rates = np.array(rate_cmds, dtype=float)
    if mode is GuardMode.OFF or (mode is GuardMode.LYAPUNOV and not loc_risk):
        return GuardedCommand(command=cmd, rates=rates, clamped=False)

    alpha = min(cmd.alpha, limits.alpha)
    if mode is GuardMode.LYAPUNOV:
        now = np.zeros(3) if rates_now is None else np.asarray(rates_now, dtype=float)
        direction = _destabilizing_direction(now, rates)
        beyond = direction * (rates - limits.rates) > 0.0
        guarded = np.where(beyond, limits.rates, rates)
    else:
        guarded = np.clip(rates, -limits.rates, limits.rates)

    clamped = alpha != cmd.alpha or bool(np.any(guarded != rates))
    command = replace(cmd, alpha=alpha, p=float(guarded[0]))
    return GuardedCommand(command=command, rates=guarded, clamped=clamped)


class CommandGuard:
    """Per-run guard state: activation with a release hysteresis."""

    def __init__(self, mode, hysteresis_s=0.2):
        self.mode = GuardMode.parse(mode)
        self.hysteresis_s = hysteresis_s
        self.active = False
        self.activations = 0
        self._last_risk_time = -math.inf

    def reset(self):
        self.active = False
        self.activations = 0
        self._last_risk_time = -math.inf

    def update(self, loc_risk, t):
        """Feeds one detection result; returns whether the guard is engaged."""
        if self.mode is GuardMode.SCHEDULED:
            self.active = True
            return True
        if self.mode is GuardMode.OFF:
            return False
        if loc_risk:
            self._last_risk_time = t
            if not self.active:
                self.active = True
                self.activations += 1
                logger.info("Command saturation engaged at t=%.2f s", t)
        elif self.active and t - self._last_risk_time >= self.hysteresis_s - 1e-12:
            self.active = False
            logger.info("Command saturation released at t=%.2f s", t)
        return self.active

    def apply(self, cmd, rate_cmds, limits, rates_now=None):
        return apply_guard(cmd, rate_cmds, limits, self.active, self.mode, rates_now)
