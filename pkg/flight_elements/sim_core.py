# flight_elements/sim_core.py
"""Rigid-body equations of motion, actuator dynamics, RK4 integration and trim."""
from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass, fields, replace
from typing import NamedTuple

import numpy as np
import scipy.optimize as so

from constants import STANDARD_GRAVITY
from utils import wrap_angle
from .airframe_model import aero_coefficients, atmosphere
from .errors import ConfigError, DivergenceError, DomainError, TrimError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AircraftState:
    """Rigid-body state. Angles and rates in radians, position in metres (h up)."""

    V: float
    alpha: float
    beta: float
    p: float
    q: float
    r: float
    phi: float
    theta: float
    psi: float
    north: float = 0.0
    east: float = 0.0
    h: float = 0.0

    def as_vector(self):
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_vector(cls, x):
        return cls(*(float(v) for v in x))

    @classmethod
    def field_names(cls):
        return tuple(f.name for f in fields(cls))

    @property
    def omega(self):
        return np.array([self.p, self.q, self.r])

    def is_finite(self):
        return bool(np.all(np.isfinite(self.as_vector())))

    def validate(self):
        if not self.is_finite():
            raise DomainError("Aircraft state has non-finite entries")
        if self.V <= 0.0:
            raise DomainError(f"Airspeed must be positive, got {self.V}")
        if abs(self.beta) >= math.pi / 2:
            raise DomainError(f"Sideslip {self.beta} rad outside (-pi/2, pi/2)")
        return self

    def wrapped(self):
        return replace(self, phi=wrap_angle(self.phi), psi=wrap_angle(self.psi))


@dataclass(frozen=True, eq=False)
class ActuatorState:
    deflections: np.ndarray
    commanded: np.ndarray

    @classmethod
    def at(cls, deflections):
        u = np.array(deflections, dtype=float)
        return cls(deflections=u, commanded=u.copy())


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    duration: float = 10.0
    integrator: str = "rk4"
    gravity: float = STANDARD_GRAVITY
    max_rate_deg_s: float = 2000.0
    max_alpha_deg: float = 90.0
    max_nz_g: float = 40.0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ConfigError(f"Time step must be positive, got {self.dt}")
        if self.duration < self.dt:
            raise ConfigError(f"Duration {self.duration} s shorter than the time step {self.dt} s")
        if self.integrator != "rk4":
            raise ConfigError(f"Unsupported integrator '{self.integrator}'")

    @property
    def steps(self):
        return int(round(self.duration / self.dt))


@dataclass(frozen=True)
class FlightContext:
    """Everything the equations of motion need besides state and deflections."""

    model: object
    params: object
    thrust: float = 0.0
    gravity: float = STANDARD_GRAVITY


class TrimPoint(NamedTuple):
    state: AircraftState
    actuator: ActuatorState
    thrust: float
    residual: float


def rigid_body_rates(omega, moment, inertia, inertia_inv):
    """Euler's equations: J omega_dot = M - omega x (J omega)."""
    return inertia_inv @ (moment - np.cross(omega, inertia @ omega))


def _derivative_vector(x, u_deg, ctx, atmos=None):
    state = AircraftState.from_vector(x)
    if atmos is None:
        atmos = atmosphere(state.h)
    params = ctx.params
    coeffs = aero_coefficients(ctx.model, state, u_deg, params)

    V, alpha, beta = state.V, state.alpha, state.beta
    p, q, r = state.p, state.q, state.r
    qbar_s = 0.5 * atmos.density * V * V * params.wing_area
    mass, g = params.mass, ctx.gravity

    ca, sa = math.cos(alpha), math.sin(alpha)
    cb, sb = math.cos(beta), math.sin(beta)
    sphi, cphi = math.sin(state.phi), math.cos(state.phi)
    sth, cth = math.sin(state.theta), math.cos(state.theta)
    spsi, cpsi = math.sin(state.psi), math.cos(state.psi)
    u_b, v_b, w_b = V * ca * cb, V * sb, V * sa * cb

    cx, cy, cz = coeffs.body_axis(alpha)
    fx = qbar_s * cx + ctx.thrust - mass * g * sth
    fy = qbar_s * cy + mass * g * sphi * cth
    fz = qbar_s * cz + mass * g * cphi * cth

    u_dot = fx / mass + r * v_b - q * w_b
    v_dot = fy / mass + p * w_b - r * u_b
    w_dot = fz / mass + q * u_b - p * v_b

    V_dot = (u_b * u_dot + v_b * v_dot + w_b * w_dot) / V
    alpha_dot = (u_b * w_dot - w_b * u_dot) / (u_b * u_b + w_b * w_b)
    beta_dot = (V * v_dot - v_b * V_dot) / (V * V * cb)

    moment = qbar_s * np.array([params.span * coeffs.Cl, params.chord * coeffs.Cm, params.span * coeffs.Cn])
    p_dot, q_dot, r_dot = rigid_body_rates(state.omega, moment, params.inertia, params.inertia_inv)

    phi_dot = p + math.tan(state.theta) * (q * sphi + r * cphi)
    theta_dot = q * cphi - r * sphi
    psi_dot = (q * sphi + r * cphi) / cth

    north_dot = (u_b * cth * cpsi + v_b * (sphi * sth * cpsi - cphi * spsi)
                 + w_b * (cphi * sth * cpsi + sphi * spsi))
    east_dot = (u_b * cth * spsi + v_b * (sphi * sth * spsi + cphi * cpsi)
                + w_b * (cphi * sth * spsi - sphi * cpsi))
    h_dot = u_b * sth - v_b * sphi * cth - w_b * cphi * cth

    xdot = np.array([V_dot, alpha_dot, beta_dot, p_dot, q_dot, r_dot,
                     phi_dot, theta_dot, psi_dot, north_dot, east_dot, h_dot])
    if not np.all(np.isfinite(xdot)):
        raise DivergenceError("Non-finite state derivative", last_state=state)
    return xdot, coeffs


def derivative_with_coefficients(state, u_deg, ctx, atmos=None):
    """Returns (state derivative vector, aero coefficients at the CG)."""
    return _derivative_vector(state.as_vector(), u_deg, ctx, atmos)


def state_derivative(state, u_deg, params, atmos, model, thrust=0.0, gravity=STANDARD_GRAVITY):
    """Time derivative of ``state`` returned as an AircraftState of rates."""
    ctx = FlightContext(model=model, params=params, thrust=thrust, gravity=gravity)
    xdot, _ = _derivative_vector(state.as_vector(), u_deg, ctx, atmos)
    return AircraftState.from_vector(xdot)


def load_factor(state, coeffs, params, atmos, gravity=STANDARD_GRAVITY):
    """Normal load factor n_z in g from the aerodynamic body-z force."""
    qbar = 0.5 * atmos.density * state.V ** 2
    _, _, cz = coeffs.body_axis(state.alpha)
    return -qbar * params.wing_area * cz / (params.mass * gravity)


def actuator_step(actuator, u_cmd, suite, dt):
    """First-order lag with rate and position limiting, one sample long."""
    u0 = actuator.deflections
    cmd = np.asarray(u_cmd, dtype=float)
    cmd = np.where(np.isfinite(cmd), cmd, u0)
    cmd = suite.clip(cmd)

    has_lag = suite.lag > 0.0
    blend = np.where(has_lag, -np.expm1(-dt / np.where(has_lag, suite.lag, 1.0)), 1.0)
    max_step = suite.rate * dt
    delta = np.clip((cmd - u0) * blend, -max_step, max_step)
    return ActuatorState(deflections=suite.clip(u0 + delta), commanded=cmd)


def rk4_step(f, x, dt):
    """Classic fourth-order Runge-Kutta step for x_dot = f(x)."""
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step_rk4(state, actuator, ctx, dt):
    """Advances the rigid body one sample with the deflections held constant."""
    u = actuator.deflections

    def f(x):
        return _derivative_vector(x, u, ctx)[0]

    x_next = rk4_step(f, state.as_vector(), dt)
    if not np.all(np.isfinite(x_next)):
        raise DivergenceError("Non-finite state after integration step", last_state=state)
    return AircraftState.from_vector(x_next).wrapped()


def linearize(state, u_deg, ctx, step=1e-6):
    """Central-difference Jacobian of the state derivative at fixed deflections."""
    x0 = state.as_vector()
    n = x0.size
    jacobian = np.empty((n, n))
    for i in range(n):
        dx = np.zeros(n)
        dx[i] = step * max(1.0, abs(x0[i]))
        plus = _derivative_vector(x0 + dx, u_deg, ctx)[0]
        minus = _derivative_vector(x0 - dx, u_deg, ctx)[0]
        jacobian[:, i] = (plus - minus) / (2.0 * dx[i])
    return jacobian


def pitch_surface_indices(suite):
    indices = [i for i, name in enumerate(suite.names) if "horizontal_tail" in name or "elevator" in name]
    if not indices:
        raise TrimError("No pitch surface (horizontal tail or elevator) in the effector suite")
    return indices


def _trim_residual_norm(xdot, gravity):
    weighted = np.array([xdot[0] / gravity, xdot[1], xdot[2], xdot[3], xdot[4], xdot[5]])
    return float(np.linalg.norm(weighted))


def trim_level_flight(mach, altitude, params, model, suite, gravity=STANDARD_GRAVITY,
                      tolerance=1e-8, max_iterations=200):
    """Wings-level, zero-sideslip straight and level trim.

    Unknowns are angle of attack, symmetric pitch-surface deflection and a
    thrust coefficient; pitch attitude equals angle of attack.
    """
    if not 0.3 <= mach <= 1.2:
        raise DomainError(f"Trim Mach {mach} outside supported range [0.3, 1.2]")
    atmos = atmosphere(altitude)
    V = mach * atmos.speed_of_sound
    qbar_s = 0.5 * atmos.density * V * V * params.wing_area
    pitch = pitch_surface_indices(suite)

    def build(z):
        alpha, delta, thrust_coeff = z
        u = np.zeros(suite.count)
        u[pitch] = delta
        state = AircraftState(V=V, alpha=alpha, beta=0.0, p=0.0, q=0.0, r=0.0,
                              phi=0.0, theta=alpha, psi=0.0, h=altitude)
        ctx = FlightContext(model=model, params=params, thrust=thrust_coeff * qbar_s, gravity=gravity)
        return state, u, ctx

    def residual(z):
        state, u, ctx = build(z)
        xdot, _ = _derivative_vector(state.as_vector(), u, ctx, atmos)
        return np.array([xdot[0] / gravity, xdot[1], xdot[4]])

    best = None
    for alpha_guess in (0.05, 0.15, 0.0, 0.3):
        try:
            solution = so.root(residual, np.array([alpha_guess, 0.0, 0.03]), method="hybr",
                               options={"xtol": 1e-13, "maxfev": max_iterations * 4})
        except (DivergenceError, FloatingPointError) as e:
            logger.debug("Trim attempt from alpha=%.2f failed: %s", alpha_guess, e)
            continue
        state, u, ctx = build(solution.x)
        xdot, _ = _derivative_vector(state.as_vector(), u, ctx, atmos)
        norm = _trim_residual_norm(xdot, gravity)
        if best is None or norm < best[1]:
            best = (solution.x, norm)
        if norm < tolerance and np.all(u >= suite.lower) and np.all(u <= suite.upper):
            break

    if best is None:
        raise TrimError(f"Trim failed at Mach {mach}, {altitude} m: no solver attempt succeeded")
    z, norm = best
    state, u, ctx = build(z)
    if norm >= tolerance:
        raise TrimError(f"Trim did not converge at Mach {mach}, {altitude} m (residual {norm:.3e})",
                        residual=norm)
    if np.any(u < suite.lower) or np.any(u > suite.upper):
        raise TrimError(f"Trim deflection {u[pitch[0]]:.2f} deg exceeds pitch surface limits", residual=norm)
    if ctx.thrust < 0.0:
        logger.warning("Trim at Mach %.2f, %.0f m needs negative thrust (%.1f N)", mach, altitude, ctx.thrust)

    logger.info("Trim Mach %.2f h=%.0f m cg=%.2f: alpha=%.3f deg delta=%.3f deg thrust=%.1f N residual=%.2e",
                mach, altitude, params.cg, math.degrees(z[0]), z[1], ctx.thrust, norm)
    return TrimPoint(state=state, actuator=ActuatorState.at(u), thrust=ctx.thrust, residual=norm)
