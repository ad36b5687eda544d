# flight_elements/indi_control.py
"""Two-loop dynamic inversion: an alpha/beta outer loop commanding pitch and
yaw rate, and a p/q/r inner loop producing moment-coefficient demands."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import ConfigError, SingularGMatrixError

logger = logging.getLogger(__name__)

SINGULAR_DETERMINANT = 1e-10


@dataclass(frozen=True)
class ControllerGains:
    """Proportional bandwidths (1/s) of the five control channels."""

    alpha: float = 2.5
    beta: float = 1.0
    p: float = 10.0
    q: float = 10.0
    r: float = 5.0

    def __post_init__(self):
        for name in ("alpha", "beta", "p", "q", "r"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ConfigError(f"Controller gain '{name}' must be positive, got {value}")

    @property
    def angle(self):
        return np.array([self.alpha, self.beta])

    @property
    def rate(self):
        return np.array([self.p, self.q, self.r])


@dataclass(frozen=True)
class PilotCommand:
    alpha: float
    beta: float = 0.0
    p: float = 0.0


@dataclass(frozen=True, eq=False)
class MomentDemand:
    """Demanded (Cl, Cm, Cn): ``tau_c`` for the surfaces, ``total`` about the CG."""

    tau_c: np.ndarray
    total: np.ndarray
    baseline: np.ndarray


class GMatrix(NamedTuple):
    matrix: np.ndarray
    condition: float
    determinant: float


def _as_matrix(G):
    return np.asarray(getattr(G, "matrix", G), dtype=float)


def g_matrix(state, params, atmos, aero):
    """Sensitivity of (alpha_dot, beta_dot) to (q, r) at the current state."""
    rho, S, c, b, m = atmos.density, params.wing_area, params.chord, params.span, params.mass
    ca, sa = math.cos(state.alpha), math.sin(state.alpha)
    cb, sb = math.cos(state.beta), math.sin(state.beta)

    matrix = np.array([
        [1.0 - rho * S * c * aero.CLq / (4.0 * m * cb), -math.tan(state.beta) * sa],
        [rho * S * c * aero.CDq / (4.0 * m) * sb * (1.0 - cb), rho * S * b * aero.CYr / (4.0 * m) * cb * cb - ca],
    ])
    determinant = float(np.linalg.det(matrix))
    if abs(determinant) < SINGULAR_DETERMINANT:
        raise SingularGMatrixError(f"Outer-loop matrix is singular (det={determinant:.3e})", determinant)
    return GMatrix(matrix=matrix, condition=float(np.linalg.cond(matrix)), determinant=determinant)


def outer_loop(cmd, state, angle_rates0, rates0, G, gains):
    """Returns (q_cmd, r_cmd) that realize first-order alpha and beta tracking."""
    virtual = np.array([
        gains.alpha * (cmd.alpha - state.alpha),
        gains.beta * (cmd.beta - state.beta),
    ])
    increment = np.linalg.solve(_as_matrix(G), virtual - np.asarray(angle_rates0, dtype=float))
    return increment + np.asarray(rates0, dtype=float)


def inner_loop(rate_cmd, state, params, dynamic_pressure, gains, baseline=None):
    """Moment coefficients from Euler's equations with first-order rate tracking.

    ``baseline`` is the airframe moment with the surface contribution removed;
    ``tau_c`` is what the surfaces must add on top of it.
    """
    omega = state.omega
    J = params.inertia
    virtual = gains.rate * (np.asarray(rate_cmd, dtype=float) - omega)
    moment = J @ virtual + np.cross(omega, J @ omega)
    arms = dynamic_pressure * params.wing_area * np.array([params.span, params.chord, params.span])
    total = moment / arms
    baseline = np.zeros(3) if baseline is None else np.asarray(baseline, dtype=float)
    return MomentDemand(tau_c=total - baseline, total=total, baseline=baseline)


class AngleRateDifferentiator:
    """Second-order low-pass differentiator for measured alpha and beta.

    Each channel is the state-variable filter x1' = x2,
    x2' = wn^2 (y - x1) - 2 zeta wn x2, discretized exactly for a held input.
    """

    def __init__(self, bandwidth, damping, dt):
        if bandwidth <= 0.0 or damping <= 0.0 or dt <= 0.0:
            raise ConfigError("Differentiator bandwidth, damping and step must be positive")
        A = np.array([[0.0, 1.0], [-bandwidth ** 2, -2.0 * damping * bandwidth]])
        B = np.array([0.0, bandwidth ** 2])
        self._Ad = scipy.linalg.expm(A * dt)
        self._Bd = np.linalg.solve(A, (self._Ad - np.eye(2)) @ B)
        self._states = None

    def reset(self, angles):
        angles = np.asarray(angles, dtype=float)
        self._states = np.column_stack([angles, np.zeros_like(angles)])

    def update(self, angles):
        """Feeds one sample of (alpha, beta) and returns the filtered rates."""
        angles = np.asarray(angles, dtype=float)
        if self._states is None:
            self.reset(angles)
        self._states = self._states @ self._Ad.T + np.outer(angles, self._Bd)
        return self._states[:, 1].copy()
