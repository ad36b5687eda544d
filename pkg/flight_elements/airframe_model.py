# flight_elements/airframe_model.py
"""Airframe constants, standard atmosphere, the polynomial aerodynamic model
and the control-effectiveness Jacobian."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from constants import AERO_MODEL_SCHEMA, ATMOSPHERE_MAX_ALTITUDE_M, STANDARD_GRAVITY
from .data_files import check_schema_version, load_yaml_file, require_keys
from .errors import ConfigError, DomainError, EffectivenessError, ModelFileError

logger = logging.getLogger(__name__)

# --- International Standard Atmosphere ---
SEA_LEVEL_TEMPERATURE = 288.15
SEA_LEVEL_PRESSURE = 101325.0
LAPSE_RATE = 0.0065
TROPOPAUSE_ALTITUDE = 11000.0
GAS_CONSTANT_AIR = 287.05287
HEAT_CAPACITY_RATIO = 1.4

# --- Model Variables ---
STATE_VARIABLES = ("alpha", "beta", "p_hat", "q_hat", "r_hat")
ANGLE_STATE_VARIABLES = ("alpha", "beta")
OUTPUTS = ("CD", "CY", "CL", "Cl", "Cm", "Cn")
CG_RANGE = (0.2, 0.45)


@dataclass(frozen=True)
class AtmosphereState:
    density: float
    speed_of_sound: float
    temperature: float
    pressure: float


def atmosphere(altitude):
    """ISA troposphere and lower stratosphere, valid from 0 to 20 km."""
    if not math.isfinite(altitude) or altitude < 0.0 or altitude > ATMOSPHERE_MAX_ALTITUDE_M:
        raise DomainError(
            f"Altitude {altitude} m outside supported range [0, {ATMOSPHERE_MAX_ALTITUDE_M:.0f}] m"
        )
    exponent = STANDARD_GRAVITY / (LAPSE_RATE * GAS_CONSTANT_AIR)
    if altitude <= TROPOPAUSE_ALTITUDE:
        temperature = SEA_LEVEL_TEMPERATURE - LAPSE_RATE * altitude
        pressure = SEA_LEVEL_PRESSURE * (temperature / SEA_LEVEL_TEMPERATURE) ** exponent
    else:
        temperature = SEA_LEVEL_TEMPERATURE - LAPSE_RATE * TROPOPAUSE_ALTITUDE
        tropopause_pressure = SEA_LEVEL_PRESSURE * (temperature / SEA_LEVEL_TEMPERATURE) ** exponent
        pressure = tropopause_pressure * math.exp(
            -STANDARD_GRAVITY * (altitude - TROPOPAUSE_ALTITUDE) / (GAS_CONSTANT_AIR * temperature)
        )
    density = pressure / (GAS_CONSTANT_AIR * temperature)
    speed_of_sound = math.sqrt(HEAT_CAPACITY_RATIO * GAS_CONSTANT_AIR * temperature)
    return AtmosphereState(density, speed_of_sound, temperature, pressure)


@dataclass(frozen=True, eq=False)
class AirframeParameters:
    """Mass properties and reference geometry. ``cg`` is a fraction of the chord."""

    mass: float
    inertia: np.ndarray
    wing_area: float
    span: float
    chord: float
    cg: float

    def __post_init__(self):
        inertia = np.array(self.inertia, dtype=float)
        if inertia.shape != (3, 3):
            raise DomainError("Inertia tensor must be 3x3")
        if not np.allclose(inertia, inertia.T, rtol=0.0, atol=1e-9 * np.abs(inertia).max()):
            raise DomainError("Inertia tensor must be symmetric")
        try:
            np.linalg.cholesky(inertia)
        except np.linalg.LinAlgError as e:
            raise DomainError("Inertia tensor must be positive definite") from e
        for name in ("mass", "wing_area", "span", "chord"):
            if not getattr(self, name) > 0.0:
                raise DomainError(f"{name} must be positive")
        if not CG_RANGE[0] <= self.cg <= CG_RANGE[1]:
            raise DomainError(f"CG {self.cg} outside supported range {CG_RANGE}")
        inertia.setflags(write=False)
        inverse = np.linalg.inv(inertia)
        inverse.setflags(write=False)
        object.__setattr__(self, "inertia", inertia)
        object.__setattr__(self, "inertia_inv", inverse)

    def with_cg(self, cg):
        return replace(self, cg=cg)


@dataclass(frozen=True, eq=False)
class EffectorSuite:
    """Position limits, rate limits and lag per surface, all in degrees/seconds."""

    names: tuple
    lower: np.ndarray
    upper: np.ndarray
    rate: np.ndarray
    lag: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("lower", "upper", "rate", "lag"):
            values = np.array(getattr(self, name), dtype=float)
            if values.shape != (len(self.names),):
                raise DomainError(f"Effector field '{name}' must have one value per surface")
            values.setflags(write=False)
            arrays[name] = values
        if np.any(arrays["lower"] >= arrays["upper"]):
            raise DomainError("Every surface needs min_deg < max_deg")
        if np.any(arrays["rate"] <= 0.0):
            raise DomainError("Every surface needs a positive rate limit")
        if np.any(arrays["lag"] < 0.0):
            raise DomainError("Actuator lag time constants must be non-negative")
        object.__setattr__(self, "names", tuple(self.names))
        for name, values in arrays.items():
            object.__setattr__(self, name, values)

    @property
    def count(self):
        return len(self.names)

    def clip(self, u_deg):
        return np.clip(u_deg, self.lower, self.upper)

    @classmethod
    def from_records(cls, records):
        if not records:
            raise ConfigError("Effector list is empty")
        try:
            return cls(
                names=tuple(str(r["name"]) for r in records),
                lower=[float(r["min_deg"]) for r in records],
                upper=[float(r["max_deg"]) for r in records],
                rate=[float(r["rate_deg_s"]) for r in records],
                lag=[float(r.get("lag_s", 0.0)) for r in records],
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid effector record: {e}") from e


@dataclass(frozen=True)
class AeroCoefficients:
    CD: float
    CY: float
    CL: float
    Cl: float
    Cm: float
    Cn: float
    CLq: float
    CDq: float
    CYr: float
    extrapolated: bool = False

    @property
    def moments(self):
        return np.array([self.Cl, self.Cm, self.Cn])

    def body_axis(self, alpha):
        """Returns (CX, CY, CZ) with lift and drag rotated through ``alpha``."""
        ca, sa = math.cos(alpha), math.sin(alpha)
        return (
            -self.CD * ca + self.CL * sa,
            self.CY,
            -self.CD * sa - self.CL * ca,
        )


class AeroModel:
    """Multivariate polynomial aerodynamic model.

    Each output is a sum of terms ``coef * prod(var_i ** k_i)`` over the
    variables alpha, beta, p_hat, q_hat, r_hat and one deflection per surface.
    Angles are stored in degrees in the file and converted to radians here.
    """

    def __init__(self, name, surface_names, exponents, coefficients,
                 alpha_range, beta_range, reference_cg, schema_version=AERO_MODEL_SCHEMA):
        self.name = name
        self.surface_names = tuple(surface_names)
        self.variables = STATE_VARIABLES + self.surface_names
        self.alpha_range = tuple(float(v) for v in alpha_range)
        self.beta_range = tuple(float(v) for v in beta_range)
        self.reference_cg = float(reference_cg)
        self.schema_version = str(schema_version)

        self._exponents = np.array(exponents, dtype=np.int64).reshape(-1, len(self.variables))
        self._coefficients = np.array(coefficients, dtype=float).reshape(-1, len(OUTPUTS))
        self._exponents.setflags(write=False)
        self._coefficients.setflags(write=False)
        self._derivatives = {
            var: self._derivative_terms(self.variables.index(var)) for var in ("q_hat", "r_hat")
        }

    @property
    def term_count(self):
        return self._exponents.shape[0]

    def _derivative_terms(self, k):
        exponents = self._exponents.copy()
        powers = exponents[:, k]
        coefficients = self._coefficients * powers[:, None]
        exponents[powers > 0, k] -= 1
        return exponents, coefficients

    @classmethod
    def from_mapping(cls, data, source="<mapping>"):
        """Builds a model from a parsed model file mapping."""
        check_schema_version(data, AERO_MODEL_SCHEMA, f"Aero model {source}", ModelFileError)
        try:
            require_keys(data, ("reference_cg", "validity", "coefficients"), f"Aero model {source}")
        except ConfigError as e:
            raise ModelFileError(str(e)) from e

        if "surfaces" in data:
            surfaces = tuple(str(s) for s in data["surfaces"])
        else:
            surfaces = tuple(str(r["name"]) for r in data.get("effectors", []))
        variables = STATE_VARIABLES + surfaces
        angle_mask = np.array(
            [v in ANGLE_STATE_VARIABLES or v in surfaces for v in variables], dtype=bool
        )

        validity = data["validity"]
        try:
            alpha_range = np.radians([float(x) for x in validity["alpha_deg"]])
            beta_range = np.radians([float(x) for x in validity["beta_deg"]])
        except (KeyError, TypeError, ValueError) as e:
            raise ModelFileError(f"Aero model {source}: invalid validity envelope: {e}") from e
        if len(alpha_range) != 2 or len(beta_range) != 2:
            raise ModelFileError(f"Aero model {source}: validity ranges need two values")

        exponents, coefficients = [], []
        for output, terms in (data["coefficients"] or {}).items():
            if output not in OUTPUTS:
                raise ModelFileError(f"Aero model {source}: unknown coefficient '{output}'")
            for term in terms or []:
                row, coef = cls._parse_term(term, variables, output, source)
                scale = (180.0 / math.pi) ** int(row[angle_mask].sum())
                column = np.zeros(len(OUTPUTS))
                column[OUTPUTS.index(output)] = coef * scale
                exponents.append(row)
                coefficients.append(column)

        model = cls(
            name=str(data.get("name", source)),
            surface_names=surfaces,
            exponents=np.array(exponents, dtype=np.int64).reshape(-1, len(variables)),
            coefficients=np.array(coefficients, dtype=float).reshape(-1, len(OUTPUTS)),
            alpha_range=alpha_range,
            beta_range=beta_range,
            reference_cg=float(data["reference_cg"]),
            schema_version=str(data["schema_version"]),
        )
        logger.info("Loaded aero model '%s' (%d terms, %d surfaces)", model.name, model.term_count, len(surfaces))
        return model

    @staticmethod
    def _parse_term(term, variables, output, source):
        if not isinstance(term, dict) or "coef" not in term:
            raise ModelFileError(f"Aero model {source}: {output} term needs a 'coef' entry: {term!r}")
        try:
            coef = float(term["coef"])
        except (TypeError, ValueError) as e:
            raise ModelFileError(f"Aero model {source}: bad coefficient in {output}: {term!r}") from e
        row = np.zeros(len(variables), dtype=np.int64)
        for name, power in term.items():
            if name == "coef":
                continue
            if name not in variables:
                raise ModelFileError(f"Aero model {source}: unknown variable '{name}' in {output}")
            if isinstance(power, bool) or not isinstance(power, int) or power < 0:
                raise ModelFileError(
                    f"Aero model {source}: exponent of '{name}' in {output} must be a non-negative integer"
                )
            row[variables.index(name)] = power
        return row, coef

    # --- Evaluation ---

    def variable_vector(self, state, u_deg, params):
        """Returns (z, extrapolated) with angles in radians and nondimensional rates."""
        alpha = min(max(state.alpha, self.alpha_range[0]), self.alpha_range[1])
        beta = min(max(state.beta, self.beta_range[0]), self.beta_range[1])
        extrapolated = alpha != state.alpha or beta != state.beta
        two_v = 2.0 * state.V
        z = np.empty(len(self.variables))
        z[0] = alpha
        z[1] = beta
        z[2] = state.p * params.span / two_v
        z[3] = state.q * params.chord / two_v
        z[4] = state.r * params.span / two_v
        z[5:] = np.radians(u_deg)
        return z, extrapolated

    def evaluate(self, z):
        """Raw outputs (CD, CY, CL, Cl, Cm, Cn) about the reference CG for rows of ``z``."""
        z = np.atleast_2d(z)
        monomials = np.prod(z[:, None, :] ** self._exponents[None, :, :], axis=2)
        return monomials @ self._coefficients

    def derivative(self, z, variable):
        """Partial derivatives of every output with respect to ``q_hat`` or ``r_hat``."""
        exponents, coefficients = self._derivatives[variable]
        z = np.atleast_2d(z)
        monomials = np.prod(z[:, None, :] ** exponents[None, :, :], axis=2)
        return monomials @ coefficients

    def transfer_moments(self, raw, alpha, params):
        """Moves (Cl, Cm, Cn) from the reference CG to ``params.cg``.

        ``raw`` has rows (CD, CY, CL, Cl, Cm, Cn); returns an (N, 3) array.
        """
        raw = np.atleast_2d(raw)
        cz = -raw[:, 0] * math.sin(alpha) - raw[:, 2] * math.cos(alpha)
        arm = self.reference_cg - params.cg
        moments = raw[:, 3:6].copy()
        moments[:, 1] += cz * arm
        moments[:, 2] -= raw[:, 1] * arm * params.chord / params.span
        return moments


def aero_coefficients(model, state, u_deg, params):
    """Force and moment coefficients at the aircraft CG, plus rate derivatives."""
    z, extrapolated = model.variable_vector(state, u_deg, params)
    raw = model.evaluate(z)
    moments = model.transfer_moments(raw, z[0], params)[0]
    d_q = model.derivative(z, "q_hat")[0]
    d_r = model.derivative(z, "r_hat")[0]
    if extrapolated:
        logger.debug("Aero query outside validity envelope at alpha=%.2f deg beta=%.2f deg",
                     math.degrees(state.alpha), math.degrees(state.beta))
    return AeroCoefficients(
        CD=float(raw[0, 0]),
        CY=float(raw[0, 1]),
        CL=float(raw[0, 2]),
        Cl=float(moments[0]),
        Cm=float(moments[1]),
        Cn=float(moments[2]),
        CLq=float(d_q[2]),
        CDq=float(d_q[0]),
        CYr=float(d_r[1]),
        extrapolated=extrapolated,
    )


def moment_coefficients(model, state, u_batch_deg, params):
    """(Cl, Cm, Cn) at the CG for each row of deflections in ``u_batch_deg``."""
    u_batch_deg = np.atleast_2d(u_batch_deg)
    z0, _ = model.variable_vector(state, u_batch_deg[0], params)
    z = np.tile(z0, (u_batch_deg.shape[0], 1))
    z[:, 5:] = np.radians(u_batch_deg)
    return model.transfer_moments(model.evaluate(z), z0[0], params)


def control_effectiveness(model, state, u0_deg, params, suite, step_deg=0.1):
    """Jacobian of (Cl, Cm, Cn) with respect to deflections, per radian.

    Central differences with step ``step_deg``; a forward or backward
    difference is used for a surface closer than one step to a limit.
    """
    u0 = np.asarray(u0_deg, dtype=float)
    m = u0.size
    h_rad = math.radians(step_deg)

    batch = np.tile(u0, (2 * m + 1, 1))
    for j in range(m):
        batch[1 + 2 * j, j] += step_deg
        batch[2 + 2 * j, j] -= step_deg
    moments = moment_coefficients(model, state, batch, params)

    phi = np.empty((3, m))
    for j in range(m):
        plus, minus, center = moments[1 + 2 * j], moments[2 + 2 * j], moments[0]
        room_up = u0[j] + step_deg <= suite.upper[j]
        room_down = u0[j] - step_deg >= suite.lower[j]
        if room_up and not room_down:
            column = (plus - center) / h_rad
        elif room_down and not room_up:
            column = (center - minus) / h_rad
        else:
            column = (plus - minus) / (2.0 * h_rad)
        if not np.all(np.isfinite(column)):
            raise EffectivenessError(
                f"Non-finite control effectiveness for surface '{suite.names[j]}'", surface_index=j
            )
        phi[:, j] = column
    return phi


class AircraftDefinition(NamedTuple):
    model: AeroModel
    params: AirframeParameters
    suite: EffectorSuite


def load_aircraft(path):
    """Loads aero model, airframe parameters and effector suite from one model file."""
    data = load_yaml_file(path, "aero model file")
    model = AeroModel.from_mapping(data, source=str(path))
    try:
        require_keys(data, ("airframe", "effectors"), f"Aero model {path}")
        frame = data["airframe"]
        params = AirframeParameters(
            mass=float(frame["mass_kg"]),
            inertia=np.array(frame["inertia_kg_m2"], dtype=float),
            wing_area=float(frame["wing_area_m2"]),
            span=float(frame["span_m"]),
            chord=float(frame["chord_m"]),
            cg=float(frame.get("cg", model.reference_cg)),
        )
    except (KeyError, TypeError, ValueError, DomainError, ConfigError) as e:
        raise ModelFileError(f"Aero model {path}: invalid airframe section: {e}") from e
    suite = EffectorSuite.from_records(data["effectors"])
    if suite.names != model.surface_names:
        raise ModelFileError(f"Aero model {path}: effector list does not match model surfaces")
    return AircraftDefinition(model, params, suite)
