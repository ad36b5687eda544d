import copy
import math

import numpy as np
import pytest

from constants import DEFAULT_MODEL_FILE
from flight_elements import AeroModel, AirframeParameters, AircraftState, EffectorSuite, load_aircraft
from flight_elements.sim_core import trim_level_flight

TINY_MODEL = {
    "schema_version": "1.0",
    "name": "tiny",
    "reference_cg": 0.25,
    "validity": {"alpha_deg": [-10.0, 30.0], "beta_deg": [-20.0, 20.0]},
    "surfaces": ["elevator", "aileron", "rudder"],
    "coefficients": {
        "CD": [{"coef": 0.03}, {"coef": 0.001, "alpha": 2}],
        "CY": [{"coef": -0.02, "beta": 1}, {"coef": 0.002, "rudder": 1}],
        "CL": [{"coef": 0.1}, {"coef": 0.08, "alpha": 1}, {"coef": 3.0, "q_hat": 1}],
        "Cl": [{"coef": -0.002, "beta": 1}, {"coef": -0.3, "p_hat": 1}, {"coef": 0.002, "aileron": 1}],
        "Cm": [{"coef": -0.01, "alpha": 1}, {"coef": -4.0, "q_hat": 1}, {"coef": -0.01, "elevator": 1}],
        "Cn": [{"coef": 0.001, "beta": 1}, {"coef": -0.2, "r_hat": 1}, {"coef": -0.001, "rudder": 1}],
    },
}


@pytest.fixture(scope="session")
def aircraft():
    return load_aircraft(DEFAULT_MODEL_FILE)


@pytest.fixture(scope="session")
def aft_params(aircraft):
    return aircraft.params.with_cg(0.35)


@pytest.fixture(scope="session")
def trim_point(aircraft, aft_params):
    return trim_level_flight(0.8, 2000.0, aft_params, aircraft.model, aircraft.suite)


@pytest.fixture
def diagonal_params():
    return AirframeParameters(
        mass=1000.0,
        inertia=np.diag([1000.0, 5000.0, 6000.0]),
        wing_area=20.0,
        span=10.0,
        chord=2.0,
        cg=0.25,
    )


@pytest.fixture
def tiny_mapping():
    return copy.deepcopy(TINY_MODEL)


@pytest.fixture
def tiny_model(tiny_mapping):
    return AeroModel.from_mapping(tiny_mapping, source="tiny")


@pytest.fixture
def tiny_suite():
    return EffectorSuite(
        names=("elevator", "aileron", "rudder"),
        lower=[-25.0, -20.0, -30.0],
        upper=[25.0, 20.0, 30.0],
        rate=[60.0, 80.0, 120.0],
        lag=[0.0, 0.0, 0.0],
    )


@pytest.fixture
def level_state():
    return AircraftState(V=200.0, alpha=math.radians(4.0), beta=0.0, p=0.0, q=0.0, r=0.0,
                         phi=0.0, theta=math.radians(4.0), psi=0.0, h=1000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
