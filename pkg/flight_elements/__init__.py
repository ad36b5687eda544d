# flight_elements/__init__.py
from .errors import (
    AllocationError, ConfigError, DivergenceError, DomainError, EffectivenessError, ExportError,
    FlightSimError, ModelFileError, SingularGMatrixError, TrimError,
)
from .airframe_model import (
    AeroCoefficients, AeroModel, AircraftDefinition, AirframeParameters, AtmosphereState, EffectorSuite,
    aero_coefficients, atmosphere, control_effectiveness, load_aircraft,
)
from .sim_core import (
    ActuatorState, AircraftState, FlightContext, SimConfig, TrimPoint, actuator_step, linearize,
    state_derivative, step_rk4, trim_level_flight,
)
from .indi_control import (
    AngleRateDifferentiator, ControllerGains, GMatrix, MomentDemand, PilotCommand, g_matrix, inner_loop,
    outer_loop,
)
from .control_alloc import AllocationProblem, AllocationResult, AllocationStatus, ControlAllocator, allocate
from .moment_set import IncrementBounds, MomentSetPolytope, build_iams, contains, incremental_bounds, shrink
from .loc_guard import (
    CommandGuard, GuardMode, GuardSettings, LimiterSchedule, LyapunovGain, SaturationLimits, alpha_saturation,
    apply_guard, detect, fit_demand, rate_saturation, scheduled_limits, stabilizing_moments,
)
from .harness import (
    TRIM_LITERAL, CommandProfile, ManeuverScenario, RunRecord, RunSettings, StabilityCriteria, TrackingCriteria,
    classify_stability, hull_volume, maneuver_achieved, run_scenario,
)
