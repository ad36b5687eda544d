import math
import os

import numpy as np
import pandas as pd
import pytest
import scipy.spatial as sp

from constants import OUTCOME_DIVERGED, OUTCOME_GUARD_TERMINATED, OUTCOME_STABLE, OUTCOME_UNSTABLE
from flight_elements import (
    TRIM_LITERAL, CommandProfile, ConfigError, ManeuverScenario, RunRecord, RunSettings, classify_stability,
    hull_volume, maneuver_achieved, run_scenario,
)
from flight_elements.harness import history_columns
from flight_elements.run_exporter import export_run, read_json
from flight_elements.sim_core import SimConfig

SCENARIO = {
    "schema_version": "1.0",
    "name": "unit",
    "initial": {"mach": 0.8, "altitude_m": 2000.0, "cg": 0.35},
    "commands": {"alpha_deg": [[0.0, "trim"], [1.0, 10.0]], "p_deg_s": 0.0},
    "guard_mode": "lyapunov",
    "duration_s": 4.0,
}


def _record(p, t=None, completed=True, outcome=OUTCOME_STABLE, **columns):
    t = np.linspace(0.0, 6.0, 601) if t is None else t
    p = np.broadcast_to(np.asarray(p, dtype=float), t.shape)
    history = pd.DataFrame({
        "time_s": t, "V_m_s": 250.0, "alpha_deg": 5.0, "beta_deg": 0.0,
        "p_deg_s": p, "q_deg_s": 0.0, "r_deg_s": 0.0,
        "alpha_cmd_deg": 5.0, "p_cmd_deg_s": 0.0,
    })
    for name, values in columns.items():
        history[name] = values
    scenario = ManeuverScenario.from_mapping(SCENARIO)
    return RunRecord(scenario=scenario, trim=None, history=history, completed=completed, outcome=outcome)


# --- Command profiles ---

def test_profile_parsing_and_lookup():
    assert CommandProfile.parse(5).value(3.0) == 5.0
    assert CommandProfile.parse(TRIM_LITERAL).value(3.0, trim_value=3.2) == 3.2
    profile = CommandProfile.parse([[0, 1], [2, 5]])
    assert profile.value(1.999) == 1.0
    assert profile.value(2.0) == 5.0
    assert profile.value(10.0) == 5.0
    assert profile.last_change == 2.0
    step = CommandProfile.step(TRIM_LITERAL, 12.0, 1.0)
    assert step.value(0.5, trim_value=2.0) == 2.0
    assert step.value(1.0, trim_value=2.0) == 12.0


@pytest.mark.parametrize("raw", [
    [[0.5, 1.0]],
    [[0.0, 1.0], [0.0, 2.0]],
    [[0.0, "x"]],
    [[0.0, float("nan")]],
    [[0.0]],
    {"a": 1},
    True,
])
def test_profile_validation(raw):
    with pytest.raises(ConfigError):
        CommandProfile.parse(raw)


# --- Scenarios ---

@pytest.mark.parametrize("name", ["maneuver_1", "maneuver_2", "trim_hold"])
def test_shipped_scenarios_load(name):
    scenario = ManeuverScenario.load(os.path.join("scenarios", f"{name}.yaml"))
    assert scenario.name == name
    assert scenario.alpha_cmd_deg.values[0] == TRIM_LITERAL
    assert scenario.beta_cmd_deg.value(scenario.duration_s) == 0.0


def test_scenario_from_mapping():
    scenario = ManeuverScenario.from_mapping(SCENARIO)
    assert scenario.guard_mode == "lyapunov"
    assert scenario.cg == 0.35
    assert scenario.with_guard("OFF").guard_mode == "off"
    assert scenario.p_cmd_deg_s.value(2.0) == 0.0


@pytest.mark.parametrize("patch", [
    {"initial": {"mach": 0.8, "altitude_m": 2000.0, "cg": 0.6}},
    {"initial": {"mach": 0.8}},
    {"guard_mode": "aggressive"},
    {"duration_s": 0.5},
    {"schema_version": "3.0"},
    {"commands": {"p_deg_s": 10.0}},
])
def test_scenario_validation(patch):
    with pytest.raises(ConfigError):
        ManeuverScenario.from_mapping(dict(SCENARIO, **patch))


def test_scheduled_runs_need_a_schedule(aircraft):
    scenario = ManeuverScenario.from_mapping(SCENARIO).with_guard("scheduled")
    with pytest.raises(ConfigError):
        run_scenario(scenario, aircraft)


# --- Classification ---

def test_decaying_rates_are_stable():
    t = np.linspace(0.0, 6.0, 601)
    assert classify_stability(_record(10.0 * np.exp(-t), t)) == OUTCOME_STABLE


def test_growing_rates_are_unstable():
    t = np.linspace(0.0, 6.0, 601)
    assert classify_stability(_record(np.exp(t), t)) == OUTCOME_UNSTABLE


def test_growth_below_the_floor_is_tolerated():
    t = np.linspace(0.0, 6.0, 601)
    assert classify_stability(_record(0.01 * np.exp(t), t)) == OUTCOME_STABLE


def test_excessive_rates_are_unstable():
    assert classify_stability(_record(2500.0)) == OUTCOME_UNSTABLE


def test_non_finite_history_diverged():
    t = np.linspace(0.0, 6.0, 601)
    p = np.zeros_like(t)
    p[-1] = math.nan
    assert classify_stability(_record(p, t)) == OUTCOME_DIVERGED


def test_incomplete_runs_keep_their_outcome():
    assert classify_stability(_record(0.0, completed=False, outcome=OUTCOME_DIVERGED)) == OUTCOME_DIVERGED
    assert classify_stability(_record(0.0, completed=False, outcome=OUTCOME_GUARD_TERMINATED)) == \
        OUTCOME_GUARD_TERMINATED
    assert classify_stability(_record(0.0, completed=False)) == OUTCOME_DIVERGED


def test_maneuver_achieved_within_tolerances():
    def achieved(alpha, p):
        return maneuver_achieved(_record(p, alpha_deg=alpha, alpha_cmd_deg=10.0, p_cmd_deg_s=100.0))

    assert achieved(10.5, 95.0)
    assert not achieved(10.5, 80.0)
    assert not achieved(13.0, 100.0)
    assert not maneuver_achieved(_record(0.0, outcome=OUTCOME_UNSTABLE))


def test_small_roll_commands_use_the_absolute_floor():
    assert maneuver_achieved(_record(8.0, p_cmd_deg_s=0.0))


def test_every_held_command_must_be_tracked():
    t = np.linspace(0.0, 6.0, 601)
    p_cmd = np.where(t < 3.0, 100.0, 0.0)
    assert maneuver_achieved(_record(p_cmd, t, p_cmd_deg_s=p_cmd))
    # Back on the final command but the first roll command was never flown.
    assert not maneuver_achieved(_record(0.0, t, p_cmd_deg_s=p_cmd))


def test_held_commands_are_judged_after_settling():
    t = np.linspace(0.0, 6.0, 601)
    alpha_cmd = np.where(t < 1.0, 5.0, 10.0)
    alpha = np.where(t < 2.0, 5.0, 10.0)
    assert maneuver_achieved(_record(0.0, t, alpha_deg=alpha, alpha_cmd_deg=alpha_cmd))
    late = np.where(t < 5.0, 5.0, 10.0)
    assert not maneuver_achieved(_record(0.0, t, alpha_deg=late, alpha_cmd_deg=alpha_cmd))


# --- Hull volume ---

CUBE = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])


def test_hull_volume_of_unit_cube():
    assert hull_volume(CUBE, [0.0, 0.0, 0.0], [1.0, 1.0, 1.0]) == (pytest.approx(1.0), False)
    assert hull_volume(2.0 * CUBE, [0.0, 0.0, 0.0], [2.0, 2.0, 2.0])[0] == pytest.approx(1.0)
    assert hull_volume(CUBE, [0.0, 0.0, 0.0], [2.0, 2.0, 2.0])[0] == pytest.approx(0.125)


def test_hull_volume_of_tetrahedron():
    points = np.vstack([np.zeros(3), np.eye(3)])
    volume, degenerate = hull_volume(points, np.zeros(3), np.ones(3))
    assert volume == pytest.approx(1.0 / 6.0)
    assert not degenerate


def test_hull_volume_matches_rejection_sampling(rng):
    lower, upper = np.array([0.0, -270.0, 0.6]), np.array([40.0, 270.0, 1.0])
    unit = rng.uniform(size=(40, 3))
    volume, degenerate = hull_volume(lower + unit * (upper - lower), lower, upper)
    inside = sp.Delaunay(unit).find_simplex(rng.uniform(size=(200_000, 3))) >= 0
    assert not degenerate
    assert volume == pytest.approx(inside.mean(), rel=0.02)


def test_degenerate_hulls_have_zero_volume():
    flat = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.5, 0.5, 0.0]])
    assert hull_volume(flat, np.zeros(3), np.ones(3)) == (0.0, True)
    assert hull_volume(CUBE[:3], np.zeros(3), np.ones(3)) == (0.0, True)
    assert hull_volume(np.empty((0, 3)), np.zeros(3), np.ones(3)) == (0.0, True)


def test_history_columns_follow_the_surface_suite(aircraft):
    columns = history_columns(aircraft.suite.names)
    assert columns[0] == "time_s"
    assert "u_left_aileron_deg" in columns and "u_cmd_rudder_deg" in columns
    assert len(columns) == len(set(columns))


# --- Closed loop ---

@pytest.fixture(scope="module")
def trim_hold_record(aircraft):
    scenario = ManeuverScenario.load(os.path.join("scenarios", "trim_hold.yaml"))
    return run_scenario(scenario, aircraft, RunSettings())


@pytest.fixture(scope="module")
def maneuver_record(aircraft):
    scenario = ManeuverScenario.load(os.path.join("scenarios", "maneuver_1.yaml"))
    return run_scenario(scenario, aircraft, RunSettings())


@pytest.fixture(scope="module")
def unguarded_maneuver_record(aircraft):
    scenario = ManeuverScenario.load(os.path.join("scenarios", "maneuver_1.yaml")).with_guard("off")
    return run_scenario(scenario, aircraft, RunSettings())


@pytest.mark.slow
def test_trim_hold_stays_at_trim(trim_hold_record):
    record = trim_hold_record
    h = record.history
    assert record.completed
    assert record.outcome == OUTCOME_STABLE
    assert record.maneuver_achieved
    assert len(h) == 500
    assert list(h.columns) == history_columns(["left_horizontal_tail", "right_horizontal_tail", "left_aileron",
                                               "right_aileron", "rudder"])
    trim_alpha = math.degrees(record.trim.state.alpha)
    assert np.allclose(h["alpha_deg"], trim_alpha, atol=0.5)
    assert h[["p_deg_s", "q_deg_s", "r_deg_s"]].abs().to_numpy().max() < 1.0
    assert (h["guard_active"] == 0).all()


@pytest.mark.slow
def test_guarded_commands_stay_within_active_limits(maneuver_record):
    h = maneuver_record.history
    assert len(h) > 0
    guarded = h[h["guard_active"] == 1]
    assert len(guarded) > 0
    for rate in ("p", "q", "r"):
        column = "p_cmd_guarded_deg_s" if rate == "p" else f"{rate}_cmd_deg_s"
        command, limit = guarded[column].to_numpy(), guarded[f"{rate}_lim_deg_s"].to_numpy()
        direction = np.sign(guarded[f"{rate}_deg_s"].to_numpy())
        direction = np.where(direction != 0.0, direction, np.sign(command))
        assert np.all(direction * (command - limit) <= 1e-9)
    assert (guarded["alpha_cmd_guarded_deg"] <= guarded["alpha_lim_deg"] + 1e-9).all()


@pytest.mark.slow
def test_guarded_maneuver_stays_bounded_with_attainable_demands(maneuver_record):
    record = maneuver_record
    h = record.history
    assert record.completed
    assert record.outcome == OUTCOME_STABLE
    assert len(h) == 1000
    assert np.isfinite(h[["V_m_s", "alpha_deg", "beta_deg", "p_deg_s", "q_deg_s", "r_deg_s"]].to_numpy()).all()
    assert (h["alloc_status"] != 2).all()
    assert h["alloc_residual"].max() < 1e-3
    assert (h.loc[h["loc_risk"] == 1, "guard_active"] == 1).all()
    assert h["demand_scale"].between(0.0, 1.0).all()
    # The guard holds the aircraft well short of the 25 and 40 deg pulls.
    assert not record.maneuver_achieved


@pytest.mark.slow
def test_unguarded_steps_stay_in_the_shrunk_set(maneuver_record):
    h = maneuver_record.history
    quiet = h[h["guard_active"] == 0]
    assert len(quiet) > 0
    assert (quiet["alloc_margin"] >= -1e-3).all()
    assert (quiet["demand_scale"] == 1.0).all()


@pytest.mark.slow
def test_unguarded_maneuver_departs_after_the_first_reversal(unguarded_maneuver_record):
    record = unguarded_maneuver_record
    h = record.history
    assert not record.completed
    assert record.outcome == OUTCOME_DIVERGED
    assert record.time_reached_s >= 3.0
    assert (h.loc[h["time_s"] < 1.0 - 1e-9, "loc_risk"] == 0).all()
    first_risk = h.loc[h["loc_risk"] == 1, "time_s"]
    assert len(first_risk) > 0
    assert first_risk.iloc[0] < record.time_reached_s
    assert record.summary()["first_loc_detection_s"] == pytest.approx(first_risk.iloc[0])
    assert (h["guard_active"] == 0).all()


@pytest.mark.slow
def test_divergence_thresholds_end_the_run_as_diverged(aircraft):
    scenario = ManeuverScenario.from_mapping(dict(SCENARIO, guard_mode="off"))
    record = run_scenario(scenario, aircraft, RunSettings(sim=SimConfig(max_alpha_deg=6.0)))
    assert not record.completed
    assert record.outcome == OUTCOME_DIVERGED
    assert "angle of attack" in record.termination_reason
    assert record.time_reached_s > 1.0


@pytest.mark.slow
def test_requested_ams_snapshots_are_recorded(maneuver_record):
    requested = set(maneuver_record.scenario.ams_snapshot_times_s)
    reached = {t for t in requested if t <= maneuver_record.time_reached_s}
    times = sorted(snapshot["time_s"] for snapshot in maneuver_record.ams_snapshots)
    assert times == pytest.approx(sorted(reached))
    for snapshot in maneuver_record.ams_snapshots:
        assert len(snapshot["demand"]) == 3
        assert snapshot["shrunk_iams"]["volume"] == pytest.approx(0.343 * snapshot["iams"]["volume"], rel=1e-9)


@pytest.mark.slow
def test_run_export(trim_hold_record, tmp_path):
    paths = export_run(trim_hold_record, tmp_path)
    assert set(paths) == {"history", "summary"}
    history = pd.read_csv(paths["history"])
    assert list(history.columns) == list(trim_hold_record.history.columns)
    summary = read_json(paths["summary"])
    assert summary["outcome"] == OUTCOME_STABLE
    assert summary["first_loc_detection_s"] is None
    assert summary["trim"]["residual"] < 1e-8
