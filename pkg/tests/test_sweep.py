import logging
import os

import pytest

from constants import (
    DEFAULT_LIMITER_SCHEDULE_FILE, DEFAULT_MODEL_FILE, GRID_COLUMNS, OUTCOME_ERROR, OUTCOME_STABLE,
)
from flight_elements import ConfigError, RunSettings
from sweep_process_core import (
    SweepConfig, SweepPoint, _init_worker, build_grid, expand_grid, expansion, monte_carlo_sweep, point_scenario,
    run_sweep_point, summarize_sweep,
)

OUTCOMES = {"stable", "unstable", "diverged", "guard-terminated", "trim-failed", "error"}

SWEEP = {
    "schema_version": "1.0",
    "name": "unit",
    "altitudes_m": [0.0],
    "mach": {"start": 0.6, "stop": 1.0, "step": 0.2},
    "alpha_cmd_deg": [0.0, 20.0, 40.0],
    "p_cmd_deg_s": {"min": -270.0, "max": 270.0, "count": 3},
    "guard_modes": ["scheduled", "lyapunov"],
}


def test_default_sweep_has_enough_cases():
    sweep = SweepConfig.load(os.path.join("scenarios", "sweep_default.yaml"))
    assert sweep.cases_per_altitude == 3125
    assert sweep.altitudes_m == (0.0, 3048.0)
    assert sweep.mach == (0.6, 0.7, 0.8, 0.9, 1.0)
    assert len(sweep.alpha_cmd_deg) == 25 and sweep.alpha_cmd_deg[-1] == 40.0
    assert sweep.p_cmd_deg_s[:2] == (-270.0, -247.5)
    assert sweep.guard_modes == ("scheduled", "lyapunov")


def test_small_sweeps_are_flagged(caplog):
    with caplog.at_level(logging.WARNING, logger="sweep_process_core"):
        sweep = SweepConfig.load(os.path.join("scenarios", "sweep_smoke.yaml"))
    assert sweep.cases_per_altitude == 8
    assert "fewer than 3000" in caplog.text


@pytest.mark.parametrize("patch", [
    {"step_time_s": 6.0, "duration_s": 6.0},
    {"altitudes_m": []},
    {"guard_modes": ["sometimes"]},
    {"p_cmd_deg_s": {"min": 0.0, "max": 1.0, "count": 0}},
    {"mach": {"start": 0.6}},
    {"cg": 0.1},
])
def test_sweep_validation(patch):
    with pytest.raises(ConfigError):
        SweepConfig.from_mapping(dict(SWEEP, **patch))


def test_grid_expansion_order():
    sweep = SweepConfig.from_mapping(SWEEP)
    points = expand_grid(sweep)
    assert len(points) == 2 * 27
    assert [p.index for p in points] == list(range(54))
    assert points[0] == SweepPoint(0, 0.0, 0.6, 0.0, -270.0, "scheduled")
    assert points[1].p_cmd_deg_s == 0.0
    assert points[27].guard_mode == "lyapunov"
    assert points[-1] == SweepPoint(53, 0.0, 1.0, 40.0, 270.0, "lyapunov")


def test_point_scenario_steps_from_trim():
    sweep = SweepConfig.from_mapping(SWEEP)
    scenario = point_scenario(SweepPoint(7, 0.0, 0.8, 20.0, -270.0, "lyapunov"), sweep)
    assert scenario.name == "unit_00007"
    assert scenario.alpha_cmd_deg.value(0.5, trim_value=3.0) == 3.0
    assert scenario.alpha_cmd_deg.value(1.0, trim_value=3.0) == 20.0
    assert scenario.p_cmd_deg_s.value(1.0) == -270.0
    assert scenario.beta_cmd_deg.value(3.0) == 0.0
    assert scenario.duration_s == 6.0


def _synthetic_grid(sweep):
    rows = []
    for point in expand_grid(sweep):
        if point.guard_mode == "lyapunov":
            stable = achieved = True
        else:
            stable = point.alpha_cmd_deg <= 20.0
            achieved = stable and point.p_cmd_deg_s >= 0.0
        row = point._asdict()
        row.update(outcome=OUTCOME_STABLE if stable else "unstable", stable=stable, maneuver_achieved=achieved,
                   error="")
        rows.append(row)
    return build_grid(rows[::-1])


def test_build_grid_sorts_by_index():
    sweep = SweepConfig.from_mapping(SWEEP)
    grid = _synthetic_grid(sweep)
    assert list(grid.columns) == list(GRID_COLUMNS)
    assert grid["index"].tolist() == list(range(54))


def test_summary_volumes_and_expansion():
    sweep = SweepConfig.from_mapping(SWEEP)
    summary = summarize_sweep(_synthetic_grid(sweep), sweep)
    entry = summary["altitudes"]["0"]
    scheduled, lyapunov = entry["modes"]["scheduled"], entry["modes"]["lyapunov"]
    assert scheduled["stable_points"] == 18
    assert scheduled["stable_volume_uc"] == pytest.approx(0.5)
    assert scheduled["maneuverable_volume_uc"] == pytest.approx(0.25)
    assert lyapunov["stable_volume_uc"] == pytest.approx(1.0)
    assert entry["stable_expansion_pct"] == pytest.approx(100.0)
    assert entry["maneuverable_expansion_pct"] == pytest.approx(300.0)
    assert scheduled["asymmetry"]["direction"] == "positive"
    assert lyapunov["asymmetry"]["direction"] == "symmetric"
    assert summary["normalization"]["lower"] == [0.0, -270.0, 0.6]
    assert summary["trim_failures"] == 0


def test_expansion_needs_a_baseline_volume():
    assert expansion(1.2, 1.0) == pytest.approx(20.0)
    assert expansion(1.0, 0.0) is None


def test_failed_points_are_recorded_not_raised():
    sweep = SweepConfig.from_mapping(SWEEP)
    _init_worker(DEFAULT_MODEL_FILE, None, RunSettings(), sweep, None)
    row = run_sweep_point(SweepPoint(0, 0.0, 5.0, 5.0, 0.0, "lyapunov"))
    assert row["outcome"] == OUTCOME_ERROR
    assert not row["stable"] and not row["maneuver_achieved"]
    assert "Mach" in row["error"]


@pytest.mark.slow
@pytest.mark.parametrize("jobs", [1, 2])
def test_sweep_results_do_not_depend_on_execution_order(jobs):
    sweep = SweepConfig.load(os.path.join("scenarios", "sweep_smoke.yaml"))
    points = expand_grid(sweep)
    chosen = [points[0], points[5]]
    result = monte_carlo_sweep(sweep, DEFAULT_MODEL_FILE, DEFAULT_LIMITER_SCHEDULE_FILE, RunSettings(),
                               jobs=jobs, points=chosen[::-1])
    grid = result.grid
    assert grid["index"].tolist() == [0, 5]
    assert set(grid["outcome"]) <= OUTCOMES
    assert (grid["stable"] == (grid["outcome"] == OUTCOME_STABLE)).all()
    assert result.summary["points"] == 2


@pytest.mark.slow
def test_lyapunov_guard_widens_the_stable_region_at_aft_cg():
    sweep = SweepConfig.from_mapping(dict(SWEEP, mach={"start": 0.6, "stop": 0.7, "step": 0.1},
                                          p_cmd_deg_s=[-90.0, 90.0], cg=0.35))
    result = monte_carlo_sweep(sweep, DEFAULT_MODEL_FILE, DEFAULT_LIMITER_SCHEDULE_FILE, RunSettings(), jobs=2)
    grid = result.grid
    assert len(grid) == 24
    assert (grid["outcome"] != OUTCOME_ERROR).all()
    entry = result.summary["altitudes"]["0"]
    scheduled, lyapunov = entry["modes"]["scheduled"], entry["modes"]["lyapunov"]
    assert lyapunov["stable_points"] == lyapunov["points"] == 12
    # The schedule lets the 40 deg commands through past the departure angle.
    assert scheduled["stable_points"] < scheduled["points"]
    assert not grid.loc[(grid["guard_mode"] == "scheduled") & (grid["alpha_cmd_deg"] == 40.0), "stable"].all()
    assert lyapunov["stable_volume_uc"] > 1.1 * scheduled["stable_volume_uc"]
    if entry["stable_expansion_pct"] is not None:
        assert entry["stable_expansion_pct"] > 10.0
    for mode in (scheduled, lyapunov):
        assert mode["asymmetry"]["direction"] in {"positive", "negative", "symmetric"}
