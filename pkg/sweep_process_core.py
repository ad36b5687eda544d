# sweep_process_core.py
"""Monte-Carlo envelope sweep: grid expansion, worker pool and summary."""
import logging
import multiprocessing
import queue
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import pandas as pd

from constants import (
    GRID_DECIMALS, GUARD_LYAPUNOV, GUARD_SCHEDULED, MSG_SWEEP_DONE, MSG_SWEEP_POINT_DONE,
    MSG_SWEEP_POINT_FAILED, MSG_SWEEP_STARTED, OUTCOME_ERROR, OUTCOME_STABLE, OUTCOME_TRIM_FAILED,
    SWEEP_SCHEMA,
)
from flight_elements import (
    CommandProfile, ConfigError, FlightSimError, GuardMode, LimiterSchedule, ManeuverScenario, RunSettings,
    TrimError, TRIM_LITERAL, hull_volume, load_aircraft, run_scenario,
)
from flight_elements.airframe_model import CG_RANGE
from flight_elements.data_files import check_schema_version, load_yaml_file, require_keys
from flight_elements.run_exporter import empty_grid

logger = logging.getLogger(__name__)

MIN_CASES_PER_ALTITUDE = 3000


@dataclass(frozen=True)
class SweepConfig:
    name: str
    altitudes_m: tuple
    mach: tuple
    alpha_cmd_deg: tuple
    p_cmd_deg_s: tuple
    guard_modes: tuple = (GUARD_SCHEDULED, GUARD_LYAPUNOV)
    cg: float = 0.35
    step_time_s: float = 1.0
    duration_s: float = 6.0

    def __post_init__(self):
        for name in ("altitudes_m", "mach", "alpha_cmd_deg", "p_cmd_deg_s", "guard_modes"):
            if not getattr(self, name):
                raise ConfigError(f"Sweep '{self.name}': '{name}' must not be empty")
        if not CG_RANGE[0] <= self.cg <= CG_RANGE[1]:
            raise ConfigError(f"Sweep '{self.name}': CG {self.cg} outside supported range {CG_RANGE}")
        if not 0.0 <= self.step_time_s < self.duration_s:
            raise ConfigError(f"Sweep '{self.name}': step time must lie inside the run duration")
        object.__setattr__(self, "guard_modes", tuple(GuardMode.parse(m).value for m in self.guard_modes))

    @property
    def cases_per_altitude(self):
        return len(self.mach) * len(self.alpha_cmd_deg) * len(self.p_cmd_deg_s)

    @property
    def lower(self):
        return np.array([min(self.alpha_cmd_deg), min(self.p_cmd_deg_s), min(self.mach)])

    @property
    def upper(self):
        return np.array([max(self.alpha_cmd_deg), max(self.p_cmd_deg_s), max(self.mach)])

    @classmethod
    def from_mapping(cls, data, source="<mapping>"):
        what = f"Sweep file {source}"
        check_schema_version(data, SWEEP_SCHEMA, what)
        require_keys(data, ("altitudes_m", "mach", "alpha_cmd_deg", "p_cmd_deg_s"), what)
        try:
            mach = data["mach"]
            sweep = cls(
                name=str(data.get("name", source)),
                altitudes_m=_rounded(data["altitudes_m"]),
                mach=_rounded(np.arange(float(mach["start"]), float(mach["stop"]) + 0.5 * float(mach["step"]),
                                        float(mach["step"]))),
                alpha_cmd_deg=_axis(data["alpha_cmd_deg"]),
                p_cmd_deg_s=_axis(data["p_cmd_deg_s"]),
                guard_modes=tuple(data.get("guard_modes", (GUARD_SCHEDULED, GUARD_LYAPUNOV))),
                cg=float(data.get("cg", 0.35)),
                step_time_s=float(data.get("step_time_s", 1.0)),
                duration_s=float(data.get("duration_s", 6.0)),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"{what}: {e}") from e
        if sweep.cases_per_altitude < MIN_CASES_PER_ALTITUDE:
            logger.warning("Sweep '%s' has %d cases per altitude (fewer than %d)",
                           sweep.name, sweep.cases_per_altitude, MIN_CASES_PER_ALTITUDE)
        return sweep

    @classmethod
    def load(cls, path):
        return cls.from_mapping(load_yaml_file(path, "sweep file"), source=str(path))


def _rounded(values):
    return tuple(float(v) for v in np.round(np.asarray(values, dtype=float), GRID_DECIMALS))


def _axis(raw):
    """An explicit value list, or a {min, max, count} range."""
    if isinstance(raw, dict):
        count = int(raw["count"])
        if count < 1:
            raise ValueError("grid axis count must be at least 1")
        return _rounded(np.linspace(float(raw["min"]), float(raw["max"]), count))
    return _rounded(raw)


class SweepPoint(NamedTuple):
    index: int
    altitude_m: float
    mach: float
    alpha_cmd_deg: float
    p_cmd_deg_s: float
    guard_mode: str


def expand_grid(sweep):
    """Grid points ordered by altitude, guard mode, Mach, alpha and roll rate."""
    points = []
    for altitude in sweep.altitudes_m:
        for mode in sweep.guard_modes:
            for mach in sweep.mach:
                for alpha in sweep.alpha_cmd_deg:
                    for p in sweep.p_cmd_deg_s:
                        points.append(SweepPoint(len(points), altitude, mach, alpha, p, mode))
    return points


def point_scenario(point, sweep):
    """Step commands from trim at ``sweep.step_time_s``; sideslip held at zero."""
    return ManeuverScenario(
        name=f"{sweep.name}_{point.index:05d}",
        mach=point.mach,
        altitude_m=point.altitude_m,
        cg=sweep.cg,
        alpha_cmd_deg=CommandProfile.step(TRIM_LITERAL, point.alpha_cmd_deg, sweep.step_time_s),
        p_cmd_deg_s=CommandProfile.step(0.0, point.p_cmd_deg_s, sweep.step_time_s),
        guard_mode=point.guard_mode,
        duration_s=sweep.duration_s,
    )


# =============================
# WORKERS
# =============================

# Per-process simulation stack, filled by _init_worker.
_worker = {}


def _init_worker(model_file, schedule_file, settings, sweep, output_queue):
    _worker["aircraft"] = load_aircraft(model_file)
    _worker["schedule"] = LimiterSchedule.load(schedule_file) if schedule_file else None
    _worker["settings"] = settings
    _worker["sweep"] = sweep
    _worker["queue"] = output_queue


def _post(message):
    output_queue = _worker.get("queue")
    if output_queue is None:
        return
    try:
        output_queue.put(message, timeout=0.05)
    except queue.Full:
        pass


def run_sweep_point(point):
    """Runs one grid point in the current worker; never raises."""
    row = point._asdict()
    try:
        record = run_scenario(point_scenario(point, _worker["sweep"]), _worker["aircraft"],
                              _worker["settings"], _worker["schedule"])
        row.update(outcome=record.outcome, stable=record.outcome == OUTCOME_STABLE,
                   maneuver_achieved=bool(record.maneuver_achieved), error="")
        _post((MSG_SWEEP_POINT_DONE, point.index, {"outcome": record.outcome}))
    except TrimError as e:
        row.update(outcome=OUTCOME_TRIM_FAILED, stable=False, maneuver_achieved=False, error=str(e))
        _post((MSG_SWEEP_POINT_FAILED, point.index, {"outcome": OUTCOME_TRIM_FAILED, "message": str(e)}))
    except FlightSimError as e:
        row.update(outcome=OUTCOME_ERROR, stable=False, maneuver_achieved=False, error=str(e))
        _post((MSG_SWEEP_POINT_FAILED, point.index, {"outcome": OUTCOME_ERROR, "message": str(e)}))
    return row


def _drain(output_queue, total):
    """Logs queued progress messages."""
    if output_queue is None:
        return
    while True:
        try:
            kind, index, payload = output_queue.get_nowait()
        except queue.Empty:
            return
        if kind == MSG_SWEEP_POINT_FAILED:
            logger.error("Sweep point %d/%d failed (%s): %s", index + 1, total, payload["outcome"], payload["message"])
        elif kind == MSG_SWEEP_POINT_DONE:
            logger.debug("Sweep point %d/%d: %s", index + 1, total, payload["outcome"])


class SweepResult(NamedTuple):
    grid: pd.DataFrame
    summary: dict


def monte_carlo_sweep(sweep, model_file, schedule_file, settings=RunSettings(), jobs=1, points=None):
    """Runs every grid point and returns the merged grid with its summary.

    ``points`` restricts or reorders the run; results are merged by index,
    so the order of execution never changes the grid.
    """
    points = expand_grid(sweep) if points is None else list(points)
    needs_schedule = GUARD_SCHEDULED in sweep.guard_modes
    schedule_file = schedule_file if needs_schedule else None
    total = len(points)
    logger.info("%s: sweep '%s' with %d points on %d worker(s)", MSG_SWEEP_STARTED, sweep.name, total, jobs)

    rows = []
    if jobs <= 1 or total <= 1:
        _init_worker(model_file, schedule_file, settings, sweep, None)
        for n, point in enumerate(points, start=1):
            rows.append(run_sweep_point(point))
            if n % 100 == 0 or n == total:
                logger.info("Sweep '%s': %d/%d points done", sweep.name, n, total)
            if rows[-1]["error"]:
                logger.error("Sweep point %d failed (%s): %s", point.index, rows[-1]["outcome"], rows[-1]["error"])
    else:
        with multiprocessing.Manager() as manager:
            output_queue = manager.Queue()
            with multiprocessing.Pool(processes=jobs, initializer=_init_worker,
                                      initargs=(model_file, schedule_file, settings, sweep, output_queue)) as pool:
                for n, row in enumerate(pool.imap_unordered(run_sweep_point, points, chunksize=4), start=1):
                    rows.append(row)
                    _drain(output_queue, total)
                    if n % 100 == 0 or n == total:
                        logger.info("Sweep '%s': %d/%d points done", sweep.name, n, total)
            _drain(output_queue, total)

    grid = build_grid(rows)
    summary = summarize_sweep(grid, sweep)
    logger.info("%s: sweep '%s' finished", MSG_SWEEP_DONE, sweep.name)
    return SweepResult(grid=grid, summary=summary)


def build_grid(rows):
    if not rows:
        return empty_grid()
    grid = empty_grid()
    frame = pd.DataFrame(rows)[list(grid.columns)]
    frame = frame.astype(grid.dtypes.to_dict())
    return frame.sort_values("index", kind="stable").reset_index(drop=True)


# =============================
# SUMMARY
# =============================

def _asymmetry(subset):
    """Largest maneuverable roll-rate command on each side and the favoured direction."""
    positive = subset.loc[subset["p_cmd_deg_s"] > 0.0, "p_cmd_deg_s"]
    negative = subset.loc[subset["p_cmd_deg_s"] < 0.0, "p_cmd_deg_s"]
    max_positive = float(positive.max()) if len(positive) else 0.0
    max_negative = float(-negative.min()) if len(negative) else 0.0
    if np.isclose(max_positive, max_negative):
        direction = "symmetric"
    else:
        direction = "positive" if max_positive > max_negative else "negative"
    return {"max_positive_p_cmd_deg_s": max_positive, "max_negative_p_cmd_deg_s": max_negative,
            "direction": direction}


def expansion(volume_lyapunov, volume_scheduled):
    """Relative volume gain of the Lyapunov guard over the schedule, in percent."""
    if volume_scheduled <= 0.0:
        return None
    return 100.0 * (volume_lyapunov - volume_scheduled) / volume_scheduled


def summarize_sweep(grid, sweep):
    columns = ["alpha_cmd_deg", "p_cmd_deg_s", "mach"]
    summary = {
        "sweep": sweep.name,
        "empty": bool(grid.empty),
        "points": int(len(grid)),
        "cases_per_altitude": sweep.cases_per_altitude,
        "trim_failures": int((grid["outcome"] == OUTCOME_TRIM_FAILED).sum()),
        "errors": int((grid["outcome"] == OUTCOME_ERROR).sum()),
        "normalization": {"lower": sweep.lower.tolist(), "upper": sweep.upper.tolist(), "axes": columns},
        "altitudes": {},
    }
    for altitude in sweep.altitudes_m:
        per_mode = {}
        for mode in sweep.guard_modes:
            subset = grid[(grid["altitude_m"] == altitude) & (grid["guard_mode"] == mode)]
            stable = subset[subset["stable"]]
            maneuverable = stable[stable["maneuver_achieved"]]
            volume, degenerate = hull_volume(stable[columns].to_numpy(), sweep.lower, sweep.upper)
            m_volume, m_degenerate = hull_volume(maneuverable[columns].to_numpy(), sweep.lower, sweep.upper)
            per_mode[mode] = {
                "points": int(len(subset)),
                "stable_points": int(len(stable)),
                "maneuverable_points": int(len(maneuverable)),
                "stable_volume_uc": volume,
                "stable_volume_degenerate": degenerate,
                "maneuverable_volume_uc": m_volume,
                "maneuverable_volume_degenerate": m_degenerate,
                "asymmetry": _asymmetry(maneuverable),
            }
        entry = {"modes": per_mode}
        if GUARD_LYAPUNOV in per_mode and GUARD_SCHEDULED in per_mode:
            lyap, sched = per_mode[GUARD_LYAPUNOV], per_mode[GUARD_SCHEDULED]
            entry["stable_expansion_pct"] = expansion(lyap["stable_volume_uc"], sched["stable_volume_uc"])
            entry["maneuverable_expansion_pct"] = expansion(lyap["maneuverable_volume_uc"],
                                                            sched["maneuverable_volume_uc"])
            if entry["stable_expansion_pct"] is not None:
                logger.info("Altitude %.0f m: stable volume expansion %.2f%%", altitude, entry["stable_expansion_pct"])
            if entry["maneuverable_expansion_pct"] is not None:
                logger.info("Altitude %.0f m: maneuverable volume expansion %.2f%%",
                            altitude, entry["maneuverable_expansion_pct"])
        summary["altitudes"][f"{altitude:g}"] = entry
    return summary
