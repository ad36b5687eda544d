# main.py
import argparse
import logging
import math
import multiprocessing
import os
import sys
import time
from dataclasses import replace
from datetime import datetime

from constants import (
    APP_VERSION, DEFAULT_OUTPUT_DIR, EXIT_CONFIG_ERROR, EXIT_IO_ERROR, EXIT_OK, EXIT_TRIM_FAILURE, GUARD_MODES,
)
from dependency_checker import run_dependency_check
from settings_manager import load_settings as sm_load_settings
from utils import setup_logging

RECHECK_INTERVAL_DAYS = 30

logger = logging.getLogger("main")


def needs_dependency_check(settings, skip_requested, now=None):
    """Rechecks after an app version change or when the last check is over 30 days old."""
    if skip_requested:
        logger.info("Skipping dependency check as '--skip-deps-check' argument was provided.")
        return False
    now = time.time() if now is None else now
    last_check_timestamp = settings.get("last_deps_check_timestamp", 0.0)
    app_version_at_last_check = settings.get("app_version_at_last_deps_check", "0.0.0")
    if app_version_at_last_check != APP_VERSION:
        logger.info("App version changed from %s to %s. Forcing dependency re-check.",
                    app_version_at_last_check, APP_VERSION)
        return True
    if now - last_check_timestamp > RECHECK_INTERVAL_DAYS * 24 * 3600:
        logger.info("Last dependency check was over %d days ago. Forcing re-check.", RECHECK_INTERVAL_DAYS)
        return True
    logger.debug("Skipping dependency check. Last successful check on: %s",
                 datetime.fromtimestamp(last_check_timestamp).strftime('%Y-%m-%d %H:%M'))
    return False


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--settings", help="settings JSON file (default: settings.json)")
    common.add_argument("--model", help="aero model file (overrides settings)")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--skip-deps-check", action="store_true", help="do not run the dependency check")
    common.add_argument("--seed", type=int, default=None, help="reserved; sweeps are grid-deterministic")

    parser = argparse.ArgumentParser(prog="locguard", description="Loss-of-control detection and prevention simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    trim = sub.add_parser("trim", parents=[common], help="print the level-flight trim solution")
    trim.add_argument("--mach", type=float, default=0.8)
    trim.add_argument("--altitude", type=float, default=2000.0, help="altitude in m")
    trim.add_argument("--cg", type=float, default=None, help="CG as a fraction of the chord")
    trim.add_argument("--linearize", action="store_true", help="also print open-loop eigenvalues")

    simulate = sub.add_parser("simulate", parents=[common], help="run one scenario")
    simulate.add_argument("scenario")
    simulate.add_argument("--guard", choices=GUARD_MODES)
    simulate.add_argument("--out", default=DEFAULT_OUTPUT_DIR)

    sweep = sub.add_parser("sweep", parents=[common], help="Monte-Carlo envelope comparison")
    sweep.add_argument("sweep_file")
    sweep.add_argument("--guard", choices=GUARD_MODES, help="run a single guard mode only")
    sweep.add_argument("--jobs", type=int, default=1)
    sweep.add_argument("--out", default=DEFAULT_OUTPUT_DIR)

    ams = sub.add_parser("ams", parents=[common], help="dump the incremental attainable moment set at a time")
    ams.add_argument("scenario")
    ams.add_argument("--at", type=float, required=True, help="time in s")
    ams.add_argument("--guard", choices=GUARD_MODES)
    ams.add_argument("--out", default=DEFAULT_OUTPUT_DIR)
    return parser


def exit_code_for(error):
    """Maps an exception to the CLI exit code; unknown errors propagate."""
    from flight_elements.errors import ConfigError, DomainError, ExportError, TrimError

    exit_code_table = [
        (ExportError, EXIT_IO_ERROR),
        (TrimError, EXIT_TRIM_FAILURE),
        (ConfigError, EXIT_CONFIG_ERROR),
        (DomainError, EXIT_CONFIG_ERROR),
    ]
    for error_type, code in exit_code_table:
        if isinstance(error, error_type):
            return code
    return None


# --- Commands ---

def _load_stack(args, settings):
    from flight_elements import load_aircraft
    from settings_manager import build_run_settings

    aircraft = load_aircraft(args.model or settings["model_file"])
    return aircraft, build_run_settings(settings)


def cmd_trim(args, settings):
    import numpy as np
    from flight_elements import FlightContext, linearize, trim_level_flight

    aircraft, run_settings = _load_stack(args, settings)
    params = aircraft.params if args.cg is None else aircraft.params.with_cg(args.cg)
    trim = trim_level_flight(args.mach, args.altitude, params, aircraft.model, aircraft.suite,
                             run_settings.sim.gravity, run_settings.trim_tolerance, run_settings.trim_max_iterations)
    print(f"Trim at Mach {args.mach:.3f}, {args.altitude:.0f} m, CG {params.cg:.3f}")
    print(f"  V      = {trim.state.V:.3f} m/s")
    print(f"  alpha  = {math.degrees(trim.state.alpha):.4f} deg")
    for name, deflection in zip(aircraft.suite.names, trim.actuator.deflections):
        print(f"  {name:<24s} {deflection:9.4f} deg")
    print(f"  thrust = {trim.thrust:.1f} N")
    print(f"  residual = {trim.residual:.3e}")
    if args.linearize:
        ctx = FlightContext(model=aircraft.model, params=params, thrust=trim.thrust, gravity=run_settings.sim.gravity)
        jacobian = linearize(trim.state, trim.actuator.deflections, ctx)
        # V, alpha, beta, p, q, r, phi, theta; heading and position are neutral.
        eigenvalues = np.linalg.eigvals(jacobian[:8, :8])
        for value in sorted(eigenvalues, key=lambda v: (v.real, v.imag)):
            print(f"  eigenvalue {value.real:+.4f} {value.imag:+.4f}j")
        if np.any(eigenvalues.real > 1e-9):
            print("  open loop is unstable")
    return EXIT_OK


def _scenario(args):
    from flight_elements import ManeuverScenario

    scenario = ManeuverScenario.load(args.scenario)
    if args.guard:
        scenario = scenario.with_guard(args.guard)
    return scenario


def _schedule(settings, scenario_modes):
    from constants import GUARD_SCHEDULED
    from flight_elements import LimiterSchedule

    if GUARD_SCHEDULED not in scenario_modes:
        return None
    return LimiterSchedule.load(settings["limiter_schedule_file"])


def cmd_simulate(args, settings):
    from flight_elements import run_scenario
    from flight_elements.run_exporter import export_run

    aircraft, run_settings = _load_stack(args, settings)
    scenario = _scenario(args)
    record = run_scenario(scenario, aircraft, run_settings, _schedule(settings, (scenario.guard_mode,)))
    paths = export_run(record, args.out, settings["csv_float_format"])
    summary = record.summary()
    print(f"{scenario.name} [{scenario.guard_mode}]: {record.outcome}"
          f" at t={record.time_reached_s:.2f} s, maneuver achieved: {record.maneuver_achieved}")
    print(f"  peak |p| {summary['peaks']['p_deg_s']:.1f} deg/s, peak |nz| {summary['peaks']['nz_g']:.2f} g")
    for kind, path in paths.items():
        print(f"  {kind}: {path}")
    return EXIT_OK


def cmd_ams(args, settings):
    from flight_elements import ConfigError, run_scenario
    from flight_elements.run_exporter import write_json

    aircraft, run_settings = _load_stack(args, settings)
    scenario = _scenario(args)
    if not 0.0 <= args.at < scenario.duration_s:
        raise ConfigError(f"--at {args.at} s outside the scenario duration [0, {scenario.duration_s})")
    scenario = replace(scenario, ams_snapshot_times_s=(args.at,))
    record = run_scenario(scenario, aircraft, run_settings, _schedule(settings, (scenario.guard_mode,)))
    step = round(args.at / run_settings.sim.dt) * run_settings.sim.dt
    snapshots = [s for s in record.ams_snapshots if math.isclose(s["time_s"], step, abs_tol=1e-9)]
    if not snapshots:
        raise ConfigError(f"Run '{scenario.name}' ended ({record.outcome}) before t={args.at} s")
    snapshot = dict(snapshots[0], scenario=scenario.name, guard_mode=scenario.guard_mode)
    path = write_json(snapshot, os.path.join(args.out, f"{scenario.name}_ams_{args.at:g}s.json"))
    print(f"AMS at t={snapshot['time_s']:.2f} s: inside={snapshot['inside']} margin={snapshot['margin']:.4f}")
    print(f"  {path}")
    return EXIT_OK


def cmd_sweep(args, settings):
    from flight_elements.run_exporter import export_grid, write_json
    from settings_manager import build_run_settings
    from sweep_process_core import SweepConfig, monte_carlo_sweep

    sweep = SweepConfig.load(args.sweep_file)
    if args.guard:
        sweep = replace(sweep, guard_modes=(args.guard,))
    result = monte_carlo_sweep(sweep, args.model or settings["model_file"], settings["limiter_schedule_file"],
                               build_run_settings(settings), jobs=max(1, args.jobs))
    grid_path = export_grid(result.grid, os.path.join(args.out, f"{sweep.name}_grid.csv"),
                            settings["csv_float_format"])
    summary_path = write_json(result.summary, os.path.join(args.out, f"{sweep.name}_summary.json"))
    for altitude, entry in result.summary["altitudes"].items():
        for mode, stats in entry["modes"].items():
            print(f"{altitude} m {mode:<10s} stable {stats['stable_points']:5d}"
                  f"  volume {stats['stable_volume_uc']:.4f} uc"
                  f"  maneuverable {stats['maneuverable_points']:5d}"
                  f"  volume {stats['maneuverable_volume_uc']:.4f} uc"
                  f"  p asymmetry {stats['asymmetry']['direction']}")
        if entry.get("maneuverable_expansion_pct") is not None:
            print(f"{altitude} m expansion (maneuverable): {entry['maneuverable_expansion_pct']:.2f}%")
    print(f"  grid: {grid_path}")
    print(f"  summary: {summary_path}")
    return EXIT_OK


COMMANDS = {"trim": cmd_trim, "simulate": cmd_simulate, "sweep": cmd_sweep, "ams": cmd_ams}


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level or "INFO")
    try:
        current_settings = sm_load_settings(args.settings)
    except Exception as e:  # ConfigError; flight_elements may not be importable yet
        logger.error("%s", e)
        return EXIT_CONFIG_ERROR
    setup_logging(args.log_level or current_settings["log_level"])

    if needs_dependency_check(current_settings, args.skip_deps_check):
        if not run_dependency_check(args.settings):
            logger.error("Dependency check failed. Application will not start.")
            return EXIT_CONFIG_ERROR

    try:
        return COMMANDS[args.command](args, current_settings)
    except Exception as e:
        code = exit_code_for(e)
        if code is None:
            raise
        logger.error("%s", e)
        return code


if __name__ == "__main__":
    # Keeps frozen builds from re-launching the CLI in pool workers.
    multiprocessing.freeze_support()
    sys.exit(main())
