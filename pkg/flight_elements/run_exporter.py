# flight_elements/run_exporter.py
"""Writes run histories, summaries, sweep grids and AMS snapshots to disk."""
from __future__ import annotations

import json
import logging
import math
import os

import numpy as np
import pandas as pd

from constants import GRID_COLUMNS
from .errors import ExportError

logger = logging.getLogger(__name__)

DEFAULT_FLOAT_FORMAT = "%.10g"

GRID_DTYPES = {
    "index": "int64",
    "altitude_m": "float64",
    "mach": "float64",
    "alpha_cmd_deg": "float64",
    "p_cmd_deg_s": "float64",
    "guard_mode": "str",
    "outcome": "str",
    "stable": "bool",
    "maneuver_achieved": "bool",
    "error": "str",
}


def _ensure_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as e:
        raise ExportError(f"Cannot create output directory: {e}", parent) from e


def to_jsonable(value):
    """Converts numpy values and non-finite floats so json output stays valid."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def write_json(data, path):
    _ensure_parent(path)
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(to_jsonable(data), f, indent=2, sort_keys=True, allow_nan=False)
            f.write("\n")
    except (OSError, TypeError, ValueError) as e:
        raise ExportError(f"Cannot write JSON: {e}", path) from e
    logger.debug("Wrote %s", path)
    return path


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ExportError(f"Cannot read JSON: {e}", path) from e


def write_csv(frame, path, float_format=DEFAULT_FLOAT_FORMAT):
    _ensure_parent(path)
    try:
        frame.to_csv(path, index=False, float_format=float_format, lineterminator="\n")
    except OSError as e:
        raise ExportError(f"Cannot write CSV: {e}", path) from e
    logger.debug("Wrote %s (%d rows)", path, len(frame))
    return path


def export_history(record, path, float_format=DEFAULT_FLOAT_FORMAT):
    return write_csv(record.history, path, float_format)


def export_summary(record, path):
    return write_json(record.summary(), path)


def export_ams_snapshots(snapshots, path):
    return write_json({"count": len(snapshots), "snapshots": list(snapshots)}, path)


def export_run(record, out_dir, float_format=DEFAULT_FLOAT_FORMAT):
    """Writes the history CSV, the summary JSON and any AMS snapshots of one run."""
    stem = os.path.join(out_dir, f"{record.scenario.name}_{record.guard_mode}")
    paths = {
        "history": export_history(record, f"{stem}_history.csv", float_format),
        "summary": export_summary(record, f"{stem}_summary.json"),
    }
    if record.ams_snapshots:
        paths["ams"] = export_ams_snapshots(record.ams_snapshots, f"{stem}_ams.json")
    logger.info("Run '%s' written to %s", record.scenario.name, out_dir)
    return paths


def empty_grid():
    return pd.DataFrame({name: pd.Series(dtype=dtype if dtype != "str" else "object")
                         for name, dtype in GRID_DTYPES.items()})[list(GRID_COLUMNS)]


def export_grid(grid, path, float_format=DEFAULT_FLOAT_FORMAT):
    frame = grid[list(GRID_COLUMNS)].sort_values("index", kind="stable")
    frame = frame.assign(error=frame["error"].fillna(""))
    return write_csv(frame, path, float_format)


def import_grid(path):
    """Reads a grid written by ``export_grid`` back with its original dtypes."""
    try:
        frame = pd.read_csv(path, keep_default_na=False, dtype={"guard_mode": str, "outcome": str, "error": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ExportError(f"Cannot read grid CSV: {e}", path) from e
    missing = [c for c in GRID_COLUMNS if c not in frame.columns]
    if missing:
        raise ExportError(f"Grid CSV lacks columns {', '.join(missing)}", path)
    if frame.empty:
        return empty_grid()
    try:
        for name in ("stable", "maneuver_achieved"):
            if frame[name].dtype != bool:
                flags = frame[name].astype(str).str.lower().map({"true": True, "false": False})
                if flags.isna().any():
                    raise ValueError(f"column '{name}' is not boolean")
                frame[name] = flags.astype(bool)
        frame = frame.astype({name: dtype if dtype != "str" else "object" for name, dtype in GRID_DTYPES.items()})
    except (TypeError, ValueError) as e:
        raise ExportError(f"Grid CSV has malformed values: {e}", path) from e
    return frame[list(GRID_COLUMNS)].reset_index(drop=True)
