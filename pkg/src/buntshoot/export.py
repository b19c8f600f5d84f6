"""Plot-ready trajectory columns (CSV) and the JSON run report."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .integrate import Trajectory

COLUMNS = ("t", "x", "h", "v", "gamma", "m", "p_x", "p_h", "p_v", "p_gamma", "p_m", "u", "H")
HEADER = ",".join(COLUMNS)


class ExportError(OSError):
    pass


def trajectory_table(traj: Trajectory) -> np.ndarray:
    """Samples as an (n, 13) array, sorted by time."""
    order = np.argsort(traj.t, kind="stable")
    return np.column_stack([traj.t[order], traj.z[order], traj.u[order], traj.H[order]])


def write_trajectory_csv(traj: Trajectory, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, trajectory_table(traj), delimiter=",", header=HEADER, comments="", fmt="%.17g")
    except OSError as exc:
        raise ExportError(f"cannot write trajectory to {path}: {exc}") from exc
    return path


def read_trajectory_csv(path) -> Trajectory:
    path = Path(path)
    try:
        with path.open() as fh:
            header = fh.readline().strip()
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise ExportError(f"cannot read trajectory from {path}: {exc}") from exc
    if header != HEADER:
        raise ValueError(f"{path}: unexpected header {header!r}")
    return Trajectory(data[:, 0], data[:, 1:11], data[:, 11], data[:, 12])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_report(report: dict, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_jsonable(report), indent=2) + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write report to {path}: {exc}") from exc
    return path


def write_trace(records, path) -> Path:
    """One JSON object per continuation attempt."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for rec in records:
                fh.write(json.dumps(_jsonable(rec)) + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write trace to {path}: {exc}") from exc
    return path
