"""Result serialization: JSON records with explicit shapes, CSV tables,
run manifests, and offline re-validation of stored solutions.

Every array goes into JSON as a flat list plus its shape, so records can
be consumed without this package.  Writes are atomic (temp file + rename).
CSV tables carry a header row; their column schemas are versioned in the
manifest under ``csv_schemas`` and documented in the README.
"""

from __future__ import annotations

import csv
import io
import json
import os
import platform
import tempfile
import time

import numpy as np

SCHEMA_MFG = "fsmfg/mfg-solution/1"
SCHEMA_NFIELD = "fsmfg/nfield/1"
SCHEMA_JOINTLAW = "fsmfg/jointlaw/1"
SCHEMA_MANIFEST = "fsmfg/manifest/1"

CSV_SCHEMAS = {
    "converge.csv": ["N", "sup_V", "sup_W", "sup_total"],
    "trend.csv": ["T", "theta_gap", "u_gap"],
    "gradient_profile.csv": ["t", "max_diff"],
    "marginals.csv": ["t", *[]],  # per-state columns appended at write time
    "vw.csv": ["t", "V_N", "W_N"],
}


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, record):
    _atomic_write(path, json.dumps(record, sort_keys=True, indent=1) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in row])
    _atomic_write(path, buf.getvalue())


def array_record(arr):
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": [float(x) for x in arr.ravel()]}


def array_from_record(rec):
    return np.asarray(rec["data"], dtype=float).reshape(rec["shape"])


def mfg_solution_record(solution):
    return {
        "schema": SCHEMA_MFG,
        "grid": {"T": solution.grid.T, "M": solution.grid.M},
        "theta": array_record(solution.theta.values),
        "u": array_record(solution.u.values),
        "residual": solution.residual,
        "iterations": solution.iterations,
    }


def nfield_record(nfield):
    return {
        "schema": SCHEMA_NFIELD,
        "d": nfield.d,
        "N": nfield.N,
        "grid": {"T": nfield.grid.T, "M": nfield.grid.M},
        "values": array_record(nfield.values),
    }


def jointlaw_record(law):
    return {
        "schema": SCHEMA_JOINTLAW,
        "d": law.indexer.d,
        "N": law.indexer.N,
        "grid": {"T": law.grid.T, "M": law.grid.M},
        "values": array_record(law.values),
    }


def load_mfg_solution(record):
    from .core import TimeGrid, Trajectory
    from .mfg import MfgSolution
    if record.get("schema") != SCHEMA_MFG:
        raise ValueError(f"not an MFG solution record: {record.get('schema')!r}")
    grid = TimeGrid(record["grid"]["T"], record["grid"]["M"])
    return MfgSolution(
        Trajectory(grid, array_from_record(record["theta"])),
        Trajectory(grid, array_from_record(record["u"])),
        record["residual"], record["iterations"])


def manifest_record(subcommand, config, seed, wall_time_s, extra=None):
    from . import __version__
    from .backend import backend_name
    rec = {
        "schema": SCHEMA_MANIFEST,
        "subcommand": subcommand,
        "config": config,
        "seed": seed,
        "versions": {
            "fsmfg": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "backend": backend_name(),
        "wall_time_s": wall_time_s,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "csv_schemas": {k: v for k, v in CSV_SCHEMAS.items()},
    }
    if extra:
        rec.update(extra)
    return rec


def revalidate_solution(result_path, model):
    """Recompute the stored solution's residual from its trajectories.

    Returns (stored, recomputed); the two must agree to 1e-12 for a file
    that has not been tampered with.
    """
    from .mfg import pvit_residual
    record = read_json(result_path)
    sol = load_mfg_solution(record)
    recomputed = pvit_residual(model, sol.theta, sol.u)
    return record["residual"], recomputed
