"""CSV/JSON writers, checkpoints and run manifests.

Data files (CSV) are pure functions of their inputs: floats are written
with ``repr`` (shortest round-trip form), so reruns produce identical bytes.
Only the JSON reports and the manifest carry a timestamp.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import platform
from fractions import Fraction
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"


def state_columns(M: int) -> list[str]:
    return [f"u_{n}_{part}" for n in range(1, M + 1) for part in ("re", "im")]


def _fmt(x) -> str:
    return repr(float(x))


def write_states_csv(path, states: np.ndarray, prefix: dict | None = None):
    """One row per state (``2M`` columns in ``u_1_re, u_1_im, ...`` order).

    ``prefix`` maps extra leading column names to per-row value arrays.
    """
    states = np.asarray(states)
    N, M = states.shape[0], states.shape[1]
    prefix = prefix or {}
    flat = states.reshape(N, 2 * M)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(prefix) + state_columns(M))
        cols = list(prefix.values())
        for i in range(N):
            w.writerow([_cell(c[i]) for c in cols] + [_fmt(v) for v in flat[i]])


def _cell(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return _fmt(v)


def write_trajectory_csv(path, times, states: np.ndarray, energy, traj=None):
    """Columns ``t, u_1_re, u_1_im, ..., energy`` (``traj`` first when given)."""
    states = np.asarray(states)
    N, M = states.shape[0], states.shape[1]
    flat = states.reshape(N, 2 * M)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = (["traj"] if traj is not None else []) + ["t"] + state_columns(M) + ["energy"]
        w.writerow(head)
        for i in range(N):
            row = ([str(int(traj[i]))] if traj is not None else []) + [_fmt(times[i])]
            w.writerow(row + [_fmt(v) for v in flat[i]] + [_fmt(energy[i])])


def read_states_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        head = next(r)
        rows = [[float(v) for v in row] for row in r]
    return head, np.asarray(rows)


def write_table_csv(path, rows: list[dict]):
    if not rows:
        Path(path).write_text("")
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r[k]) if isinstance(r[k], float) else r[k] for k in keys])


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, Fraction):
        return str(o)
    if hasattr(o, "value"):  # enums
        return o.value
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _clean(o):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(o, float) and not math.isfinite(o):
        return "inf" if o > 0 else ("-inf" if o < 0 else "nan")
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def to_json_text(obj) -> str:
    obj = json.loads(json.dumps(obj, default=_default))
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_report(path, body: dict, kind: str):
    """JSON report with ``schema_version``, ``kind`` and an ISO-8601 timestamp."""
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind, "timestamp": timestamp(), **body}
    Path(path).write_text(to_json_text(doc))


def versions() -> dict:
    import scipy

    from . import __version__

    return {"shellgibbs": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def write_manifest(path, command: str, config: dict, seed: int):
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "config": config, "seed": seed,
           "versions": versions(), "timestamp": timestamp()}
    Path(path).write_text(to_json_text(doc))


def write_checkpoint(path, header: dict, state_row):
    """Two lines: a JSON header, then the flat state row as CSV."""
    with open(path, "w") as fh:
        fh.write(json.dumps(_clean(json.loads(json.dumps(header, default=_default))), sort_keys=True) + "\n")
        fh.write(",".join(_fmt(v) for v in np.asarray(state_row).ravel()) + "\n")


def read_checkpoint(path) -> tuple[dict, np.ndarray]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        row = np.array([float(v) for v in fh.readline().strip().split(",")])
    return header, row
