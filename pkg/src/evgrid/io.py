"""Result serialisation: long-format CSV and JSON at full float precision."""

import csv
import json
import math
from pathlib import Path

import numpy as np


def _plain(value):
    # JSON-safe, lossless: shortest round-trip floats, NaN/inf as null
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    return value


def _cell(value):
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return repr(v) if math.isfinite(v) else ""
    if isinstance(value, (np.bool_, bool)):
        return "true" if value else "false"
    if value is None:
        return ""
    return str(value)


def write_csv(path, rows, fieldnames=None):
    """Write dict rows with a header; floats use their shortest exact repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if fieldnames is None:
        fieldnames = []
        for r in rows:
            fieldnames.extend(k for k in r if k not in fieldnames)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in fieldnames])
    return path


def read_csv(path):
    """Rows of a file written by :func:`write_csv` as dicts of strings."""
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_plain(payload), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n")
    return path
