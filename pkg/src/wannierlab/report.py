"""Deterministic JSON / CSV writers.

Floats are written with 12 significant digits so that reports produced from
the same configuration and seed are byte-identical.  Non-finite floats
become the strings ``"inf"``, ``"-inf"`` and ``"nan"``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from pathlib import Path

import numpy as np

DIGITS = 12


def fmt(x):
    """Canonical 12-significant-digit text for a float."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if x == 0:
        return "0"
    return f"{x:.{DIGITS}g}"


def canonical(obj):
    """Recursively convert numpy scalars and round floats for JSON output."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [canonical(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        s = fmt(obj)
        return s if s in ("nan", "inf", "-inf") else float(s)
    if isinstance(obj, complex):
        return {"re": canonical(obj.real), "im": canonical(obj.imag)}
    return obj


def dumps(obj):
    return json.dumps(canonical(obj), indent=2, sort_keys=True) + "\n"


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def write_atomic(path, text):
    """Write via a temporary file and rename, so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


# CSV schemas (documented in the README)
DECAY_COLUMNS = ["preset", "object", "R", "method", "L", "norm"]
SPECTRUM_COLUMNS = ["preset", "index", "energy", "in_window"]
BERRY_COLUMNS = ["preset", "k1", "k2", "flux"]
