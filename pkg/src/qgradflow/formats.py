"""Flat-file formats: problem files, CSV tables and JSON records.

Problem files are JSON objects with explicit ``n`` and ``T`` fields and
matrices stored row-major as lists of ``[re, im]`` pairs. JSON floats are
written with ``repr`` (shortest exact round trip); CSV tables use ``%.17g``.
Both reparse to the identical doubles. See ``docs/formats.md``.
"""

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .objective import QuantumProblem

PROBLEM_FORMAT = "qgradflow-problem"
PROBLEM_VERSION = 1
MATRIX_FIELDS = ("H0", "H1", "rho0", "theta")


def fmt(x):
    """Full-precision decimal text for a float (17 significant digits)."""
    return "%.17g" % float(x)


def encode_matrix(m):
    m = np.asarray(m, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def decode_matrix(data, n=None, name="matrix"):
    arr = np.asarray(data, dtype=float)
    if arr.ndim != 3 or arr.shape[-1] != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name}: expected an n x n list of [re, im] pairs")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name}: size {arr.shape[0]} does not match n={n}")
    return arr[..., 0] + 1j * arr[..., 1]


def problem_to_dict(problem):
    d = {"format": PROBLEM_FORMAT, "version": PROBLEM_VERSION,
         "n": int(problem.n), "T": float(problem.T)}
    for name in MATRIX_FIELDS:
        d[name] = encode_matrix(getattr(problem, name))
    return d


def problem_from_dict(d):
    """Parse and validate a problem record; structural problems raise ``ValueError``."""
    missing = [k for k in ("n", "T") + MATRIX_FIELDS if k not in d]
    if missing:
        raise ValueError(f"problem record is missing fields: {missing}")
    if d.get("format", PROBLEM_FORMAT) != PROBLEM_FORMAT:
        raise ValueError(f"unknown problem format {d.get('format')!r}")
    n = int(d["n"])
    mats = {name: decode_matrix(d[name], n, name) for name in MATRIX_FIELDS}
    return QuantumProblem.create(mats["H0"], mats["H1"], mats["rho0"], mats["theta"], float(d["T"]))


def dumps(obj):
    """Deterministic JSON text (sorted keys, numpy scalars and arrays converted)."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def write_problem(path, problem):
    write_json(path, problem_to_dict(problem))


def read_problem(path):
    return problem_from_dict(read_json(path))


def config_hash(cfg):
    """SHA-256 of the canonical JSON form of a config mapping."""
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=_json_default)
    return hashlib.sha256(text.encode()).hexdigest()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path):
    """Header and rows with every cell parsed as float."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = [[float(c) for c in row] for row in r]
    return header, np.asarray(rows, dtype=float).reshape(len(rows), len(header))


TRACE_HEADER = ("iter", "s", "J", "grad_norm", "eta", "accepted", "backtracks")
CONTROL_HEADER = ("k", "t_start", "t_end", "u")


def write_trace(path, trace):
    write_csv(path, TRACE_HEADER, trace.rows())


def write_control(path, u):
    t = u.times
    write_csv(path, CONTROL_HEADER,
              ((k, t[k], t[k + 1], u.values[k]) for k in range(u.M)))
