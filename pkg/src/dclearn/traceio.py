"""On-disk formats: JSON-lines traces and fixed-precision CSV tables.

A trace file starts with a header object

    {"schema": "dclearn-trace", "version": 1, "every": k, "config": {...}}

followed by one object per recorded step with keys t, epoch, w, g, g_tilde,
loss, lr, corrected. Floats are written with Python's shortest round-trip
repr, so reading a trace back gives bit-identical arrays.
"""

import csv
import json
import math

import numpy as np

from .analysis import TraceRecord, TrainTrace

SCHEMA = "dclearn-trace"
VERSION = 1
RECORD_KEYS = ("t", "epoch", "w", "g", "g_tilde", "loss", "lr", "corrected")


class MalformedTraceError(ValueError):
    def __init__(self, line, msg):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def jsonable(obj):
    """Config echo helper: inf/nan become strings, tuples become lists."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def _vec(a):
    return [float(x) for x in a]


def write_trace(path, trace, config=None, every=1):
    """Write the header and every ``every``-th record (by position)."""
    if every < 1:
        raise ValueError("every must be >= 1")
    header = {"schema": SCHEMA, "version": VERSION, "every": every,
              "diverged": bool(trace.diverged), "config": jsonable(config or {})}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(header, sort_keys=True, allow_nan=False) + "\n")
        for i, r in enumerate(trace.records):
            if i % every:
                continue
            rec = {"t": int(r.t), "epoch": int(r.epoch), "w": _vec(r.w), "g": _vec(r.g),
                   "g_tilde": _vec(r.g_tilde), "loss": float(r.loss), "lr": float(r.lr),
                   "corrected": bool(r.corrected)}
            fh.write(json.dumps(rec, allow_nan=False) + "\n")


def _check_record(obj, n, width):
    if not isinstance(obj, dict):
        raise MalformedTraceError(n, "record is not an object")
    missing = [k for k in RECORD_KEYS if k not in obj]
    if missing:
        raise MalformedTraceError(n, f"missing keys {missing}")
    vecs = []
    for k in ("w", "g", "g_tilde"):
        v = obj[k]
        if not isinstance(v, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            raise MalformedTraceError(n, f"{k} is not a number array")
        vecs.append(np.array(v, dtype=np.float64))
    if len({v.shape[0] for v in vecs}) != 1 or (width is not None and vecs[0].shape[0] != width):
        raise MalformedTraceError(n, "vector lengths differ")
    for k in ("t", "epoch"):
        if not isinstance(obj[k], int) or isinstance(obj[k], bool):
            raise MalformedTraceError(n, f"{k} is not an integer")
    for k in ("loss", "lr"):
        if not isinstance(obj[k], (int, float)) or isinstance(obj[k], bool):
            raise MalformedTraceError(n, f"{k} is not a number")
    if not isinstance(obj["corrected"], bool):
        raise MalformedTraceError(n, "corrected is not a boolean")
    return TraceRecord(obj["t"], obj["epoch"], *vecs, float(obj["loss"]), float(obj["lr"]), obj["corrected"])


def read_trace(path):
    """Returns (header, TrainTrace); MalformedTraceError names the bad line."""
    trace = TrainTrace()
    header = None
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.endswith("\n"):
                raise MalformedTraceError(n, "truncated line")
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise MalformedTraceError(n, f"invalid JSON ({e.msg})") from None
            if header is None:
                if not isinstance(obj, dict) or obj.get("schema") != SCHEMA:
                    raise MalformedTraceError(n, "missing trace header")
                if obj.get("version") != VERSION:
                    raise MalformedTraceError(n, f"unsupported version {obj.get('version')!r}")
                header = obj
                continue
            width = trace.records[0].w.shape[0] if trace.records else None
            rec = _check_record(obj, n, width)
            try:
                trace.append(rec)
            except ValueError as e:
                raise MalformedTraceError(n, str(e)) from None
    if header is None:
        raise MalformedTraceError(1, "empty file")
    trace.diverged = bool(header.get("diverged", False))
    return header, trace


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return "%.17g" % x
    return str(x)


def write_csv(path, columns, rows):
    """Rows are dicts (keyed by column) or sequences; missing values stay empty."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            vals = [row.get(c) for c in columns] if isinstance(row, dict) else list(row)
            w.writerow([fmt(v) for v in vals])


def read_csv(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
