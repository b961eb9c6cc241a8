"""CSV ingestion and deterministic serialization."""

from __future__ import annotations

import csv
import json
import math

import numpy as np


class InputError(ValueError):
    """Malformed or inconsistent user input (maps to exit code 2)."""


def read_table(path):
    """Read a headered numeric CSV into (header, float matrix).

    Errors carry 1-based line numbers (the header is line 1).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, a header row is required") from None
        header = [h.strip() for h in header]
        if not header or any(h == "" for h in header):
            raise InputError(f"{path}:1: header has empty column names")
        if len(set(header)) != len(header):
            raise InputError(f"{path}:1: duplicate column names in header")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise InputError(
                    f"{path}:{line_no}: expected {len(header)} fields, found {len(row)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(
                        f"{path}:{line_no}: non-numeric value {cell!r} in column {name!r}"
                    ) from None
                if not math.isfinite(v):
                    raise InputError(
                        f"{path}:{line_no}: non-finite value {cell!r} in column {name!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, np.asarray(rows, dtype=float)


def column(header, table, name, path="input"):
    if name not in header:
        raise InputError(f"{path}: missing column {name!r} (have: {', '.join(header)})")
    return table[:, header.index(name)]


def fmt_float(v):
    """Shortest repr that round-trips a float64 exactly."""
    return repr(float(v))


def write_columns(path, names, columns):
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def dump_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")
