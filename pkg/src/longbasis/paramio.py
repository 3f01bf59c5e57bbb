"""Shared parameter CSV serialization: ``param,index,value`` rows.

Scalar parameters use an empty index.  Values round-trip bit-exactly through
``repr`` so fixture files can be loaded and re-emitted without drift.
"""

from __future__ import annotations

import csv
from typing import Mapping, Union

import numpy as np

from .errors import MalformedRow

ParamMap = dict[str, Union[float, dict[int, float]]]

HEADER = ["param", "index", "value"]


def write_params(path, params: Mapping[str, Union[float, Mapping[int, float], np.ndarray]],
                 index_keys: Mapping[str, np.ndarray] | None = None) -> None:
    """Write a parameter map to CSV.

    Vector parameters may be given either as {index: value} mappings or as
    arrays paired with ``index_keys[name]`` (ages, years, cohorts...).
    """
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for name, value in params.items():
            if isinstance(value, Mapping):
                for idx in sorted(value):
                    writer.writerow([name, int(idx), repr(float(value[idx]))])
            elif isinstance(value, (np.ndarray, list, tuple)):
                keys = index_keys[name] if index_keys and name in index_keys \
                    else range(len(value))
                for idx, v in zip(keys, value):
                    writer.writerow([name, int(idx), repr(float(v))])
            else:
                writer.writerow([name, "", repr(float(value))])


def read_params(path) -> ParamMap:
    """Read a parameter CSV back into {name: float | {index: float}}."""
    out: ParamMap = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        for line_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if line_no == 1:
                if [c.strip().lower() for c in row] != HEADER:
                    raise MalformedRow(line_no, f"expected header {HEADER}")
                continue
            if len(row) != 3:
                raise MalformedRow(line_no, f"expected 3 fields, got {len(row)}")
            name, idx_s, val_s = (c.strip() for c in row)
            try:
                value = float(val_s)
            except ValueError as exc:
                raise MalformedRow(line_no, str(exc)) from None
            if idx_s == "":
                out[name] = value
            else:
                try:
                    idx = int(idx_s)
                except ValueError as exc:
                    raise MalformedRow(line_no, str(exc)) from None
                slot = out.setdefault(name, {})
                if not isinstance(slot, dict):
                    raise MalformedRow(line_no, f"{name} mixes scalar and vector rows")
                slot[idx] = value
    return out


def vector(params: ParamMap, name: str, keys) -> np.ndarray:
    """Extract a vector parameter ordered by the given keys."""
    slot = params[name]
    if not isinstance(slot, dict):
        raise KeyError(f"{name} is scalar, not vector")
    return np.array([slot[int(k)] for k in keys], dtype=float)
