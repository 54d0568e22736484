"""Plain-text (CSV) serialization for kernels, functions, measures, weights.

Format: one header line naming the state labels, then one row per source
state (matrices) or a single row (vectors).  Floats are written with 17
significant digits, which round-trips IEEE doubles bit-exactly.
"""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import ModelError
from .kernels import FiniteFunction, FiniteKernel, FiniteMeasure, StateSpace, WeightFunction

__all__ = [
    "format_float",
    "dump_kernel",
    "load_kernel",
    "dump_vector",
    "load_function",
    "load_measure",
    "load_weight",
]


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def _write_rows(labels, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([str(lab) for lab in labels])
    for row in rows:
        writer.writerow([format_float(v) for v in row])
    return buf.getvalue()


def _read_rows(text: str):
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    if not rows:
        raise ModelError("empty matrix file")
    labels = tuple(rows[0])
    data = np.array([[float(v) for v in row] for row in rows[1:]], dtype=float)
    return labels, data


def dump_kernel(kernel: FiniteKernel) -> str:
    return _write_rows(kernel.space.labels, kernel.entries)


def load_kernel(text: str, signed: bool = False) -> FiniteKernel:
    labels, data = _read_rows(text)
    if data.shape != (len(labels), len(labels)):
        raise ModelError(f"kernel body {data.shape} does not match header of {len(labels)} labels")
    return FiniteKernel(StateSpace(labels), data, signed=signed)


def dump_vector(obj) -> str:
    if isinstance(obj, FiniteMeasure):
        values = obj.weights
    else:
        values = obj.values
    return _write_rows(obj.space.labels, [values])


def _load_vector(text: str):
    labels, data = _read_rows(text)
    if data.shape != (1, len(labels)):
        raise ModelError("vector file must have exactly one data row")
    return StateSpace(labels), data[0]


def load_function(text: str) -> FiniteFunction:
    space, values = _load_vector(text)
    return FiniteFunction(space, values)


def load_measure(text: str) -> FiniteMeasure:
    space, values = _load_vector(text)
    return FiniteMeasure(space, values)


def load_weight(text: str) -> WeightFunction:
    space, values = _load_vector(text)
    return WeightFunction(space, values)
