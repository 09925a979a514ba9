"""Paired (X, Y) samples and the plain-text dataset format.

File format: a header line ``x:<D> y:<D'>`` followed by whitespace-separated
decimal rows of D + D' numbers. ``#`` starts a comment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import InvalidInput, as_points


class DatasetParseError(InvalidInput):
    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    f: object = None            # true regression function, synthetic data only
    noise_floor: float | None = None

    def __post_init__(self):
        self.X = as_points(self.X)
        Y = np.asarray(self.Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y.reshape(-1, 1)
        if Y.ndim != 2 or len(Y) != len(self.X):
            raise InvalidInput("X and Y must have the same number of rows")
        if not np.all(np.isfinite(Y)):
            raise InvalidInput("outputs must be finite")
        self.Y = Y

    def __len__(self):
        return len(self.X)

    @property
    def D(self):
        return self.X.shape[1]

    @property
    def D_out(self):
        return self.Y.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.Y[idx], self.f, self.noise_floor)


_HEADER = re.compile(r"^\s*x\s*:\s*(\d+)\s+y\s*:\s*(\d+)\s*$")


def load_dataset(path) -> Dataset:
    D = Dout = None
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if D is None:
                m = _HEADER.match(line)
                if not m:
                    raise DatasetParseError("expected header 'x:<D> y:<D'>'", lineno)
                D, Dout = int(m.group(1)), int(m.group(2))
                if D < 1:
                    raise DatasetParseError("input dimension must be >= 1", lineno)
                continue
            fields = line.split()
            if len(fields) != D + Dout:
                raise DatasetParseError(
                    f"expected {D + Dout} fields, found {len(fields)}", lineno)
            try:
                vals = [float(v) for v in fields]
            except ValueError as exc:
                raise DatasetParseError(str(exc), lineno) from None
            if not all(np.isfinite(vals)):
                raise DatasetParseError("non-finite value", lineno)
            rows.append(vals)
    if D is None:
        raise DatasetParseError("missing header")
    arr = np.asarray(rows, dtype=np.float64).reshape(-1, D + Dout)
    return Dataset(arr[:, :D], arr[:, D:])


def save_dataset(data: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(f"x:{data.D} y:{data.D_out}\n")
        for x, y in zip(data.X, data.Y):
            fh.write(" ".join(repr(float(v)) for v in np.r_[x, y]) + "\n")
