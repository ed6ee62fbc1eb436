"""Dataset container and the CSV interchange format.

The on-disk schema is a header row ``x1,..,x{dx},y1,..,y{dy}`` followed by
numeric rows; unconditional data has no x columns.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError


@dataclass
class Dataset:
    """n covariate/response pairs; covariate_dim may be 0 (unconditional)."""

    X: np.ndarray  # (n, d_x), d_x >= 0
    Y: np.ndarray  # (n, d_y)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.size == 0:
            self.X = self.X.reshape(self.Y.shape[0], 0)
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError(
                f"X has {self.X.shape[0]} rows but Y has {self.Y.shape[0]}"
            )
        if self.Y.shape[0] < 1:
            raise ValueError("dataset must contain at least one row")
        if not np.all(np.isfinite(self.X)) or not np.all(np.isfinite(self.Y)):
            raise ValueError("dataset entries must be finite")

    @property
    def n(self):
        return self.Y.shape[0]

    @property
    def covariate_dim(self):
        return self.X.shape[1]

    @property
    def response_dim(self):
        return self.Y.shape[1]

    def subset(self, idx):
        return Dataset(self.X[idx], self.Y[idx])


def _expected_header(d_x, d_y):
    return [f"x{j + 1}" for j in range(d_x)] + [f"y{j + 1}" for j in range(d_y)]


def save_csv(dataset, path):
    header = ",".join(_expected_header(dataset.covariate_dim, dataset.response_dim))
    rows = np.hstack([dataset.X, dataset.Y])
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_csv(path):
    """Parse the x1..,y1.. CSV schema; errors carry the offending line number."""
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise DataFormatError("empty file", line=1)
    header = [c.strip() for c in lines[0].split(",")]
    d_x = 0
    while d_x < len(header) and header[d_x] == f"x{d_x + 1}":
        d_x += 1
    d_y = len(header) - d_x
    if d_y < 1 or header[d_x:] != [f"y{j + 1}" for j in range(d_y)]:
        raise DataFormatError(
            f"header must be x1..x{{dx}},y1..y{{dy}}, got {lines[0]!r}", line=1
        )
    values = []
    for i, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        fields = text.split(",")
        if len(fields) != len(header):
            raise DataFormatError(
                f"expected {len(header)} fields, got {len(fields)}", line=i
            )
        try:
            values.append([float(v) for v in fields])
        except ValueError:
            raise DataFormatError(f"non-numeric field in {text!r}", line=i) from None
    if not values:
        raise DataFormatError("no data rows", line=2)
    arr = np.asarray(values, dtype=float)
    return Dataset(arr[:, :d_x], arr[:, d_x:])
