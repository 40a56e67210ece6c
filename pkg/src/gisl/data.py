"""Expression matrices for one regime (observational or single-target perturbation)."""

import csv
import io
import json
import os
from dataclasses import dataclass

import numpy as np

from ._util import atomic_write_json, atomic_write_text

DATA_FORMAT_VERSION = 1
OBSERVATIONAL = "observational"


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Rows of real values over named columns, tagged with their regime.

    ``target`` is ``None`` for observational data and the perturbed column
    name otherwise.
    """

    columns: tuple
    values: np.ndarray
    target: str = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise DataError(f"values of shape {values.shape} do not match {len(self.columns)} columns")
        if len(set(self.columns)) != len(self.columns):
            raise DataError("duplicate column names")
        if not np.all(np.isfinite(values)):
            raise DataError("data contain non-finite values")
        if self.target is not None and self.target not in self.columns:
            raise DataError(f"perturbation target {self.target!r} is not a column")
        values.setflags(write=False)
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {c: k for k, c in enumerate(self.columns)})

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def regime(self):
        return OBSERVATIONAL if self.target is None else f"perturbed:{self.target}"

    def column(self, name):
        try:
            return self.values[:, self._index[name]]
        except KeyError:
            raise DataError(f"unknown column {name!r}") from None

    def select(self, names):
        idx = []
        for name in names:
            if name not in self._index:
                raise DataError(f"unknown column {name!r}")
            idx.append(self._index[name])
        return self.values[:, idx]

    def restrict(self, names):
        target = self.target if self.target in names else None
        return DataMatrix(tuple(names), self.select(names), target)

    def __eq__(self, other):
        if not isinstance(other, DataMatrix):
            return NotImplemented
        return (
            self.columns == other.columns
            and self.target == other.target
            and np.array_equal(self.values, other.values)
        )

    # -- persistence -----------------------------------------------------
    def to_csv_text(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.values:
            writer.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def save(self, path):
        """Write ``path`` (CSV) and ``path`` + ``.json`` (regime descriptor)."""
        atomic_write_text(path, self.to_csv_text())
        atomic_write_json(
            os.fspath(path) + ".json",
            {
                "format": "gisl-data-matrix",
                "version": DATA_FORMAT_VERSION,
                "regime": self.regime,
                "target": self.target,
                "rows": self.n,
                "columns": list(self.columns),
            },
        )

    @classmethod
    def load(cls, path):
        with open(os.fspath(path) + ".json", encoding="utf-8") as fh:
            meta = json.load(fh)
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
        values = np.array(rows, dtype=float).reshape(len(rows), len(header))
        if list(header) != meta["columns"]:
            raise DataError(f"{path}: header does not match sidecar descriptor")
        return cls(tuple(header), values, meta["target"])
