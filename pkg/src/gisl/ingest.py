"""Reading expression tables with per-cell perturbation labels, and Z-score tables.

Expression files are CSV or TSV with a header row.  One column (default
``perturbation``) holds the label of each cell: the control token for
unperturbed cells, otherwise the name of the perturbed gene.  Every other
column is a gene.
"""

import csv
import io
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ._util import atomic_write_text, sorted_names
from .data import DataMatrix

log = logging.getLogger(__name__)

DEFAULT_LABEL_COLUMN = "perturbation"
DEFAULT_CONTROL = "control"


class IngestError(ValueError):
    pass


def _delimiter(path, fmt):
    if fmt is None:
        fmt = "tsv" if os.fspath(path).lower().endswith((".tsv", ".tab")) else "csv"
    fmt = fmt.lower()
    if fmt not in ("csv", "tsv"):
        raise IngestError(f"unknown format {fmt!r}; use csv or tsv")
    return "\t" if fmt == "tsv" else ","


@dataclass(frozen=True, eq=False)
class ExpressionTable:
    genes: tuple
    values: np.ndarray
    labels: tuple
    control_token: str = DEFAULT_CONTROL
    label_column: str = DEFAULT_LABEL_COLUMN
    log1p: bool = False
    zero_variance: tuple = field(default=())

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (len(self.labels), len(self.genes)):
            raise IngestError(f"value matrix {values.shape} does not match {len(self.labels)} cells x {len(self.genes)} genes")
        if not np.all(np.isfinite(values)):
            raise IngestError("expression values must be finite")
        gene_set = set(self.genes)
        if len(gene_set) != len(self.genes):
            raise IngestError("duplicate gene names")
        bad = sorted({lab for lab in self.labels if lab != self.control_token and lab not in gene_set})
        if bad:
            raise IngestError(f"labels reference unknown genes: {', '.join(bad)}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "genes", tuple(self.genes))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.zero_variance and values.shape[0]:
            flat = tuple(g for g, sd in zip(self.genes, values.std(axis=0)) if sd == 0)
            object.__setattr__(self, "zero_variance", flat)

    @property
    def n_cells(self):
        return len(self.labels)

    def label_counts(self):
        return dict(Counter(self.labels))

    def summary(self):
        counts = self.label_counts()
        parts = [f"{self.n_cells} cells x {len(self.genes)} genes"]
        parts.append(", ".join(f"{k}: {counts[k]}" for k in sorted_names(counts)))
        if self.zero_variance:
            parts.append("zero variance: " + ", ".join(self.zero_variance))
        return "; ".join(parts)

    def __eq__(self, other):
        if not isinstance(other, ExpressionTable):
            return NotImplemented
        return (
            self.genes == other.genes
            and self.labels == other.labels
            and np.array_equal(self.values, other.values)
        )


def load_expression(path, fmt=None, label_column=DEFAULT_LABEL_COLUMN, control_token=DEFAULT_CONTROL, log1p=False):
    """Parse and validate an expression file.

    Errors name the offending line.  With ``log1p`` the values are replaced
    by ``log(1 + x)`` (they must then be greater than -1).
    """
    delim = _delimiter(path, fmt)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delim)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, header row expected") from None
        if label_column not in header:
            raise IngestError(f"{path}: line 1: no label column {label_column!r}")
        label_idx = header.index(label_column)
        genes = [h for k, h in enumerate(header) if k != label_idx]
        gene_set = set(genes)
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}: line {line}: expected {len(header)} fields, found {len(row)}")
            label = row[label_idx].strip()
            if label != control_token and label not in gene_set:
                raise IngestError(f"{path}: line {line}: label {label!r} is neither {control_token!r} nor a gene")
            vals = []
            for k, cell in enumerate(row):
                if k == label_idx:
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestError(f"{path}: line {line}: non-numeric value {cell!r} in column {header[k]!r}") from None
                if not math.isfinite(v):
                    raise IngestError(f"{path}: line {line}: non-finite value in column {header[k]!r}")
                vals.append(v)
            rows.append(vals)
            labels.append(label)
    values = np.array(rows, dtype=float).reshape(len(rows), len(genes))
    if log1p:
        if np.any(values <= -1):
            raise IngestError(f"{path}: log1p needs values greater than -1")
        values = np.log1p(values)
    table = ExpressionTable(tuple(genes), values, tuple(labels), control_token, label_column, log1p)
    log.info("%s: %s", path, table.summary())
    return table


def export_expression(table, path, fmt=None):
    delim = _delimiter(path, fmt)
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter=delim, lineterminator="\n")
    writer.writerow([table.label_column, *table.genes])
    for label, row in zip(table.labels, table.values):
        writer.writerow([label, *(repr(float(v)) for v in row)])
    atomic_write_text(path, buf.getvalue())


def table_from_matrices(d0, perturbed, control_token=DEFAULT_CONTROL):
    """Stack observational and perturbed matrices into one labelled table."""
    blocks, labels = [d0.values], [control_token] * d0.n
    for t in sorted_names(perturbed):
        blocks.append(perturbed[t].values)
        labels += [t] * perturbed[t].n
    return ExpressionTable(d0.columns, np.vstack(blocks), tuple(labels), control_token)


def split_regimes(table, gene_subset=None):
    """Control cells become the observational matrix, cells labelled ``g``
    the matrix perturbing ``g``.

    With ``gene_subset`` only those gene columns are kept, and only cells
    that are controls or perturb a gene of the subset.
    """
    genes = list(table.genes)
    if gene_subset is not None:
        missing = [g for g in gene_subset if g not in table.genes]
        if missing:
            raise IngestError(f"requested genes not in table: {', '.join(missing)}")
        genes = [g for g in table.genes if g in set(gene_subset)]
    idx = [table.genes.index(g) for g in genes]
    labels = np.array(table.labels, dtype=object)
    control = labels == table.control_token
    if not control.any():
        raise IngestError(f"no control cells (label {table.control_token!r})")
    d0 = DataMatrix(tuple(genes), table.values[np.ix_(control, idx)])
    perturbed = {}
    for g in genes:
        rows = labels == g
        if rows.any():
            perturbed[g] = DataMatrix(tuple(genes), table.values[np.ix_(rows, idx)], g)
    return d0, perturbed


class ZscoreTable(dict):
    """Gene name to Z-score."""


def load_zscores(path, delimiter=None):
    """Two-column file ``gene, score``; an optional header row is skipped."""
    if delimiter is None:
        delimiter = _delimiter(path, None)
    table = ZscoreTable()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise IngestError(f"{path}: line {line}: expected 2 fields (gene, score), found {len(row)}")
            gene, raw = row[0].strip(), row[1].strip()
            try:
                score = float(raw)
            except ValueError:
                if line == 1:
                    continue
                raise IngestError(f"{path}: line {line}: non-numeric score {raw!r} for {gene!r}") from None
            if not math.isfinite(score):
                raise IngestError(f"{path}: line {line}: non-finite score for {gene!r}")
            if gene in table:
                raise IngestError(f"{path}: line {line}: duplicate gene {gene!r}")
            table[gene] = score
    return table


def save_zscores(zscores, path):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["gene", "zscore"])
    for gene in sorted_names(zscores):
        writer.writerow([gene, repr(float(zscores[gene]))])
    atomic_write_text(path, buf.getvalue())
