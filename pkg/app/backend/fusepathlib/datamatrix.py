import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .results import format_float

logger = logging.getLogger("fusepath")

# Header name of the truth column written next to simulated data
LABEL_COLUMN = "label"


class InputFormatError(ValueError):
    """A malformed data file. Rows and columns are 1-based as a spreadsheet would show them."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[int] = None):
        self.row = row
        self.column = column
        location = ""
        if row is not None:
            location = f" (row {row}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + location)


@dataclass(frozen=True)
class DataMatrix:
    """
    Feature values with their header. A header column named `label` (the truth written by `write_matrix`) is
    kept apart in `labels` and never used as a feature.
    """

    values: np.ndarray = field(repr=False)
    header: Optional[list[str]] = None
    labels: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def p(self) -> int:
        return int(self.values.shape[1])

    @property
    def x(self) -> np.ndarray:
        return self.values.reshape(-1)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _split_labels(values: np.ndarray, header: list[str]) -> tuple[np.ndarray, list[str], np.ndarray]:
    if header.count(LABEL_COLUMN) > 1:
        raise InputFormatError(f"The header names more than one {LABEL_COLUMN!r} column", row=1)
    index = header.index(LABEL_COLUMN)
    if len(header) == 1:
        raise InputFormatError(f"The input has a {LABEL_COLUMN!r} column but no features", row=1)
    column = values[:, index]
    if not np.all(column == np.round(column)):
        raise InputFormatError(f"The {LABEL_COLUMN!r} column must hold integers", column=index + 1)
    logger.info("Ignoring the %r column as a feature", LABEL_COLUMN)
    features = np.delete(values, index, axis=1)
    return features, header[:index] + header[index + 1 :], column.astype(int)


def parse_matrix(text: str) -> DataMatrix:
    """
    Parses comma-separated numeric rows. A first row with any non-numeric cell is taken as the header.
    Blank lines are ignored, and a header column named `label` is split off into `DataMatrix.labels`.
    """
    rows = [(number, row) for number, row in enumerate(csv.reader(text.splitlines()), start=1) if row]
    if not rows:
        raise InputFormatError("The input contains no data")

    header = None
    if not all(_is_number(cell.strip()) for cell in rows[0][1]):
        header = [cell.strip() for cell in rows[0][1]]
        rows = rows[1:]
        if not rows:
            raise InputFormatError("The input has a header but no data rows")

    width = len(header) if header is not None else len(rows[0][1])
    values = np.empty((len(rows), width))
    for index, (number, row) in enumerate(rows):
        if len(row) != width:
            raise InputFormatError(f"Expected {width} columns, found {len(row)}", row=number)
        for column, cell in enumerate(row, start=1):
            try:
                value = float(cell.strip())
            except ValueError:
                raise InputFormatError(f"Cannot read {cell!r} as a number", row=number, column=column) from None
            if not math.isfinite(value):
                raise InputFormatError(f"Non-finite value {cell!r}", row=number, column=column)
            values[index, column - 1] = value
    labels = None
    if header is not None and LABEL_COLUMN in header:
        values, header, labels = _split_labels(values, header)
    logger.debug("Parsed %d x %d data matrix", values.shape[0], values.shape[1])
    return DataMatrix(values=values, header=header, labels=labels)


def read_matrix(path: Path) -> DataMatrix:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as error:
        raise InputFormatError(f"Cannot read input file {path}: {error.strerror}") from error
    return parse_matrix(text)


def write_matrix(
    path: Path,
    values: np.ndarray,
    header: Optional[Sequence[str]] = None,
    labels: Optional[Sequence[int]] = None,
) -> Path:
    """Writes an n x p matrix as CSV, optionally followed by a `label` column."""
    values = np.asarray(values, dtype=float)
    if labels is not None and len(labels) != values.shape[0]:
        raise ValueError(f"Got {len(labels)} labels for {values.shape[0]} rows")
    if header is None:
        header = [f"x{j + 1}" for j in range(values.shape[1])]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(list(header) + ([LABEL_COLUMN] if labels is not None else []))
        for index, row in enumerate(values):
            cells = [format_float(float(value)) for value in row]
            if labels is not None:
                cells.append(str(int(labels[index])))
            writer.writerow(cells)
    return path
