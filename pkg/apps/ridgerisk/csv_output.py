"""Ordered CSV emission for sweeps and simulations.

Rows go out one at a time and are flushed as they are written. A run that dies at
grid point 40 of 80 still leaves a readable file with the header and the first 39
rows, which is usually what was wanted from it anyway.
"""

import contextlib
import csv
import logging
import sys

from utils import format_float

logger = logging.getLogger(__name__)


def format_cell(value):
    """Floats at full precision, "nan" for missing values, everything else as text."""
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_float(value)
    try:
        return format_float(float(value))
    except (TypeError, ValueError):
        return str(value)


class RowWriter:
    """Single writer for one CSV stream; the header goes out before any row."""

    def __init__(self, stream, header):
        self.stream = stream
        self.header = list(header)
        self.rows = 0
        self._writer = csv.writer(stream, lineterminator="\n")
        self._writer.writerow(self.header)
        self.stream.flush()

    def write(self, values):
        values = list(values)
        if len(values) != len(self.header):
            raise ValueError(f"row has {len(values)} fields, header has {len(self.header)}")
        self._writer.writerow([format_cell(v) for v in values])
        self.stream.flush()
        self.rows += 1

    def write_missing(self, *leading):
        """A row whose trailing fields are all nan, for a grid point that failed."""
        self.write(list(leading) + [None] * (len(self.header) - len(leading)))


@contextlib.contextmanager
def open_rows(path, header):
    """
    Yield a RowWriter on path, or on stdout when path is None or "-".

    Args:
        path: output file
        header: column names

    Yields:
        RowWriter
    """
    if path is None or path == "-":
        yield RowWriter(sys.stdout, header)
        return

    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = RowWriter(f, header)
        try:
            yield writer
        finally:
            logger.info("Wrote %d rows to %s", writer.rows, path)
