"""Tidy CSV output with fixed 17-significant-digit formatting."""

import csv
from typing import Sequence

import numpy as np


def write_csv(path, header: Sequence[str], rows) -> None:
    """Tidy CSV with 17-significant-digit floats."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(row[h]) for h in header])


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)
