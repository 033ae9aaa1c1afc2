"""CSV exports of operators, grids and wick-symbol samples for auditing."""

import csv
import logging
import os
from typing import Iterable, List, Sequence

import numpy as np

from calculus.fock import FockOperator
from calculus.quadrature import PhaseGrid

logger = logging.getLogger(__name__)


def fmt(value: float) -> str:
    """Shortest text that round-trips a double"""
    return f"{float(value):.17g}"


def write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence[str]]) -> int:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.debug(f"Wrote {count} row(s) to {path}")
    return count


def operator_rows(operator: FockOperator, reported_only: bool = True, threshold: float = 0.0) -> List[List[str]]:
    """(row, col, re, im) for every entry with modulus above `threshold`"""
    matrix = operator.reported if reported_only else operator.matrix
    rows = []
    for i, j in zip(*np.nonzero(np.abs(matrix) > threshold)):
        value = matrix[i, j]
        rows.append([str(i), str(j), fmt(value.real), fmt(value.imag)])
    return rows


def export_operator(path: str, operator: FockOperator, reported_only: bool = True, threshold: float = 0.0) -> int:
    return write_rows(path, ['row', 'col', 're', 'im'], operator_rows(operator, reported_only, threshold))


def grid_header(modes: int) -> List[str]:
    header = []
    for j in range(1, modes + 1):
        header += [f'xi{j}_re', f'xi{j}_im']
    return header + ['weight']


def export_grid(path: str, grid: PhaseGrid) -> int:
    rows = (
        [item for z in node for item in (fmt(z.real), fmt(z.imag))] + [fmt(w)]
        for node, w in zip(grid.nodes, grid.weights)
    )
    return write_rows(path, grid_header(grid.modes), rows)


def export_wick_samples(path: str, points: np.ndarray, values: np.ndarray) -> int:
    points = np.asarray(points, dtype=complex)
    modes = points.shape[1]
    header = []
    for j in range(1, modes + 1):
        header += [f'psi{j}_re', f'psi{j}_im']
    header += ['value_re', 'value_im']
    rows = (
        [item for z in point for item in (fmt(z.real), fmt(z.imag))] + [fmt(v.real), fmt(v.imag)]
        for point, v in zip(points, np.asarray(values, dtype=complex))
    )
    return write_rows(path, header, rows)
