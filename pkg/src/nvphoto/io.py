"""CSV and JSON readers/writers for datasets, traces, spectra and fits.

Floats are written with ``repr`` so every file round-trips exactly.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .fitcore import FitResult
from .phaseshift import PhasePoint
from .ratemodel import TRACE_HEADER, PopulationTrace
from .thermal import LifetimePoint

PHASE_HEADER = ("f_hz", "phi_rad", "sigma_phi_rad")
LIFETIME_HEADER = ("T_K", "tau_s", "sigma_tau_s")
SPECTRUM_HEADER = ("f_hz", "visible", "ir")
CURVE_HEADER = ("theta_rad", "R", "sigma")


def _fmt(x) -> str:
    return repr(float(x))


def write_table(stream, header: Sequence[str], rows: Iterable[Sequence[float]]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])


def table_to_str(header, rows) -> str:
    buf = io.StringIO()
    write_table(buf, header, rows)
    return buf.getvalue()


def table_to_json(header, rows) -> str:
    data = {"columns": list(header), "rows": [[float(v) for v in r] for r in rows]}
    return json.dumps(data, indent=2) + "\n"


def read_table(path_or_text, header: Sequence[str]) -> np.ndarray:
    """Read a CSV with the given header; returns an ``(n, len(header))`` array.

    Accepts a path or the CSV text itself (anything containing a newline).
    """
    if isinstance(path_or_text, Path) or "\n" not in path_or_text:
        text = Path(path_or_text).read_text()
    else:
        text = path_or_text
    reader = csv.reader(io.StringIO(text))
    try:
        got = next(reader)
    except StopIteration:
        raise ValueError("empty CSV file") from None
    if tuple(h.strip() for h in got) != tuple(header):
        raise ValueError(f"expected CSV header {','.join(header)}, got {','.join(got)}")
    rows = [[float(v) for v in row] for row in reader if row]
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"row {i + 1} has {len(row)} columns, expected {len(header)}")
    return np.array(rows, dtype=float).reshape(len(rows), len(header))


def trace_to_str(trace: PopulationTrace) -> str:
    return table_to_str(TRACE_HEADER, trace.rows())


def read_trace(path_or_text) -> PopulationTrace:
    a = read_table(path_or_text, TRACE_HEADER)
    return PopulationTrace(a[:, 0], a[:, 1:7], a[:, 7], a[:, 8])


def phase_points_to_str(points: Sequence[PhasePoint]) -> str:
    return table_to_str(PHASE_HEADER, ((p.f, p.phi, p.sigma_phi) for p in points))


def read_phase_points(path_or_text) -> list[PhasePoint]:
    return [PhasePoint(*row) for row in read_table(path_or_text, PHASE_HEADER)]


def lifetimes_to_str(points: Sequence[LifetimePoint]) -> str:
    return table_to_str(LIFETIME_HEADER, ((p.T, p.tau, p.sigma_tau) for p in points))


def read_lifetimes(path_or_text) -> list[LifetimePoint]:
    return [LifetimePoint(*row) for row in read_table(path_or_text, LIFETIME_HEADER)]


def read_spectrum(path_or_text) -> np.ndarray:
    return read_table(path_or_text, SPECTRUM_HEADER)


def read_curve(path_or_text) -> np.ndarray:
    return read_table(path_or_text, CURVE_HEADER)


def fit_to_json(result: FitResult) -> str:
    return json.dumps(result.to_dict(), indent=2, sort_keys=False) + "\n"


def fit_from_json(text: str) -> FitResult:
    return FitResult.from_dict(json.loads(text))


def fit_to_csv(result: FitResult) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("parameter", "value", "sigma"))
    for n, v, s in zip(result.names, result.params, result.sigma):
        writer.writerow((n, _fmt(v), _fmt(s)))
    return buf.getvalue()
