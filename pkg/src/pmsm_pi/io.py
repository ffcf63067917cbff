"""Trajectory CSV and certificate-report text serialization."""

from __future__ import annotations

import csv
import math
from dataclasses import fields
from pathlib import Path

import numpy as np

from .analysis import CertificateReport
from .motor import MotorParams
from .sim import COLUMNS, DIVERGENCE_THRESHOLD, Scenario, Trajectory

HEADER = ",".join(COLUMNS)

#: Column subsets for the usual figure panels, written by ``--plotdata``.
PLOT_PANELS = {
    "speed": ("t", "omega"),
    "currents": ("t", "i_d", "i_q", "x2_ref"),
    "voltages": ("t", "v_d", "v_q"),
    "integrators": ("t", "x_c1", "x_c2"),
    "torque": ("t", "tau_hat"),
    "friction": ("t", "rm_hat"),
    "storage": ("t", "W", "U", "Hc"),
}


class TrajectoryFormatError(ValueError):
    """Malformed or truncated trajectory CSV."""


def _cell(v) -> str:
    return format(float(v), ".17g")


def write_trajectory(traj: Trajectory, path) -> None:
    cols = traj.columns()
    n = len(traj)
    with open(path, "w", newline="") as fh:
        fh.write(HEADER + "\n")
        series = [cols[c] for c in COLUMNS]
        for k in range(n):
            fh.write(",".join("" if s is None else _cell(s[k]) for s in series) + "\n")


def write_plotdata(traj: Trajectory, stem) -> list[Path]:
    """One CSV per panel next to ``stem``; panels whose data is absent are skipped."""
    cols = traj.columns()
    stem = Path(stem)
    written = []
    for panel, names in PLOT_PANELS.items():
        if any(cols[c] is None for c in names):
            continue
        out = stem.with_name(f"{stem.stem}.{panel}.csv")
        with open(out, "w", newline="") as fh:
            fh.write(",".join(names) + "\n")
            for k in range(len(traj)):
                fh.write(",".join(_cell(cols[c][k]) for c in names) + "\n")
        written.append(out)
    return written


def read_columns(path) -> dict[str, np.ndarray | None]:
    """Parse a trajectory CSV into columns; wholly empty columns become ``None``."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise TrajectoryFormatError(f"{path}: cannot read: {exc.strerror}") from None
    if not text.endswith("\n"):
        raise TrajectoryFormatError(f"{path}: truncated (no newline after the last row)")
    rows = list(csv.reader(text.splitlines()))
    if not rows or ",".join(rows[0]) != HEADER:
        raise TrajectoryFormatError(f"{path}: header must be exactly {HEADER!r}")
    body = rows[1:]
    if not body:
        raise TrajectoryFormatError(f"{path}: no data rows")
    data = {c: [] for c in COLUMNS}
    for lineno, row in enumerate(body, 2):
        if len(row) != len(COLUMNS):
            raise TrajectoryFormatError(f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(row)}")
        for name, cell in zip(COLUMNS, row):
            try:
                data[name].append(float(cell) if cell else None)
            except ValueError:
                raise TrajectoryFormatError(f"{path}:{lineno}: column {name}: bad number {cell!r}") from None
    out: dict[str, np.ndarray | None] = {}
    for name, values in data.items():
        present = [v is not None for v in values]
        if not any(present):
            out[name] = None
        elif not all(present):
            raise TrajectoryFormatError(f"{path}: column {name} is only partly filled")
        else:
            out[name] = np.array(values, dtype=float)
    for name in ("t", "i_d", "i_q", "omega", "v_d", "v_q", "x_c1", "x_c2", "x2_ref", "W", "U", "Hc", "power_residual"):
        if out[name] is None:
            raise TrajectoryFormatError(f"{path}: required column {name} is empty")
    return out


def read_trajectory(path, sc: Scenario, p: MotorParams) -> Trajectory:
    """Rebuild a trajectory from its CSV and the originating scenario.

    Stored columns (``W``, ``U``, ``Hc``, the power residual) are taken as
    written, so tampering shows up in the monitors.  The true references are
    re-evaluated from the scenario profiles at the sample times.  A run that
    ends before the horizon must end on a sample whose state norm exceeds the
    divergence threshold; otherwise the file is reported as truncated.
    """
    c = read_columns(path)
    t = c["t"]
    if np.any(np.diff(t) <= 0):
        raise TrajectoryFormatError(f"{path}: time column is not strictly increasing")
    x = np.column_stack([c["i_d"], c["i_q"], c["omega"]])
    norms = np.sqrt(np.sum(x * x, axis=1))
    if not np.all(np.isfinite(x)):
        raise TrajectoryFormatError(f"{path}: non-finite state values")
    diverged, t_div = False, None
    if norms[-1] > DIVERGENCE_THRESHOLD:
        diverged, t_div = True, float(t[-1])
    elif t[-1] < sc.horizon - 0.5 * sc.dt:
        raise TrajectoryFormatError(
            f"{path}: truncated (last sample at t={t[-1]!r} before the horizon {sc.horizon!r} without divergence)"
        )
    return Trajectory(
        sc.id, t, x,
        np.column_stack([c["v_d"], c["v_q"]]),
        np.column_stack([c["x_c1"], c["x_c2"]]),
        c["tau_hat"], c["rm_hat"], c["x2_ref"], c["W"], c["U"], c["Hc"], c["power_residual"],
        np.array([sc.speed_ref(v) for v in t]), np.array([sc.load(v) for v in t]),
        diverged, t_div,
    )


def _value(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_report(report: CertificateReport, failed: list[str] | None = None) -> str:
    """Flat ``key = value`` block; ``none`` marks monitors that do not apply."""
    lines = [f"{f.name} = {_value(getattr(report, f.name))}" for f in fields(report)]
    if failed is not None:
        lines.append(f"failing_monitors = {','.join(failed) if failed else 'none'}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict[str, object]:
    """Inverse of :func:`format_report` for the report fields."""
    out: dict[str, object] = {}
    kinds = {f.name: f.type for f in fields(CertificateReport)}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            continue
        if value == "none":
            out[key] = None
        elif value in ("true", "false"):
            out[key] = value == "true"
        elif key in ("scenario",):
            out[key] = value
        elif key == "samples":
            out[key] = int(value)
        else:
            out[key] = float(value)
    return out


def report_close(a: CertificateReport, b: CertificateReport, tol: float = 1e-12) -> bool:
    """Field-wise equality with relative tolerance ``tol`` on floats."""
    for f in fields(a):
        va, vb = getattr(a, f.name), getattr(b, f.name)
        if isinstance(va, float) and isinstance(vb, float):
            if not math.isclose(va, vb, rel_tol=tol, abs_tol=tol):
                return False
        elif va != vb:
            return False
    return True
