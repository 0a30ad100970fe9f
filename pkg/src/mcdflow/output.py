"""Snapshot, probe and diagnostics writers.

All text output is deterministic for a given state: fields are printed
with 17 significant digits (full float64 round trip), rows follow node
id order, lines end with LF.  Snapshots cover the active (fluid +
boundary) nodes; derived quantities that only exist on fluid nodes
(pressure, divergence, vorticity) are copied from the inward partner on
boundary rows so viewers get a complete field.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .geometry import KIND_EXCLUDED
from .mls import gather_node_samples
from .operators import Operators, StaggeredField, radial_targets, \
    staggered_divergence, nodal_divergence

SNAPSHOT_COLUMNS = ["id", "x", "y", "u", "v", "p", "div", "vorticity"]


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _partner_fill(op: Operators, f: np.ndarray) -> np.ndarray:
    out = f.copy()
    bnd = np.flatnonzero(op.nodes.kind == 1)
    part = op.st.partner[bnd]
    ok = part >= 0
    out[bnd[ok]] = f[part[ok]]
    return out


def snapshot_fields(
    op: Operators,
    u: np.ndarray,
    p_node: np.ndarray,
    U: StaggeredField | None = None,
) -> dict:
    """Assemble the canonical snapshot column set from a solver state."""
    if U is not None:
        div = staggered_divergence(op, radial_targets(op, U, u))
    else:
        div = nodal_divergence(op.nodal, gather_node_samples(op.nodal, u))
    grads = np.einsum(
        "nsc,nsd->ncd", op.nodal.d, gather_node_samples(op.nodal, u)
    )  # grads[i, a, c] = d_a u_c at node i
    vort = grads[:, 0, 1] - grads[:, 1, 0]
    div = np.where(op.fluid, div, 0.0)
    vort = np.where(op.fluid, vort, 0.0)
    return {
        "u": u[:, 0],
        "v": u[:, 1],
        "p": _partner_fill(op, p_node),
        "div": _partner_fill(op, div),
        "vorticity": _partner_fill(op, vort),
    }


def write_snapshot(op: Operators, fields: dict, path, fmt: str = "csv") -> Path:
    """Write one snapshot as CSV or legacy-VTK point data."""
    path = Path(path)
    active = np.flatnonzero(op.nodes.kind != KIND_EXCLUDED)
    x = op.nodes.x
    if fmt == "csv":
        with open(path, "w", newline="\n") as fh:
            w = csv.writer(fh)
            w.writerow(SNAPSHOT_COLUMNS)
            for i in active:
                w.writerow(
                    [int(i), _fmt(x[i, 0]), _fmt(x[i, 1])]
                    + [_fmt(fields[c][i]) for c in SNAPSHOT_COLUMNS[3:]]
                )
    elif fmt == "vtk-legacy":
        with open(path, "w", newline="\n") as fh:
            n = active.size
            fh.write("# vtk DataFile Version 3.0\n")
            fh.write("mcdflow snapshot\n")
            fh.write("ASCII\nDATASET POLYDATA\n")
            fh.write(f"POINTS {n} double\n")
            for i in active:
                fh.write(f"{_fmt(x[i, 0])} {_fmt(x[i, 1])} 0\n")
            fh.write(f"VERTICES {n} {2 * n}\n")
            for k in range(n):
                fh.write(f"1 {k}\n")
            fh.write(f"POINT_DATA {n}\n")
            fh.write("VECTORS velocity double\n")
            for i in active:
                fh.write(f"{_fmt(fields['u'][i])} {_fmt(fields['v'][i])} 0\n")
            for name, col in (
                ("pressure", "p"),
                ("divergence", "div"),
                ("vorticity", "vorticity"),
            ):
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                for i in active:
                    fh.write(f"{_fmt(fields[col][i])}\n")
    else:
        raise ValueError(f"unknown snapshot format {fmt!r}")
    return path


def read_snapshot_csv(path) -> dict:
    """Read back a CSV snapshot into column arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {name: np.array([float(r[k]) for r in data])
            for k, name in enumerate(header)}
    cols["id"] = cols["id"].astype(int)
    return cols


def write_probe_lines(points: np.ndarray, values: dict, path) -> Path:
    """Probe samples as CSV: x, y then one column per field.

    An empty point list still writes the header (column contract stays
    discoverable).
    """
    path = Path(path)
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    names = list(values)
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"] + names)
        for k in range(points.shape[0]):
            w.writerow(
                [_fmt(points[k, 0]), _fmt(points[k, 1])]
                + [_fmt(values[n][k]) for n in names]
            )
    return path


class DiagnosticsWriter:
    """Incremental per-step diagnostics CSV."""

    COLUMNS = [
        "step", "t", "max_div", "residual_inf", "identity_gap",
        "solver_iters", "solver_residual", "solver_converged",
        "max_speed", "courant", "diffusion_number",
    ]

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "w", newline="\n")
        self._w = csv.writer(self._fh)
        self._w.writerow(self.COLUMNS)

    def write(self, step: int, rep) -> None:
        sv = rep.solve
        self._w.writerow([
            step, _fmt(rep.t), _fmt(rep.max_div), _fmt(rep.residual_inf),
            _fmt(rep.identity_gap),
            sv.n_iter if sv else 0,
            _fmt(sv.residual) if sv else _fmt(0.0),
            int(sv.converged) if sv else 1,
            _fmt(rep.max_speed), _fmt(rep.courant),
            _fmt(rep.diffusion_number),
        ])

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None


def write_series_csv(path, columns: dict) -> Path:
    """Write aligned 1D series as CSV (drag histories, metric series)."""
    path = Path(path)
    names = list(columns)
    length = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for k in range(length):
            w.writerow([_fmt(float(columns[n][k])) for n in names])
    return path
