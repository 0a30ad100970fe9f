"""Exact solutions, error norms, convergence studies, reference profiles."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import NodeSet, StencilTable
from .mls import evaluate_at_points

log = logging.getLogger("mcdflow")


def taylor_green_exact(
    points: np.ndarray,
    t: float,
    U: float = 1.0,
    L: float = 1.0,
    rho: float = 1.0,
    eta: float = 0.01,
) -> tuple[np.ndarray, np.ndarray]:
    """Decaying vortex on the periodic square [-L, L]^2.

        u =  U F sin(pi x/L) cos(pi y/L)
        v = -U F cos(pi x/L) sin(pi y/L),   F = exp(-2 pi^2 eta t / rho L^2)
        p = (rho U^2/4) F^2 [cos(2 pi x/L) + cos(2 pi y/L)]

    The pressure is the (zero-mean) field that balances advection for this
    velocity; note the doubled arguments, which the divergence-free pair
    above forces through u . grad u.  Returns (velocity (K, 2), pressure).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = np.pi / L
    F = np.exp(-2.0 * np.pi**2 * eta * t / (rho * L * L))
    sx, cx = np.sin(k * pts[:, 0]), np.cos(k * pts[:, 0])
    sy, cy = np.sin(k * pts[:, 1]), np.cos(k * pts[:, 1])
    vel = np.stack([U * F * sx * cy, -U * F * cx * sy], axis=1)
    p = (rho * U * U / 4.0) * F * F * (
        np.cos(2 * k * pts[:, 0]) + np.cos(2 * k * pts[:, 1])
    )
    return vel, p


@dataclass
class FieldNorms:
    l1: float
    l2: float
    linf: float


def error_norms(numerical: np.ndarray, exact: np.ndarray) -> FieldNorms:
    """Mean-absolute, root-mean-square and max norms of the pointwise error.

    The 1/N normalizations use the total sample count, so a single-node
    spike of size eps gives L1 = eps/N, L2 = eps/sqrt(N), Linf = eps, and
    Linf >= L2 >= L1 always.
    """
    e = np.abs(np.asarray(numerical, dtype=float) - np.asarray(exact, dtype=float))
    e = e.ravel()
    return FieldNorms(
        l1=float(e.mean()),
        l2=float(np.sqrt((e * e).mean())),
        linf=float(e.max()),
    )


@dataclass
class ErrorReport:
    resolution: float
    norms: dict          # field name -> FieldNorms
    orders: dict | None  # field name -> observed order vs previous resolution
    flagged: str = ""


def observed_orders(
    reports: list[ErrorReport], norm: str = "l2", eps_floor: float = 1e-13
) -> None:
    """Fill each report's orders from the preceding (coarser) one in place.

    order = log2(e_coarse / e_fine) for a resolution doubling.  Errors at
    the fit/roundoff floor make the ratio meaningless; such entries are
    flagged instead of reported as orders.
    """
    for prev, cur in zip(reports, reports[1:]):
        cur.orders = {}
        for name, n_cur in cur.norms.items():
            e0 = getattr(prev.norms[name], norm)
            e1 = getattr(n_cur, norm)
            if e0 < eps_floor or e1 < eps_floor:
                cur.flagged = "error at machine/fit floor; order undefined"
                cur.orders[name] = np.nan
            else:
                cur.orders[name] = float(np.log2(e0 / e1))


def write_convergence_csv(reports: list[ErrorReport], path) -> None:
    fields = sorted({k for r in reports for k in r.norms})
    with open(path, "w", newline="\n") as fh:
        w = csv.writer(fh)
        header = ["resolution"]
        for f in fields:
            header += [f"{f}_l1", f"{f}_l2", f"{f}_linf", f"{f}_order"]
        header.append("flag")
        w.writerow(header)
        for r in reports:
            row = [f"{r.resolution:.17g}"]
            for f in fields:
                n = r.norms[f]
                order = "" if not r.orders or np.isnan(
                    r.orders.get(f, np.nan)
                ) else f"{r.orders[f]:.6g}"
                row += [f"{n.l1:.17g}", f"{n.l2:.17g}", f"{n.linf:.17g}", order]
            row.append(r.flagged)
            w.writerow(row)


def convergence_study(
    case_factory,
    resolutions,
    fields=("u", "v", "p"),
    csv_path=None,
) -> list[ErrorReport]:
    """Run ``case_factory(n)`` per resolution and tabulate error orders.

    The factory returns (errors: dict field -> FieldNorms).  Needs >= 3
    resolutions for two order estimates.  A failed run aborts the study;
    the partial table is written (flagged) before re-raising.
    """
    if len(resolutions) < 3:
        raise ValueError("convergence study needs at least 3 resolutions")
    reports: list[ErrorReport] = []
    try:
        for n in resolutions:
            norms = case_factory(n)
            reports.append(
                ErrorReport(resolution=float(n), norms=norms, orders=None)
            )
    except Exception:
        if reports:
            reports[-1].flagged = "study aborted after this resolution"
            if csv_path:
                write_convergence_csv(reports, csv_path)
        raise
    observed_orders(reports)
    if csv_path:
        write_convergence_csv(reports, csv_path)
    return reports


# ---------------------------------------------------------------------------
# profiles and reference tables

def sample_profile(
    nodes: NodeSet,
    st: StencilTable,
    values: np.ndarray,
    points: np.ndarray,
) -> np.ndarray:
    """Field values along a probe line via the local collocated fits."""
    return evaluate_at_points(nodes, st, values, points)


@dataclass
class DeviationStats:
    max: float
    rms: float
    n: int


def reference_comparison(
    profile_coords: np.ndarray,
    profile_values: np.ndarray,
    ref_coords: np.ndarray,
    ref_values: np.ndarray,
) -> DeviationStats:
    """Deviation of a sampled profile from a reference table.

    The numerical profile is linearly interpolated to the reference
    abscissae; abscissae outside the sampled range raise.
    """
    pc = np.asarray(profile_coords, dtype=float)
    pv = np.asarray(profile_values, dtype=float)
    order = np.argsort(pc)
    pc, pv = pc[order], pv[order]
    rc = np.asarray(ref_coords, dtype=float)
    if rc.min() < pc.min() - 1e-12 or rc.max() > pc.max() + 1e-12:
        raise ValueError("reference abscissae outside the sampled profile")
    interp = np.interp(rc, pc, pv)
    dev = np.abs(interp - np.asarray(ref_values, dtype=float))
    return DeviationStats(
        max=float(dev.max()), rms=float(np.sqrt((dev * dev).mean())), n=rc.size
    )


def load_reference_table(path) -> dict:
    """Read a transcribed benchmark table.

    Expected layout: comment lines starting '#' (provenance), then a
    header ``table,coord,<col>,...`` and rows keyed by table name.
    Returns {(table, col): (coords, values)}.
    """
    path = Path(path)
    out: dict = {}
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header = rows[0]
    cols = header[2:]
    for row in rows[1:]:
        table = row[0]
        coord = float(row[1])
        for cname, sval in zip(cols, row[2:]):
            if sval == "":
                continue
            out.setdefault((table, cname), []).append((coord, float(sval)))
    return {
        key: (
            np.array([c for c, _ in vals]),
            np.array([v for _, v in vals]),
        )
        for key, vals in out.items()
    }


def bundled_reference(name: str) -> Path | None:
    """Path of a shipped reference table, or None with a warning if absent."""
    p = Path(__file__).parent / "reference" / name
    if not p.exists():
        log.warning("reference table %s not available; comparison skipped", name)
        return None
    return p
