"""Command-line front end.

The thread-count override (MCDFLOW_NUM_THREADS) must reach the BLAS
runtime before numpy loads, so :func:`main` configures the environment
first and imports the numerical modules afterwards.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _configure_threads() -> None:
    n = os.environ.get("MCDFLOW_NUM_THREADS")
    if n:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, n)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mcdflow",
        description="Meshfree staggered incompressible-flow and acoustics "
                    "solver on mesh-constrained discrete points.",
    )
    ap.add_argument("-v", "--verbose", action="store_true",
                    help="log progress at INFO level")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("geometry", help="inspect node arrangements")
    gsub = g.add_subparsers(dest="action", required=True)
    gd = gsub.add_parser("dump", help="write nodes (and edges) as CSV")
    _case_source_args(gd)
    gd.add_argument("--nodes", default="nodes.csv", help="nodes CSV path")
    gd.add_argument("--edges", default=None, help="optional edges CSV path")

    o = sub.add_parser("operators", help="inspect fitted operator weights")
    osub = o.add_subparsers(dest="action", required=True)
    od = osub.add_parser("dump", help="write per-node weights + condition "
                                      "numbers as CSV")
    _case_source_args(od)
    od.add_argument("--out", default="operators.csv")

    a = sub.add_parser("acoustics", help="run the rigid-box pulse case")
    a.add_argument("--config", default=None, help="JSON case config")
    a.add_argument("--n", type=int, default=65,
                   help="points per side incl. walls (l0 = L/(n-1))")
    a.add_argument("--mode", choices=("staggered", "collocated"),
                   default="staggered")
    a.add_argument("--obstacle", choices=("none", "damping"), default="none")
    a.add_argument("--t-end", type=float, default=None)
    a.add_argument("--dt", type=float, default=None)
    a.add_argument("--paper-scale", action="store_true")
    a.add_argument("--out", default="acoustics-out", help="output directory")
    a.add_argument("--probe-line", action="store_true",
                   help="write the y = L/2 centerline pressure profile")
    a.add_argument("--format", choices=("csv", "vtk-legacy"), default="csv")

    n = sub.add_parser("ns", help="run an incompressible-flow case")
    n.add_argument("case", nargs="?", default=None,
                   help="preset name (tgv, cavity, channel-cylinder, "
                        "oscillating-cylinder) or omit with --config")
    n.add_argument("--config", default=None, help="JSON case config")
    n.add_argument("--n", type=int, default=None, help="preset resolution")
    n.add_argument("--re", type=float, default=None,
                   help="Reynolds number (cavity preset)")
    n.add_argument("--mode", choices=("staggered", "collocated"),
                   default="staggered")
    n.add_argument("--beta", type=float, default=None,
                   help="face-blend parameter in [0, 1]")
    n.add_argument("--arrangement", choices=("uniform", "randomized"),
                   default="uniform")
    n.add_argument("--alpha", type=float, default=0.5,
                   help="randomized-shift amplitude (fraction of l0)")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--t-end", type=float, default=None)
    n.add_argument("--dt", type=float, default=None)
    n.add_argument("--paper-scale", action="store_true")
    n.add_argument("--out", default="ns-out", help="output directory")
    n.add_argument("--snapshot-every", type=int, default=0,
                   help="snapshot cadence in steps (0 = final only)")
    n.add_argument("--format", choices=("csv", "vtk-legacy"), default="csv")
    n.add_argument("--progress-every", type=int, default=0)

    c = sub.add_parser("converge", help="grid-convergence study of a case")
    c.add_argument("case", choices=("tgv",))
    c.add_argument("--resolutions", default="16,32,64")
    c.add_argument("--arrangement", choices=("uniform", "randomized"),
                   default="uniform")
    c.add_argument("--alpha", type=float, default=0.5)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--t-end", type=float, default=0.1)
    c.add_argument("--dt", type=float, default=1e-5)
    c.add_argument("--out", default="convergence.csv")

    p = sub.add_parser("compare", help="deviation of a profile CSV from a "
                                       "reference table")
    p.add_argument("profile", help="CSV from a probe line (x, y, fields)")
    p.add_argument("reference", help="reference CSV (bundled-table layout "
                                     "or two plain columns)")
    p.add_argument("--field", default="u", help="profile column to compare")
    p.add_argument("--table", default=None,
                   help="table name inside a bundled-layout reference")
    p.add_argument("--column", default=None,
                   help="value column inside a bundled-layout reference")
    p.add_argument("--coord-offset", type=float, default=0.0,
                   help="added to profile coordinates before matching "
                        "(e.g. 0.5 maps [-1/2,1/2] onto [0,1])")
    return ap


def _case_source_args(sp) -> None:
    sp.add_argument("--preset", default=None,
                    help="preset name; omit with --config")
    sp.add_argument("--config", default=None, help="JSON case config")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--re", type=float, default=None)
    sp.add_argument("--mode", default="staggered")
    sp.add_argument("--obstacle", default="none",
                    help="acoustics preset obstacle")
    sp.add_argument("--arrangement", default="uniform")
    sp.add_argument("--alpha", type=float, default=0.5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--paper-scale", action="store_true")


def _resolve_config(args, case_name=None):
    from .cases import CaseConfig, preset

    if args.config:
        return CaseConfig.load(args.config)
    name = case_name or getattr(args, "preset", None)
    if not name:
        raise SystemExit("either a preset name or --config is required")
    kw = {}
    if getattr(args, "n", None) is not None and name in (
            "tgv", "cavity", "acoustics"):
        kw["n"] = args.n
    if getattr(args, "re", None) is not None and name == "cavity":
        kw["re"] = args.re
    if getattr(args, "mode", None) and name != "tgv":
        kw["mode"] = args.mode
    if getattr(args, "mode", None) and name == "tgv":
        kw["mode"] = args.mode
    if getattr(args, "obstacle", None) and name == "acoustics":
        kw["obstacle"] = args.obstacle
    if getattr(args, "arrangement", None) and name in ("tgv", "cavity"):
        kw["arrangement"] = args.arrangement
        if args.arrangement == "randomized":
            kw["alpha"] = args.alpha
            kw["seed"] = args.seed
    if getattr(args, "paper_scale", False):
        kw["paper_scale"] = True
    cfg = preset(name, **kw)
    if getattr(args, "beta", None) is not None:
        cfg.beta = args.beta
    if getattr(args, "t_end", None) is not None:
        cfg.t_end = args.t_end
    if getattr(args, "dt", None) is not None:
        cfg.dt = args.dt
    return cfg


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _cmd_geometry_dump(args) -> int:
    from .cases import build_geometry

    cfg = _resolve_config(args)
    nodes, st = build_geometry(cfg)
    with open(args.nodes, "w", newline="\n") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "x", "y", "kind", "tag"])
        for i in range(nodes.n):
            t = nodes.tag[i]
            w.writerow([i, _fmt(nodes.x[i, 0]), _fmt(nodes.x[i, 1]),
                        int(nodes.kind[i]),
                        nodes.tags[t] if t >= 0 else ""])
    print(f"wrote {nodes.n} nodes to {args.nodes}")
    if args.edges:
        import numpy as np

        rows, cols = np.nonzero(st.edge_sign > 0)
        order = np.argsort(st.edge_id[rows, cols])
        rows, cols = rows[order], cols[order]
        with open(args.edges, "w", newline="\n") as fh:
            w = csv.writer(fh)
            w.writerow(["edge_id", "node_a", "node_b", "xm", "ym"])
            for r, c in zip(rows, cols):
                mid = nodes.x[r] + st.moff[r, c]
                w.writerow([int(st.edge_id[r, c]), int(r), int(st.nbr[r, c]),
                            _fmt(mid[0]), _fmt(mid[1])])
        print(f"wrote {st.n_edges} edges to {args.edges}")
    return 0


def _cmd_operators_dump(args) -> int:
    from .cases import build_geometry, _bc_masks, CaseConfig
    from .operators import build_operators

    cfg = _resolve_config(args)
    nodes, st = build_geometry(cfg)
    dirichlet, _ = _bc_masks(nodes, cfg) if cfg.bc else (None, None)
    op = build_operators(nodes, st, dirichlet=dirichlet)
    header = ["id", "x", "y", "kind", "nnbr", "cond_plain", "cond_aug",
              "regularized", "cond_nodal"]
    header += [f"g{k}" for k in range(8)] + [f"dx{k}" for k in range(8)] \
        + [f"dy{k}" for k in range(8)]
    with open(args.out, "w", newline="\n") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(op.n):
            row = [i, _fmt(nodes.x[i, 0]), _fmt(nodes.x[i, 1]),
                   int(nodes.kind[i]), int(st.nnbr[i]),
                   _fmt(op.plain.cond[i]), _fmt(op.aug.cond[i]),
                   int(op.aug.regularized[i]),
                   _fmt(op.nodal.cond[i]) if op.nodal is not None else ""]
            row += [_fmt(v) for v in op.aug.g[i]]
            row += [_fmt(v) for v in op.aug.d[i, :, 0]]
            row += [_fmt(v) for v in op.aug.d[i, :, 1]]
            w.writerow(row)
    print(f"wrote operator weights for {op.n} nodes to {args.out}")
    return 0


def _cmd_acoustics(args) -> int:
    import numpy as np

    from .cases import preset_acoustics, run_case, CaseConfig
    from .benchmarks import sample_profile
    from .operators import radial_targets, staggered_to_nodal_velocity
    from .output import snapshot_fields, write_probe_lines, write_snapshot

    if args.config:
        cfg = CaseConfig.load(args.config)
    else:
        cfg = preset_acoustics(n=args.n, mode=args.mode,
                               obstacle=args.obstacle,
                               paper_scale=args.paper_scale)
    if args.t_end is not None:
        cfg.t_end = args.t_end
    if args.dt is not None:
        cfg.dt = args.dt
    res = run_case(cfg, out_dir=args.out)
    op, state = res.op, res.state

    if state.U is not None:
        u = staggered_to_nodal_velocity(
            op, radial_targets(op, state.U, np.zeros((op.n, 2))))
        u[~op.fluid] = 0.0
        fields = snapshot_fields(op, u, state.p, state.U)
    else:
        fields = snapshot_fields(op, state.u, state.p, None)
    import pathlib

    snap = pathlib.Path(args.out) / (
        "snapshot_final.csv" if args.format == "csv" else "snapshot_final.vtk")
    write_snapshot(op, fields, snap, fmt=args.format)
    print(f"final checkerboard metric: "
          f"{res.series['checkerboard_p'][-1]:.6g}")
    print(f"snapshot: {snap}")
    if args.probe_line:
        g = cfg.geometry
        xs = np.linspace(g["xmin"] + g["l0"], g["xmax"] - g["l0"], 201)
        pts = np.column_stack([xs, np.full_like(xs, 0.5 * (
            g["ymin"] + g["ymax"]))])
        p_line = sample_profile(op.nodes, op.st, state.p, pts)
        path = pathlib.Path(args.out) / "centerline_p.csv"
        write_probe_lines(pts, {"p": p_line}, path)
        print(f"probe line: {path}")
    return 0


def _cmd_ns(args) -> int:
    from .cases import run_case

    cfg = _resolve_config(args, case_name=args.case)
    cfg.output.setdefault("snapshot_every", args.snapshot_every)
    cfg.output.setdefault("format", args.format)
    res = run_case(cfg, out_dir=args.out,
                   progress_every=args.progress_every)
    last = res.reports[-1] if res.reports else None
    print(f"{cfg.name}: {len(res.reports)} steps to t = {res.state.t:.6g}"
          + (" (steady)" if res.steady else ""))
    if last is not None:
        print(f"final max |div u| = {last.max_div:.3e}, "
              f"Courant {last.courant:.3g}, "
              f"diffusion number {last.diffusion_number:.3g}")
    for label, path in res.artifacts.items():
        print(f"{label}: {path}")
    return 0


def _cmd_converge(args) -> int:
    from .benchmarks import convergence_study
    from .cases import preset_tgv, run_case, taylor_green_error_norms

    resolutions = [int(s) for s in args.resolutions.split(",")]

    def factory(n):
        cfg = preset_tgv(n=n, arrangement=args.arrangement,
                         alpha=args.alpha, seed=args.seed,
                         dt=args.dt, t_end=args.t_end)
        return taylor_green_error_norms(run_case(cfg))

    reports = convergence_study(factory, resolutions, fields=("u", "v", "p"),
                                csv_path=args.out)
    for rep in reports:
        parts = [f"n={rep.resolution:g}"]
        for f in ("u", "v", "p"):
            o = (rep.orders or {}).get(f)
            parts.append(
                f"{f}: L2={rep.norms[f].l2:.3e}"
                + (f" order={o:.2f}" if o is not None else ""))
        print("  ".join(parts))
    print(f"wrote {args.out}")
    return 0


def _cmd_compare(args) -> int:
    import numpy as np

    from .benchmarks import load_reference_table, reference_comparison

    with open(args.profile, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    cols = {name: np.array([float(r[k]) for r in data])
            for k, name in enumerate(header)}
    if args.field not in cols:
        raise SystemExit(f"profile has no column {args.field!r}")
    # probe coordinate = whichever axis actually varies
    coord = cols["x"] if np.ptp(cols["x"]) >= np.ptp(cols["y"]) else cols["y"]
    coord = coord + args.coord_offset
    values = cols[args.field]

    with open(args.reference) as fh:
        for line in fh:
            if not line.startswith("#") and line.strip():
                bundled = line.startswith("table,")
                break
        else:
            raise SystemExit("empty reference file")
    if bundled:
        table = load_reference_table(args.reference)
        if args.table is None or args.column is None:
            names = sorted({t for t, _ in table})
            cols_avail = sorted({c for _, c in table})
            raise SystemExit(
                f"bundled reference: pick --table from {names} and "
                f"--column from {cols_avail}")
        ref_coord, ref_val = table[(args.table, args.column)]
    else:
        ref = np.loadtxt(args.reference, delimiter=",", skiprows=1)
        ref_coord, ref_val = ref[:, 0], ref[:, 1]

    stats = reference_comparison(coord, values, ref_coord, ref_val)
    print(f"n = {stats.n}, rms = {stats.rms:.6g}, max = {stats.max:.6g}")
    return 0


def main(argv=None) -> int:
    _configure_threads()
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "geometry":
            return _cmd_geometry_dump(args)
        if args.command == "operators":
            return _cmd_operators_dump(args)
        if args.command == "acoustics":
            return _cmd_acoustics(args)
        if args.command == "ns":
            return _cmd_ns(args)
        if args.command == "converge":
            return _cmd_converge(args)
        if args.command == "compare":
            return _cmd_compare(args)
    except (ValueError, RuntimeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
