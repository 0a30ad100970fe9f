"""Benchmark case definitions and run orchestration.

A case is a plain-data :class:`CaseConfig` (JSON round-trippable) plus
the machinery to realize it: node generation, operator fits, boundary
condition closures, forcing assembly and the time loop with stopping
rules.  Preset factories encode the standard benchmark setups at desk
scale; paper-scale resolutions sit behind an explicit flag because they
turn minutes into hours.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .acoustics import (
    AcousticsState,
    DampingSpec,
    acoustics_step_collocated,
    acoustics_step_staggered,
    checkerboard_metric,
    cosine_pulse,
    damping_coefficient,
    edge_damping_factors,
    make_acoustics_state,
    node_damping_factors,
)
from .benchmarks import taylor_green_exact
from .geometry import (
    KIND_BOUNDARY,
    build_background_mesh,
    build_local_stencils,
    generate_nodes,
    place_obstacle_nodes,
)
from .ns import (
    FlowState,
    FluidParams,
    FrameForcing,
    StepReport,
    SurfaceProbe,
    assemble_poisson_collocated,
    build_surface_probe,
    damping_drag,
    drag_coefficient,
    make_flow_state,
    ns_step_collocated,
    ns_step_staggered,
)
from .operators import Operators, assemble_poisson, build_operators
from .output import DiagnosticsWriter, snapshot_fields, write_snapshot, \
    write_series_csv

log = logging.getLogger("mcdflow")

PRESETS = (
    "tgv",
    "cavity",
    "channel-cylinder",
    "oscillating-cylinder",
    "acoustics",
)


@dataclass
class CaseConfig:
    """Plain-data description of one run; every field JSON-serializable.

    geometry: xmin/xmax/ymin/ymax/l0/periodic_x/periodic_y, ``walls``
    mapping side name -> tag (dict order decides corner ownership: later
    sides win), optional ``obstacle`` {center, radius, mode, tag[, alpha0]}.
    bc: tag -> {"type": "velocity", "u": [ux, uy]} or {"type": "outlet"}.
    forcing: optional {"frame": {"amplitude", "frequency"}}.  A damping
    obstacle forces through its alpha0 cosine bell.
    initial: {"type": "zero" | "uniform" | "taylor-green" | "pulse", ...}.
    """

    name: str
    kind: str = "ns"                      # "ns" | "acoustics"
    geometry: dict = field(default_factory=dict)
    arrangement: str = "uniform"
    alpha: float = 0.0
    seed: int = 0
    mode: str = "staggered"               # "staggered" | "collocated"
    beta: float = 0.99
    dt: float = 1e-3
    t_end: float = 1.0
    max_steps: int = 0                    # 0 = no cap
    steady_tol: float = 0.0               # 0 = horizon only
    params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=lambda: {
        "criterion": "relative", "tol": 1e-7,
        "max_iter": 20000, "precondition": "direct",
    })
    bc: dict = field(default_factory=dict)
    forcing: dict = field(default_factory=dict)
    initial: dict = field(default_factory=lambda: {"type": "zero"})
    output: dict = field(default_factory=dict)
    reference: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CaseConfig":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "CaseConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json() + "\n")
        return path

    @classmethod
    def load(cls, path) -> "CaseConfig":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# presets

def _scale_guard(value, desk_cap, paper_scale, what):
    if not paper_scale and value > desk_cap:
        raise ValueError(
            f"{what} {value} exceeds the desk cap {desk_cap}; "
            "pass paper_scale=True for full-size runs"
        )


def preset_tgv(
    n: int = 32,
    arrangement: str = "uniform",
    alpha: float = 0.5,
    seed: int = 0,
    mode: str = "staggered",
    beta: float = 0.99,
    dt: float = 1e-5,
    t_end: float = 0.1,
    paper_scale: bool = False,
) -> CaseConfig:
    """Decaying vortex array on the doubly periodic square [-1, 1]^2."""
    _scale_guard(n, 64, paper_scale, "tgv resolution n")
    return CaseConfig(
        name=f"tgv-n{n}-{arrangement}",
        kind="ns",
        geometry={
            "xmin": -1.0, "xmax": 1.0, "ymin": -1.0, "ymax": 1.0,
            "l0": 2.0 / n, "periodic_x": True, "periodic_y": True,
            "walls": {}, "obstacle": None,
        },
        arrangement=arrangement,
        alpha=alpha if arrangement == "randomized" else 0.0,
        seed=seed,
        mode=mode,
        beta=beta,
        dt=dt,
        t_end=t_end,
        params={"rho": 1.0, "eta": 0.01},
        solver={"criterion": "absolute", "tol": 1e-7,
                "max_iter": 20000, "precondition": "direct"},
        initial={"type": "taylor-green", "U": 1.0, "L": 1.0},
        reference={"u_ref": 1.0, "length_ref": 1.0},
    )


def preset_cavity(
    n: int = 65,
    re: float = 100.0,
    mode: str = "staggered",
    beta: float = 0.99,
    arrangement: str = "uniform",
    alpha: float = 0.0,
    seed: int = 0,
    t_end: float = 100.0,
    paper_scale: bool = False,
) -> CaseConfig:
    """Lid-driven cavity on [-1/2, 1/2]^2, lid speed 1, run to steadiness.

    n counts points per side including both walls, so l0 = 1/(n-1); the
    lid is tagged last and owns the top corners.
    """
    _scale_guard(n, 129, paper_scale, "cavity resolution n")
    l0 = 1.0 / (n - 1)
    return CaseConfig(
        name=f"cavity-re{re:g}-n{n}",
        kind="ns",
        geometry={
            "xmin": -0.5, "xmax": 0.5, "ymin": -0.5, "ymax": 0.5,
            "l0": l0, "periodic_x": False, "periodic_y": False,
            "walls": {"left": "wall", "right": "wall",
                      "bottom": "wall", "top": "lid"},
            "obstacle": None,
        },
        arrangement=arrangement,
        alpha=alpha,
        seed=seed,
        mode=mode,
        beta=beta,
        dt=0.128 * l0,
        t_end=t_end,
        steady_tol=1e-3,
        params={"rho": 1.0, "eta": 1.0 / re},
        solver={"criterion": "relative", "tol": 1e-7,
                "max_iter": 20000, "precondition": "direct"},
        bc={"wall": {"type": "velocity", "u": [0.0, 0.0]},
            "lid": {"type": "velocity", "u": [1.0, 0.0]}},
        initial={"type": "zero"},
        reference={"u_ref": 1.0, "length_ref": 1.0},
    )


def preset_channel_cylinder(
    mode: str = "staggered",
    beta: float = 0.99,
    dt_factor: float = 0.01,
    t_end: float = 2.0,
    paper_scale: bool = False,
) -> CaseConfig:
    """Channel flow past a damping-zone cylinder at Re = 200.

    Domain x in [-2, 6], y in [-2, 2] (periodic), inlet u = (1, 0) on the
    left, outlet p = 0 on the right; the cylinder D = 1 at the origin is a
    cosine-bell damping zone with alpha0 = 1e4.  The reference interval
    dt* = 5e-3 gives Courant 0.16 at the paper resolution; runs here use
    dt = dt_factor * dt*.
    """
    l0 = 1.0 / 32 if paper_scale else 1.0 / 16
    dt_star = 5e-3
    return CaseConfig(
        name=f"channel-cylinder-{mode}",
        kind="ns",
        geometry={
            "xmin": -2.0, "xmax": 6.0, "ymin": -2.0, "ymax": 2.0,
            "l0": l0, "periodic_x": False, "periodic_y": True,
            "walls": {"left": "inlet", "right": "outlet"},
            "obstacle": {"center": [0.0, 0.0], "radius": 0.5,
                         "mode": "damping", "tag": "cylinder",
                         "alpha0": 1e4},
        },
        mode=mode,
        beta=beta,
        dt=dt_factor * dt_star,
        t_end=t_end,
        params={"rho": 1.0, "eta": 5e-3},
        solver={"criterion": "relative", "tol": 1e-5,
                "max_iter": 20000, "precondition": "direct"},
        bc={"inlet": {"type": "velocity", "u": [1.0, 0.0]},
            "outlet": {"type": "outlet"}},
        initial={"type": "uniform", "u": [1.0, 0.0]},
        reference={"u_ref": 1.0, "length_ref": 1.0, "drag": True},
    )


def preset_oscillating_cylinder(
    mode: str = "staggered",
    beta: float = 0.99,
    t_end: float = 2.0,
    paper_scale: bool = False,
) -> CaseConfig:
    """Cylinder oscillating in quiescent fluid, solved in the body frame.

    Re = 100, KC = U/(f D) = 5 with U = 5, f = 1, D = 1; the frame motion
    x_cyl = -A sin(2 pi f t), A = U/(2 pi f), enters as the inertial
    forcing -xddot.  All outer walls and the fitted cylinder surface are
    no-slip in the body frame.
    """
    l0 = 1.0 / 40 if paper_scale else 1.0 / 20
    U, f = 5.0, 1.0
    return CaseConfig(
        name=f"oscillating-cylinder-{mode}",
        kind="ns",
        geometry={
            "xmin": -10.0, "xmax": 10.0, "ymin": -10.0, "ymax": 10.0,
            "l0": l0, "periodic_x": False, "periodic_y": False,
            "walls": {"left": "wall", "right": "wall",
                      "bottom": "wall", "top": "wall"},
            "obstacle": {"center": [0.0, 0.0], "radius": 0.5,
                         "mode": "fitted", "tag": "cylinder"},
        },
        mode=mode,
        beta=beta,
        dt=1.0 / 900,
        t_end=t_end,
        params={"rho": 1.0, "eta": 0.05},
        solver={"criterion": "relative", "tol": 1e-5,
                "max_iter": 20000, "precondition": "direct"},
        bc={"wall": {"type": "velocity", "u": [0.0, 0.0]},
            "cylinder": {"type": "velocity", "u": [0.0, 0.0]}},
        forcing={"frame": {"amplitude": U / (2.0 * np.pi * f),
                           "frequency": f}},
        initial={"type": "zero"},
        reference={"u_ref": U, "length_ref": 1.0, "drag": True},
    )


def preset_acoustics(
    n: int = 65,
    mode: str = "staggered",
    obstacle: str = "none",
    t_end: float = 3e-4,
    paper_scale: bool = False,
) -> CaseConfig:
    """Pressure pulse in a rigid box [0, 1]^2 (rho = 1050, c = 1000).

    obstacle "damping" adds the absorber bell (alpha0 = 1e7, R = L/20 at
    (5L/8, L/2)) and uses the coarser dt = 1e-7; "none" uses dt = 5e-8.
    """
    _scale_guard(n, 129, paper_scale, "acoustics resolution n")
    l0 = 1.0 / (n - 1)
    obst = None
    if obstacle == "damping":
        obst = {"center": [0.625, 0.5], "radius": 0.05,
                "mode": "damping", "tag": "absorber", "alpha0": 1e7}
    elif obstacle != "none":
        raise ValueError(f"unknown acoustics obstacle {obstacle!r}")
    return CaseConfig(
        name=f"acoustics-n{n}-{mode}"
             + ("-damping" if obstacle == "damping" else ""),
        kind="acoustics",
        geometry={
            "xmin": 0.0, "xmax": 1.0, "ymin": 0.0, "ymax": 1.0,
            "l0": l0, "periodic_x": False, "periodic_y": False,
            "walls": {"left": "wall", "right": "wall",
                      "bottom": "wall", "top": "wall"},
            "obstacle": obst,
        },
        mode=mode,
        dt=1e-7 if obstacle == "damping" else 5e-8,
        t_end=t_end,
        params={"rho": 1050.0, "c": 1000.0},
        bc={"wall": {"type": "velocity", "u": [0.0, 0.0]}},
        initial={"type": "pulse", "center": [0.5, 0.5], "radius": 0.1},
    )


def preset(name: str, **kw) -> CaseConfig:
    factory = {
        "tgv": preset_tgv,
        "cavity": preset_cavity,
        "channel-cylinder": preset_channel_cylinder,
        "oscillating-cylinder": preset_oscillating_cylinder,
        "acoustics": preset_acoustics,
    }.get(name)
    if factory is None:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")
    return factory(**kw)


# ---------------------------------------------------------------------------
# realization

@dataclass
class CaseSetup:
    """Everything derived from a config that the time loop needs."""

    config: CaseConfig
    op: Operators
    ps: object | None                 # PoissonSystem / CollocatedPoisson
    apply_bc: object | None           # callable(u, t) or None
    damping_alpha: np.ndarray | None  # per-node NS damping coefficient
    damping_spec: DampingSpec | None
    frame: FrameForcing | None
    probe: SurfaceProbe | None


def build_geometry(cfg: CaseConfig):
    g = cfg.geometry
    mesh = build_background_mesh(
        g["xmin"], g["xmax"], g["ymin"], g["ymax"], g["l0"],
        periodic_x=g.get("periodic_x", False),
        periodic_y=g.get("periodic_y", False),
    )
    nodes = generate_nodes(
        mesh, cfg.arrangement, cfg.alpha, cfg.seed,
        walls=g.get("walls") or None,
    )
    obst = g.get("obstacle")
    if obst:
        place_obstacle_nodes(
            nodes, obst["center"], obst["radius"],
            mode=obst.get("mode", "fitted"),
            tag=obst.get("tag", "cylinder"),
        )
    st = build_local_stencils(nodes)
    return nodes, st


def _bc_masks(nodes, cfg) -> tuple[np.ndarray, np.ndarray]:
    """(velocity-Dirichlet mask, pressure-Dirichlet mask) from the bc table."""
    boundary = nodes.kind == KIND_BOUNDARY
    dirichlet = boundary.copy()
    p_dirichlet = np.zeros(nodes.n, dtype=bool)
    tagged = np.zeros(nodes.n, dtype=bool)
    for tag, spec_ in cfg.bc.items():
        ids = nodes.ids_of_tag(tag)
        tagged[ids] = True
        if spec_["type"] == "outlet":
            dirichlet[ids] = False
            p_dirichlet[ids] = True
        elif spec_["type"] != "velocity":
            raise ValueError(f"unknown bc type {spec_['type']!r} for {tag!r}")
    missing = boundary & ~tagged
    if cfg.kind == "ns" and missing.any():
        names = {nodes.tags[t] for t in set(nodes.tag[missing]) if t >= 0}
        raise ValueError(
            f"boundary nodes without a bc entry (tags {sorted(names)})"
        )
    return dirichlet, p_dirichlet


def _make_bc_applier(op: Operators, cfg: CaseConfig):
    rules = []
    outlets = []
    for tag, spec_ in cfg.bc.items():
        ids = op.nodes.ids_of_tag(tag)
        if ids.size == 0:
            continue
        if spec_["type"] == "velocity":
            rules.append((ids, np.asarray(spec_["u"], dtype=float)))
        elif spec_["type"] == "outlet":
            part = op.st.partner[ids]
            if (part < 0).any():
                raise ValueError(f"outlet nodes of {tag!r} lack a fluid partner")
            outlets.append((ids, part))
    if not rules and not outlets:
        return None

    def apply_bc(u, t):
        for ids, val in rules:
            u[ids] = val
        for ids, part in outlets:
            u[ids] = u[part]

    return apply_bc


def build_case(cfg: CaseConfig) -> CaseSetup:
    """Realize a config: nodes, operator fits, pressure system, closures."""
    nodes, st = build_geometry(cfg)
    dirichlet, p_dirichlet = _bc_masks(nodes, cfg)
    op = build_operators(nodes, st, dirichlet=dirichlet)

    ps = None
    if cfg.kind == "ns":
        if cfg.mode == "staggered":
            ps = assemble_poisson(op, p_dirichlet=p_dirichlet)
        elif cfg.mode == "collocated":
            ps = assemble_poisson_collocated(op, p_dirichlet=p_dirichlet)
        else:
            raise ValueError(f"unknown mode {cfg.mode!r}")
    elif cfg.kind != "acoustics":
        raise ValueError(f"unknown case kind {cfg.kind!r}")

    apply_bc = _make_bc_applier(op, cfg)

    damping_alpha = None
    damping_spec = None
    obst = cfg.geometry.get("obstacle")
    if obst and obst.get("mode") == "damping":
        damping_spec = DampingSpec(
            alpha0=obst["alpha0"],
            center=tuple(obst["center"]),
            radius=obst["radius"],
        )
        if cfg.kind == "ns":
            damping_alpha = damping_coefficient(nodes.x, damping_spec)
            adt = float(damping_alpha.max()) * cfg.dt
            if adt > 1.0:
                log.warning(
                    "explicit damping is stiff: max(alpha)*dt = %.3g > 1", adt
                )

    frame = None
    fr = cfg.forcing.get("frame")
    if fr:
        frame = FrameForcing(amplitude=fr["amplitude"], frequency=fr["frequency"])

    probe = None
    if cfg.reference.get("drag") and obst and obst.get("mode") == "fitted":
        probe = build_surface_probe(op, obst.get("tag", "cylinder"),
                                    obst["radius"])

    return CaseSetup(
        config=cfg, op=op, ps=ps, apply_bc=apply_bc,
        damping_alpha=damping_alpha, damping_spec=damping_spec,
        frame=frame, probe=probe,
    )


def initial_state(setup: CaseSetup):
    """Build the t = 0 solver state prescribed by the config."""
    cfg, op = setup.config, setup.op
    init = cfg.initial
    kind_ = init.get("type", "zero")
    if cfg.kind == "acoustics":
        if kind_ == "pulse":
            p0 = cosine_pulse(op.nodes.x, init["center"], init["radius"])
        elif kind_ == "zero":
            p0 = np.zeros(op.n)
        else:
            raise ValueError(f"unknown acoustics initial {kind_!r}")
        return make_acoustics_state(op, p0, staggered=cfg.mode == "staggered")

    if kind_ == "zero":
        u0 = np.zeros((op.n, 2))
    elif kind_ == "uniform":
        u0 = np.tile(np.asarray(init["u"], dtype=float), (op.n, 1))
    elif kind_ == "taylor-green":
        vel, _ = taylor_green_exact(
            op.nodes.x, 0.0, U=init.get("U", 1.0), L=init.get("L", 1.0),
            rho=cfg.params["rho"], eta=cfg.params["eta"],
        )
        u0 = vel
    else:
        raise ValueError(f"unknown ns initial {kind_!r}")
    state = make_flow_state(op, u0, staggered=cfg.mode == "staggered")
    if setup.apply_bc is not None:
        setup.apply_bc(state.u, 0.0)
        if state.U is not None:
            from .operators import refresh_wall_faces
            refresh_wall_faces(op, state.U, state.u)
    return state


# ---------------------------------------------------------------------------
# run loop

@dataclass
class RunResult:
    config: CaseConfig
    op: Operators
    ps: object | None
    state: object                      # FlowState | AcousticsState
    reports: list
    series: dict                       # name -> list/array time series
    steady: bool
    artifacts: dict                    # label -> Path


def _forcing_accel(setup: CaseSetup, state: FlowState) -> np.ndarray | None:
    f = None
    if setup.damping_alpha is not None:
        f = -setup.damping_alpha[:, None] * state.u
    if setup.frame is not None:
        a = setup.frame.forcing_accel(state.t)
        f = a if f is None else f + a
    return f


def _check_finite(x: np.ndarray, t: float, name: str) -> None:
    if not np.all(np.isfinite(x)):
        raise RuntimeError(f"{name} run diverged (non-finite field at t = {t:g})")


def run_case(
    cfg: CaseConfig,
    out_dir=None,
    setup: CaseSetup | None = None,
    progress_every: int = 0,
) -> RunResult:
    """Execute a configured run and collect reports, series and files.

    ``out_dir`` (or cfg.output["dir"]) enables file output: a per-step
    diagnostics CSV, snapshots every output["snapshot_every"] steps plus
    one final snapshot, a drag series CSV for obstacle cases and a
    checkerboard-metric series for acoustics runs.
    """
    if setup is None:
        setup = build_case(cfg)
    op = setup.op
    state = initial_state(setup)

    out_dir = out_dir or cfg.output.get("dir")
    artifacts: dict = {}
    diag = None
    snap_every = int(cfg.output.get("snapshot_every", 0))
    snap_fmt = cfg.output.get("format", "csv")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        artifacts["config"] = cfg.save(out_dir / "config.json")
        if cfg.kind == "ns":
            diag = DiagnosticsWriter(out_dir / "diagnostics.csv")
            artifacts["diagnostics"] = diag.path

    n_steps = int(round(cfg.t_end / cfg.dt))
    if abs(n_steps * cfg.dt - cfg.t_end) > 1e-9 * max(cfg.t_end, cfg.dt):
        n_steps = int(np.ceil(cfg.t_end / cfg.dt - 1e-12))
    if cfg.max_steps:
        n_steps = min(n_steps, cfg.max_steps)

    reports: list = []
    series: dict = {"t": []}
    steady = False
    sv = cfg.solver

    if cfg.kind == "acoustics":
        rho, c = cfg.params["rho"], cfg.params["c"]
        log.info(
            "%s: %d steps, acoustic Courant %.3g", cfg.name, n_steps,
            c * cfg.dt / op.nodes.mesh.l0,
        )
        series["checkerboard_p"] = []
        if cfg.mode == "staggered":
            decay = edge_damping_factors(op, setup.damping_spec, cfg.dt)
        else:
            decay = node_damping_factors(op, setup.damping_spec, cfg.dt)
        for k in range(n_steps):
            if cfg.mode == "staggered":
                acoustics_step_staggered(op, state, rho, c, cfg.dt, decay)
            else:
                acoustics_step_collocated(op, state, rho, c, cfg.dt, decay)
            series["t"].append(state.t)
            series["checkerboard_p"].append(checkerboard_metric(op, state.p))
            if k % 500 == 0:
                _check_finite(state.p, state.t, cfg.name)
        _check_finite(state.p, state.t, cfg.name)
        if out_dir is not None:
            artifacts["metrics"] = write_series_csv(
                out_dir / "checkerboard.csv",
                {"t": series["t"], "checkerboard_p": series["checkerboard_p"]},
            )
        return RunResult(cfg, op, None, state, reports, series, False, artifacts)

    # incompressible flow
    params = FluidParams(rho=cfg.params["rho"], eta=cfg.params["eta"])
    u_ref = cfg.reference.get("u_ref", 1.0)
    l_ref = cfg.reference.get("length_ref", 1.0)
    do_drag = bool(cfg.reference.get("drag"))
    if do_drag:
        for key in ("cd_total", "cd_pressure", "cd_viscous"):
            series[key] = []
    steady_rate = cfg.steady_tol * u_ref / l_ref if cfg.steady_tol else None
    u_prev = state.u.copy() if steady_rate is not None else None

    log.info(
        "%s: %d steps, dt %.3g, diffusion number %.3g", cfg.name, n_steps,
        cfg.dt, params.eta * cfg.dt / (params.rho * op.nodes.mesh.l0 ** 2),
    )

    stepper = ns_step_staggered if cfg.mode == "staggered" else ns_step_collocated
    for k in range(n_steps):
        f = _forcing_accel(setup, state)
        if cfg.mode == "staggered":
            rep = stepper(
                op, setup.ps, state, params, cfg.dt, beta=cfg.beta,
                f_accel=f, apply_bc=setup.apply_bc,
                criterion=sv["criterion"], tol=sv["tol"],
                max_iter=sv.get("max_iter", 20000),
                precondition=sv.get("precondition", "none"),
            )
        else:
            rep = stepper(
                op, setup.ps, state, params, cfg.dt,
                f_accel=f, apply_bc=setup.apply_bc,
                criterion=sv["criterion"], tol=sv["tol"],
                max_iter=sv.get("max_iter", 20000),
                precondition=sv.get("precondition", "none"),
            )
        reports.append(rep)
        series["t"].append(state.t)
        if not np.isfinite(rep.max_speed):
            raise RuntimeError(
                f"{cfg.name} diverged (non-finite velocity at t = {state.t:g})"
            )
        if diag is not None:
            diag.write(state.step, rep)
        if do_drag:
            dr = _drag_report(setup, state, params, u_ref, l_ref)
            series["cd_total"].append(dr.total)
            series["cd_pressure"].append(
                dr.pressure if dr.pressure is not None else np.nan)
            series["cd_viscous"].append(
                dr.viscous if dr.viscous is not None else np.nan)
        if progress_every and (k + 1) % progress_every == 0:
            log.info(
                "%s: step %d/%d t=%.4g iters=%d res=%.3g", cfg.name, k + 1,
                n_steps, state.t, rep.solve.n_iter if rep.solve else 0,
                rep.residual_inf,
            )
        if steady_rate is not None:
            rate = float(
                np.linalg.norm(state.u - u_prev, axis=1).max()) / cfg.dt
            if rate < steady_rate:
                steady = True
                log.info("%s: steady at t = %.4g (step %d)", cfg.name,
                         state.t, state.step)
                break
            u_prev[:] = state.u
        if out_dir is not None and snap_every and (k + 1) % snap_every == 0:
            p = out_dir / f"snapshot_{state.step:06d}.{_ext(snap_fmt)}"
            write_snapshot(
                op, snapshot_fields(op, state.u, state.p_node, state.U),
                p, fmt=snap_fmt)
            artifacts[f"snapshot_{state.step}"] = p

    if diag is not None:
        diag.close()
    if out_dir is not None:
        p = out_dir / f"snapshot_final.{_ext(snap_fmt)}"
        write_snapshot(
            op, snapshot_fields(op, state.u, state.p_node, state.U),
            p, fmt=snap_fmt)
        artifacts["snapshot_final"] = p
        if do_drag:
            artifacts["drag"] = write_series_csv(
                out_dir / "drag.csv",
                {k: series[k] for k in
                 ("t", "cd_total", "cd_pressure", "cd_viscous")},
            )
    return RunResult(cfg, op, setup.ps, state, reports, series, steady,
                     artifacts)


def _ext(fmt: str) -> str:
    return "csv" if fmt == "csv" else "vtk"


def _drag_report(setup, state, params, u_ref, l_ref):
    if setup.probe is not None:
        return drag_coefficient(
            setup.probe, state.u, state.p_node, params, u_ref, l_ref)
    if setup.damping_alpha is not None:
        return damping_drag(
            setup.op, state.u, setup.damping_alpha, params, u_ref, l_ref)
    raise ValueError("drag requested but no obstacle is configured")


def taylor_green_error_norms(result: RunResult) -> dict:
    """Per-field error norms of a finished vortex-array run vs. the exact
    decaying solution.

    The computed pressure is only defined up to a constant on the doubly
    periodic domain (the solve pins its mean to zero), so both pressure
    fields are de-meaned before differencing.
    """
    from .benchmarks import error_norms

    cfg, op, state = result.config, result.op, result.state
    init = cfg.initial
    vel_e, p_e = taylor_green_exact(
        op.nodes.x, state.t, U=init.get("U", 1.0), L=init.get("L", 1.0),
        rho=cfg.params["rho"], eta=cfg.params["eta"],
    )
    p_num = state.p_node - state.p_node.mean()
    p_ex = p_e - p_e.mean()
    return {
        "u": error_norms(state.u[:, 0], vel_e[:, 0]),
        "v": error_norms(state.u[:, 1], vel_e[:, 1]),
        "p": error_norms(p_num, p_ex),
    }
