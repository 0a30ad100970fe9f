"""Incompressible Navier-Stokes stepping on the staggered arrangement.

One projection step advances (u^n, U^n) by

    u*    explicit upwind advection + viscous diffusion + body forcing,
    U*    transport-coupled re-seeding of the face values from u^n, u*,
    p     pressure Poisson solve   lap p = (rho/dt) * 4 div(U*),
    u,U   projection correction by the consistent discrete gradient.

The face update ("transport-energy coupling") blends the conserved face
value with re-interpolations of the one-sided nodal fits,

    U*(i,j) = beta [ U^n + (dUbar_i + dUbar_j)/2 ]
            + (1-beta) (Ubar*_i + Ubar*_j)/2,

with Ubar_k = 2 (x_ij - x_i) . u^h_k(x_ij) both projected about the same
reference x_i, so every term is antisymmetric under i<->j and the blend
is well defined per undirected edge.  beta = 0 falls back to pure
re-interpolation (the face memory is discarded each step); beta close to 1
keeps the faces as prognostic unknowns, which is what suppresses the
nodal checkerboard mode.

The collocated baseline solver reuses the nodal fits for every operator
(conservative advection div(u x u), Laplacian, pressure gradient) and is
deliberately ordinary: its pressure gradient cannot see the alternating
mode, which is the failure the staggered scheme is designed against.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import KIND_FLUID
from .linalg import SolveReport, SparseMatrix, attach_mean_constraint, \
    bicgstab, csr_from_coo, direct_preconditioner, solve_zero_mean
from .mls import interpolate_velocity, gather_node_samples
from .operators import (
    NodalField,
    Operators,
    PoissonSystem,
    StaggeredField,
    gather_directed,
    nodal_divergence,
    nodal_divgrad,
    nodal_gradient,
    nodal_laplacian,
    poisson_rhs,
    projection_correct,
    radial_targets,
    refresh_wall_faces,
    staggered_divergence,
    staggered_from_nodal,
    vector_radial_laplacian,
)


@dataclass(frozen=True)
class FluidParams:
    rho: float
    eta: float  # dynamic viscosity


@dataclass(frozen=True)
class FrameForcing:
    """Inertial forcing of a frame oscillating as x_frame = -A sin(2 pi f t).

    In the body-fixed frame the momentum equation gains -rho * xddot, i.e.
    the acceleration contribution -A (2 pi f)^2 sin(2 pi f t) along x.
    """

    amplitude: float
    frequency: float

    def frame_accel(self, t: float) -> np.ndarray:
        w = 2.0 * np.pi * self.frequency
        return np.array([self.amplitude * w * w * np.sin(w * t), 0.0])

    def forcing_accel(self, t: float) -> np.ndarray:
        return -self.frame_accel(t)


@dataclass
class FlowState:
    t: float
    step: int
    u: NodalField                   # (N, 2), boundary rows hold the BC values
    U: StaggeredField | None        # staggered faces (None for collocated)
    p_node: np.ndarray              # (N,) last pressure scattered to nodes
    p_dof: np.ndarray | None = None  # warm-start vector in DOF ordering


@dataclass
class StepReport:
    t: float
    dt: float
    max_div: float
    residual_inf: float
    identity_gap: float
    solve: SolveReport | None
    max_speed: float
    courant: float
    diffusion_number: float


def make_flow_state(op: Operators, u0: NodalField, staggered: bool = True) -> FlowState:
    """Initial state; faces are seeded from nodal means and wall data."""
    u = np.array(u0, dtype=float)
    U = None
    if staggered:
        U = staggered_from_nodal(op, u)
        refresh_wall_faces(op, U, u)
    return FlowState(t=0.0, step=0, u=u, U=U, p_node=np.zeros(op.n))


# ---------------------------------------------------------------------------
# staggered pieces

def upwind_advective_radial(
    op: Operators,
    U: StaggeredField,
    u: NodalField,
    uh_mid: np.ndarray | None = None,
) -> np.ndarray:
    """Directed advective samples A(i,k) = U(i,k) * u^h_donor(x_ik).

    The donor is the upwind node: the canonical endpoint when the stored
    face value is non-negative (flow leaves it), the opposite endpoint
    otherwise; both perspectives agree, so the samples stay antisymmetric.
    Non-fluid donors contribute their nodal (prescribed or copied) value.
    """
    if uh_mid is None:
        uh_mid = interpolate_velocity(op.nodal, u)
    uh_a = uh_mid[op.canon_rows, op.canon_cols]
    fl_a = op.fluid[op.canon_rows]
    uh_a = np.where(fl_a[:, None], uh_a, u[op.canon_rows])
    rev = op.st.rev[op.canon_rows, op.canon_cols]
    uh_b = uh_mid[op.edge_other, rev]
    fl_b = op.fluid[op.edge_other]
    uh_b = np.where(fl_b[:, None], uh_b, u[op.edge_other])

    Ue = U.values
    donor = np.where((Ue >= 0.0)[:, None], uh_a, uh_b)
    A_edge = Ue[:, None] * donor
    # directed gather of the antisymmetric per-edge vector
    sgn = op.st.edge_sign[..., None]
    return sgn * A_edge[op.edge_safe]


def predict_intermediate(
    op: Operators,
    U: StaggeredField,
    u: NodalField,
    params: FluidParams,
    dt: float,
    f_accel: np.ndarray | None = None,
    uh_mid: np.ndarray | None = None,
) -> NodalField:
    """Explicit momentum prediction on fluid nodes.

        u*_i = u^n_i + dt [ -(1/4) sum g A  + (eta/rho) div grad u^h_i
                            + f_i / rho ]

    The advective sum runs over the one-ring face samples A(i,k).  The
    viscous term takes the div grad u form literally: divergence of the
    fitted velocity gradient, two nodal-fit passes.  A one-pass
    difference fit on the ring alone is not usable here: it reverses the
    sign of the Laplacian on node-to-node alternating data, a mode no
    other part of the step sees, and feeds it at 8 eta / (rho l0^2).
    """
    A = upwind_advective_radial(op, U, u, uh_mid)
    adv = vector_radial_laplacian(op.plain.g, A)
    visc = nodal_divgrad(op.nodal, u)
    rhs = -adv + (params.eta / params.rho) * visc
    if f_accel is not None:
        rhs = rhs + f_accel
    u_star = u.copy()
    u_star[op.fluid] += dt * rhs[op.fluid]
    return u_star


def tec_update(
    op: Operators,
    U_n: StaggeredField,
    u_n: NodalField,
    u_star: NodalField,
    beta: float,
    uh_mid_n: np.ndarray | None = None,
    uh_mid_star: np.ndarray | None = None,
) -> StaggeredField:
    """Blend conserved face values with one-sided re-interpolations.

    Both one-sided radial projections use the canonical endpoint as
    reference; a non-fluid side (wall, inlet, outlet) enters through its
    nodal value, whose n->* increment is zero for fixed boundary data.
    Wall faces are subsequently overwritten with the boundary datum by the
    caller via refresh_wall_faces.
    """
    if uh_mid_n is None:
        uh_mid_n = interpolate_velocity(op.nodal, u_n)
    if uh_mid_star is None:
        uh_mid_star = interpolate_velocity(op.nodal, u_star)

    rows, cols = op.canon_rows, op.canon_cols
    rev = op.st.rev[rows, cols]
    other = op.edge_other
    fl_a = op.fluid[rows][:, None]
    fl_b = op.fluid[other][:, None]
    proj = 2.0 * op.edge_moff

    ua_n = np.where(fl_a, uh_mid_n[rows, cols], u_n[rows])
    ub_n = np.where(fl_b, uh_mid_n[other, rev], u_n[other])
    ua_s = np.where(fl_a, uh_mid_star[rows, cols], u_star[rows])
    ub_s = np.where(fl_b, uh_mid_star[other, rev], u_star[other])

    bar_a_n = (proj * ua_n).sum(axis=1)
    bar_b_n = (proj * ub_n).sum(axis=1)
    bar_a_s = (proj * ua_s).sum(axis=1)
    bar_b_s = (proj * ub_s).sum(axis=1)

    vals = beta * (
        U_n.values + 0.5 * (bar_a_s - bar_a_n + bar_b_s - bar_b_n)
    ) + (1.0 - beta) * 0.5 * (bar_a_s + bar_b_s)
    return StaggeredField(vals)


def ns_step_staggered(
    op: Operators,
    ps: PoissonSystem,
    state: FlowState,
    params: FluidParams,
    dt: float,
    beta: float = 0.99,
    f_accel: np.ndarray | None = None,
    apply_bc=None,
    criterion: str = "relative",
    tol: float = 1e-7,
    max_iter: int = 10000,
    precondition: str = "none",
) -> StepReport:
    """Advance one staggered projection step in place.

    ``apply_bc(u, t)`` refreshes boundary-node velocities (prescribed
    walls, outlet copies) and is called on the intermediate and the
    corrected field.  The returned report carries the divergence/residual
    identity gap, which is zero up to roundoff by construction.
    """
    u_n = state.u
    U_n = state.U
    t_new = state.t + dt

    uh_n = interpolate_velocity(op.nodal, u_n)
    u_star = predict_intermediate(op, U_n, u_n, params, dt, f_accel, uh_mid=uh_n)
    if apply_bc is not None:
        apply_bc(u_star, t_new)
    uh_s = interpolate_velocity(op.nodal, u_star)

    U_star = tec_update(op, U_n, u_n, u_star, beta, uh_mid_n=uh_n, uh_mid_star=uh_s)
    refresh_wall_faces(op, U_star, u_star)

    targets_star = radial_targets(op, U_star, u_star)
    b = poisson_rhs(op, ps, targets_star, dt, params.rho)
    p, rep = ps.solve(
        b, x0=state.p_dof, criterion=criterion, tol=tol,
        max_iter=max_iter, precondition=precondition,
    )
    U_new, u_new, p_node = projection_correct(
        op, ps, U_star, u_star, p, dt, params.rho
    )
    if apply_bc is not None:
        apply_bc(u_new, t_new)
        refresh_wall_faces(op, U_new, u_new)

    res = ps.residual(p, b)
    fluid_dofs = op.fluid[ps.node_of_dof]
    res_inf = float(np.abs(res[fluid_dofs]).max()) if fluid_dofs.any() else 0.0
    div_new = staggered_divergence(op, radial_targets(op, U_new, u_new))
    max_div = float(np.abs(div_new[op.fluid]).max())
    identity_gap = max_div - dt / (4.0 * params.rho) * res_inf

    state.u = u_new
    state.U = U_new
    state.p_node = p_node
    state.p_dof = p
    state.t = t_new
    state.step += 1

    speed = np.linalg.norm(u_new, axis=1)
    max_speed = float(speed.max())
    l0 = op.nodes.mesh.l0
    return StepReport(
        t=t_new,
        dt=dt,
        max_div=max_div,
        residual_inf=res_inf,
        identity_gap=identity_gap,
        solve=rep,
        max_speed=max_speed,
        courant=max_speed * dt / l0,
        diffusion_number=params.eta * dt / (params.rho * l0 * l0),
    )


# ---------------------------------------------------------------------------
# collocated baseline

@dataclass
class CollocatedPoisson:
    """Nodal-Laplacian pressure system with wall columns folded diagonal."""

    matrix: SparseMatrix
    dof_of_node: np.ndarray
    node_of_dof: np.ndarray
    zero_mean: bool
    bordered: SparseMatrix | None
    factor: object = None          # cached LU for precondition="direct"

    @property
    def ndof(self) -> int:
        return self.node_of_dof.shape[0]

    def resolve_precondition(self, precondition):
        if precondition == "direct":
            if self.factor is None:
                target = self.bordered if self.zero_mean else self.matrix
                self.factor = direct_preconditioner(target)
            return self.factor
        return precondition

    def solve(self, b, x0=None, criterion="relative", tol=1e-7,
              max_iter=10000, precondition="none"):
        precondition = self.resolve_precondition(precondition)
        if self.zero_mean:
            x, _, rep = solve_zero_mean(
                self.matrix, b, x0, criterion=criterion, tol=tol,
                max_iter=max_iter, precondition=precondition,
                bordered=self.bordered,
            )
            return x, rep
        return bicgstab(self.matrix, b, x0, criterion=criterion, tol=tol,
                        max_iter=max_iter, precondition=precondition)


def assemble_poisson_collocated(
    op: Operators,
    p_dirichlet: np.ndarray | None = None,
    zero_mean: bool | None = None,
) -> CollocatedPoisson:
    """Nodal MLS Laplacian rows over fluid DOFs.

    Prescribed-velocity neighbors realize homogeneous Neumann data at
    first order by folding their column into the row's diagonal
    (p_wall := p_i); pressure-Dirichlet nodes stay DOFs with identity
    rows.  Constants remain in the nullspace, so closed domains use the
    same zero-mean treatment as the staggered system.
    """
    n = op.n
    if p_dirichlet is None:
        p_dirichlet = np.zeros(n, dtype=bool)
    is_dof = op.fluid | p_dirichlet
    dof_of_node = np.full(n, -1, dtype=np.int32)
    node_of_dof = np.flatnonzero(is_dof)
    dof_of_node[node_of_dof] = np.arange(node_of_dof.size, dtype=np.int32)
    ndof = node_of_dof.size

    has_dir = p_dirichlet.any()
    if zero_mean is None:
        zero_mean = not has_dir
    if not zero_mean and not has_dir:
        raise ValueError("all-Neumann collocated system needs zero_mean")

    nw = op.nodal
    fluid_rows = np.flatnonzero(op.fluid)
    g = nw.g[fluid_rows]                      # (F, K+1)
    ii = dof_of_node[fluid_rows]
    rows, cols, vals = [], [], []
    # center sample
    rows.append(ii)
    cols.append(ii)
    vals.append(g[:, 0])
    nbrs = nw.nbr[fluid_rows]
    valid = nw.valid[fluid_rows]
    fold = valid & op.dirichlet[nbrs]
    keep = valid & ~fold
    jj = dof_of_node[nbrs]
    if (keep & (jj < 0)).any():
        raise AssertionError("disc sample at a node with neither pressure "
                             "nor prescribed velocity")
    iiK = np.repeat(ii, nbrs.shape[1]).reshape(nbrs.shape)
    rows.append(iiK[keep])
    cols.append(jj[keep])
    vals.append(g[:, 1:][keep])
    rows.append(iiK[fold])
    cols.append(iiK[fold])
    vals.append(g[:, 1:][fold])

    if has_dir:
        diag_mag = np.abs(g[:, 0])
        scale = np.median(diag_mag) or 1.0
        drows = dof_of_node[np.flatnonzero(p_dirichlet)]
        rows.append(drows)
        cols.append(drows)
        vals.append(np.full(drows.size, scale))

    A = csr_from_coo(
        ndof, ndof,
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
    )
    return CollocatedPoisson(
        matrix=A,
        dof_of_node=dof_of_node,
        node_of_dof=node_of_dof,
        zero_mean=zero_mean,
        bordered=attach_mean_constraint(A) if zero_mean else None,
    )


def _folded_pressure_samples(op: Operators, p_node: np.ndarray) -> np.ndarray:
    """(N, K+1) pressure samples with Dirichlet-velocity neighbors folded."""
    nw = op.nodal
    samples = gather_node_samples(nw, p_node)
    fold = nw.valid & op.dirichlet[nw.nbr]
    samples[:, 1:] = np.where(fold, p_node[:, None], samples[:, 1:])
    return samples


def ns_step_collocated(
    op: Operators,
    ps: CollocatedPoisson,
    state: FlowState,
    params: FluidParams,
    dt: float,
    f_accel: np.ndarray | None = None,
    apply_bc=None,
    criterion: str = "relative",
    tol: float = 1e-7,
    max_iter: int = 10000,
    precondition: str = "none",
) -> StepReport:
    """One projection step of the conventional collocated baseline."""
    u_n = state.u
    t_new = state.t + dt

    u_samp = gather_node_samples(op.nodal, u_n)
    flux = np.einsum("nsc,nsc->ns", op.nodal.d, u_samp)
    adv = np.einsum("ns,nsc->nc", flux, u_samp)
    visc = nodal_divgrad(op.nodal, u_n)
    rhs = -adv + (params.eta / params.rho) * visc
    if f_accel is not None:
        rhs = rhs + f_accel
    u_star = u_n.copy()
    u_star[op.fluid] += dt * rhs[op.fluid]
    if apply_bc is not None:
        apply_bc(u_star, t_new)

    us_samp = gather_node_samples(op.nodal, u_star)
    div_star = nodal_divergence(op.nodal, us_samp)
    b = np.zeros(ps.ndof)
    mask = op.fluid[ps.node_of_dof]
    b[mask] = (params.rho / dt) * div_star[ps.node_of_dof[mask]]
    p, rep = ps.solve(b, x0=state.p_dof, criterion=criterion, tol=tol,
                      max_iter=max_iter, precondition=precondition)
    p_node = np.zeros(op.n)
    p_node[ps.node_of_dof] = p

    grad = nodal_gradient(op.nodal, _folded_pressure_samples(op, p_node))
    u_new = u_star.copy()
    u_new[op.fluid] -= (dt / params.rho) * grad[op.fluid]
    if apply_bc is not None:
        apply_bc(u_new, t_new)

    res = b - ps.matrix @ p
    fluid_dofs = op.fluid[ps.node_of_dof]
    res_inf = float(np.abs(res[fluid_dofs]).max()) if fluid_dofs.any() else 0.0
    un_samp = gather_node_samples(op.nodal, u_new)
    div_new = nodal_divergence(op.nodal, un_samp)
    max_div = float(np.abs(div_new[op.fluid]).max())

    state.u = u_new
    state.U = None
    state.p_node = p_node
    state.p_dof = p
    state.t = t_new
    state.step += 1

    speed = np.linalg.norm(u_new, axis=1)
    max_speed = float(speed.max())
    l0 = op.nodes.mesh.l0
    return StepReport(
        t=t_new, dt=dt, max_div=max_div, residual_inf=res_inf,
        identity_gap=np.nan, solve=rep, max_speed=max_speed,
        courant=max_speed * dt / l0,
        diffusion_number=params.eta * dt / (params.rho * l0 * l0),
    )


# ---------------------------------------------------------------------------
# drag extraction

@dataclass
class DragReport:
    total: float      # x-force coefficient
    pressure: float | None
    viscous: float | None
    force: np.ndarray  # raw (Fx, Fy)


@dataclass
class SurfaceProbe:
    """Precomputed extrapolation weights on a fitted obstacle surface."""

    node_ids: np.ndarray            # surface boundary nodes
    normals: np.ndarray             # (M, 2) outward from the body
    ds: float                       # arc length share per node
    p_samples: list                 # per node: fluid sample ids
    p_weights: list                 # per node: value-extrapolation weights
    gu_samples: list                # per node: sample ids (fluid + boundary)
    gu_weights: list                # per node: (2, S) gradient weights at node


def build_surface_probe(
    op: Operators, tag: str, radius: float
) -> SurfaceProbe:
    """LS extrapolation stencils for surface pressure and velocity gradient.

    Pressure uses a linear fit over the fluid neighbors of each surface
    node (pressure is unknown on the surface itself); the velocity
    gradient uses a quadratic fit over all active neighbors plus the node,
    falling back to linear when fewer than 6 samples are available.
    """
    nodes, st = op.nodes, op.st
    ids = nodes.ids_of_tag(tag)
    if ids.size == 0:
        raise ValueError(f"no nodes tagged {tag!r}")
    l0 = nodes.mesh.l0
    p_samples, p_weights, gu_samples, gu_weights = [], [], [], []
    for i in ids:
        ks = np.flatnonzero(st.valid[i])
        cand = st.nbr[i, ks]
        offs = 2.0 * st.moff[i, ks]
        is_fluid = op.fluid[cand]
        fl = cand[is_fluid]
        fo = offs[is_fluid]
        if fl.size < 3:
            raise ValueError(f"surface node {i} has {fl.size} fluid neighbors")
        # linear pressure extrapolation to the surface point; pinv keeps
        # degenerate neighbor sets (3 collinear fluid nodes happen where
        # the circle grazes the lattice) at the minimum-norm fit
        A = np.column_stack([np.ones(fl.size), fo / l0])
        w = np.exp(-0.5 * (np.linalg.norm(fo, axis=1) / l0) ** 2)
        sw = np.sqrt(w)
        coef_map = np.linalg.pinv(A * sw[:, None], rcond=1e-8) * sw[None, :]
        p_samples.append(fl)
        p_weights.append(coef_map[0])

        # velocity gradient: quadratic over everything incl. the node
        offs_all = np.vstack([[0.0, 0.0], offs])
        samp_all = np.concatenate([[i], cand])
        if samp_all.size >= 6:
            xi, eta = offs_all[:, 0] / l0, offs_all[:, 1] / l0
            A2 = np.column_stack(
                [np.ones_like(xi), xi, eta, xi * xi, xi * eta, eta * eta]
            )
        else:
            xi, eta = offs_all[:, 0] / l0, offs_all[:, 1] / l0
            A2 = np.column_stack([np.ones_like(xi), xi, eta])
        w2 = np.exp(-0.5 * (np.linalg.norm(offs_all, axis=1) / l0) ** 2)
        sw2 = np.sqrt(w2)
        cm2 = np.linalg.pinv(A2 * sw2[:, None], rcond=1e-8) * sw2[None, :]
        gu_samples.append(samp_all)
        gu_weights.append(cm2[1:3] / l0)   # d/dx, d/dy rows at the node

    return SurfaceProbe(
        node_ids=ids,
        normals=nodes.normal[ids].copy(),
        ds=2.0 * np.pi * radius / ids.size,
        p_samples=p_samples,
        p_weights=p_weights,
        gu_samples=gu_samples,
        gu_weights=gu_weights,
    )


def drag_coefficient(
    probe: SurfaceProbe,
    u: NodalField,
    p_node: np.ndarray,
    params: FluidParams,
    u_ref: float,
    length_ref: float,
) -> DragReport:
    """Surface-integrated force on a fitted obstacle, split into parts.

    F = sum over surface nodes of (-p n + tau . n) ds with
    tau = eta (grad u + grad u^T); coefficients normalize by
    (rho u_ref^2 / 2) length_ref.
    """
    Fp = np.zeros(2)
    Fv = np.zeros(2)
    for m, i in enumerate(probe.node_ids):
        n_vec = probe.normals[m]
        p_s = float(probe.p_weights[m] @ p_node[probe.p_samples[m]])
        grad = probe.gu_weights[m] @ u[probe.gu_samples[m]]  # (2, 2) d_a u_c
        tau = params.eta * (grad + grad.T)
        Fp += -p_s * n_vec * probe.ds
        Fv += (tau.T @ n_vec) * probe.ds
    F = Fp + Fv
    norm = 0.5 * params.rho * u_ref * u_ref * length_ref
    return DragReport(
        total=float(F[0] / norm),
        pressure=float(Fp[0] / norm),
        viscous=float(Fv[0] / norm),
        force=F,
    )


def damping_drag(
    op: Operators,
    u: NodalField,
    alpha: np.ndarray,
    params: FluidParams,
    u_ref: float,
    length_ref: float,
) -> DragReport:
    """Volume-force drag of a damping obstacle: F = sum rho alpha u dA."""
    dA = op.nodes.mesh.l0 ** 2
    F = params.rho * dA * (alpha[:, None] * u).sum(axis=0)
    norm = 0.5 * params.rho * u_ref * u_ref * length_ref
    return DragReport(
        total=float(F[0] / norm), pressure=None, viscous=None, force=F
    )
