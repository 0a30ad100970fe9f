"""Consistent discrete operators on the staggered node/face arrangement.

A staggered unknown is one scalar per undirected edge of the stencil
graph, stored in the orientation of the lower-numbered endpoint;
U(i,j) = -U(j,i) is realized by a sign gather.  Applying a node's cached
radial-fit weights to its 8 directed face targets yields

    divergence  div u|_i  = (1/4) sum_k g_ik t_ik
    velocity    u_i       = (1/2) sum_k d_ik t_ik
    laplacian   lap F|_i  =       sum_k g_ik F(x_ik)   (value targets)

where targets t are staggered values on interior faces and 2*q_j on faces
into prescribed-normal-velocity boundary nodes.

The pressure Poisson matrix reuses exactly the divergence weights: row i
is sum over *interior* faces of g_ik (p_j - p_i); faces into
Dirichlet-velocity nodes drop out (their staggered value is prescribed
and never corrected).  Because the projection subtracts
(dt/rho) (p_j - p_i) on exactly the faces present in the row, the
post-correction divergence at node i equals (dt/(4 rho)) times the
Poisson residual at i -- identically, independent of how converged the
solver is.  That identity is the design invariant of this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import KIND_BOUNDARY, KIND_FLUID, NodeSet, StencilTable
from .linalg import (
    SolveReport,
    SparseMatrix,
    attach_mean_constraint,
    bicgstab,
    csr_from_coo,
    direct_preconditioner,
    solve_zero_mean,
)
from .mls import (
    PGRAD_RADIUS_FACTOR,
    BasisSpec,
    BoundaryAugmentation,
    DerivativeWeights,
    NodalWeights,
    WeightSpec,
    fit_nodal_mls,
    fit_radial_mls,
    gather_node_samples,
)

# A nodal field is a plain (N,) or (N, 2) array indexed by node id.
NodalField = np.ndarray


@dataclass
class StaggeredField:
    """One scalar per undirected edge, stored at the canonical orientation."""

    values: np.ndarray  # (n_edges,)

    def copy(self) -> "StaggeredField":
        return StaggeredField(self.values.copy())


@dataclass
class Operators:
    """Per-arrangement bundle of stencils and cached fit weights.

    ``plain`` fits every face as a value row (used by the advective and
    viscous sums, whose boundary-face samples are well defined).  ``aug``
    turns faces into Dirichlet-velocity nodes into normal-derivative rows
    (used by divergence, Poisson assembly and the projection).  On
    arrangements without such nodes the two coincide.
    """

    nodes: NodeSet
    st: StencilTable
    plain: DerivativeWeights
    aug: DerivativeWeights
    nodal: NodalWeights | None
    fluid: np.ndarray          # (N,) bool
    dirichlet: np.ndarray      # (N,) bool prescribed-velocity boundary nodes
    is_dir_face: np.ndarray    # (N, 8)
    is_int_face: np.ndarray    # (N, 8) valid & ~dirichlet
    # gather/scatter helpers
    nbr_safe: np.ndarray       # (N, 8) nbr with -1 -> 0
    edge_safe: np.ndarray      # (N, 8) edge_id with -1 -> 0
    canon_rows: np.ndarray     # (n_edges,) canonical endpoint node
    canon_cols: np.ndarray     # (n_edges,) its slot index
    edge_other: np.ndarray     # (n_edges,) opposite endpoint
    edge_moff: np.ndarray      # (n_edges, 2) x_ij - x_canon
    edge_interior: np.ndarray  # (n_edges,) both endpoints unconstrained
    edge_wall: np.ndarray      # (n_edges,) exactly one Dirichlet endpoint
    edge_wall_node: np.ndarray  # (n_edges,) the Dirichlet endpoint (-1 if none)

    @property
    def n(self) -> int:
        return self.nodes.n

    @property
    def n_edges(self) -> int:
        return self.st.n_edges


def build_operators(
    nodes: NodeSet,
    st: StencilTable,
    dirichlet: np.ndarray | None = None,
    basis: BasisSpec | None = None,
    weight: WeightSpec | None = None,
    build_nodal: bool = True,
) -> Operators:
    """Fit all cached weights for one node arrangement.

    ``dirichlet`` marks prescribed-velocity boundary nodes; by default all
    boundary-kind nodes.  Pass a mask excluding e.g. outlet columns, whose
    faces stay interior (their pressure is what the outlet condition pins).
    """
    if dirichlet is None:
        dirichlet = nodes.kind == KIND_BOUNDARY
    fluid = nodes.kind == KIND_FLUID

    plain = fit_radial_mls(nodes, st, basis, weight, augment=None)
    if dirichlet.any():
        aug = fit_radial_mls(
            nodes, st, basis, weight, augment=BoundaryAugmentation(dirichlet)
        )
    else:
        aug = plain
    # nodal fits take their own (wider) influence radius unless overridden
    nodal = fit_nodal_mls(nodes, st, basis=basis) if build_nodal else None

    valid = st.valid
    nbr_safe = np.where(valid, st.nbr, 0)
    is_dir_face = valid & dirichlet[nbr_safe]
    is_int_face = valid & ~is_dir_face
    edge_safe = np.where(st.edge_id >= 0, st.edge_id, 0)

    rows, cols = np.nonzero(st.edge_sign > 0)
    order = np.argsort(st.edge_id[rows, cols])
    canon_rows = rows[order].astype(np.int32)
    canon_cols = cols[order].astype(np.int32)
    edge_other = st.nbr[canon_rows, canon_cols]
    edge_moff = st.moff[canon_rows, canon_cols]
    a_dir = dirichlet[canon_rows]
    b_dir = dirichlet[edge_other]
    edge_interior = ~a_dir & ~b_dir
    edge_wall = a_dir ^ b_dir
    edge_wall_node = np.where(
        edge_wall, np.where(a_dir, canon_rows, edge_other), -1
    ).astype(np.int32)

    return Operators(
        nodes=nodes,
        st=st,
        plain=plain,
        aug=aug,
        nodal=nodal,
        fluid=fluid,
        dirichlet=dirichlet,
        is_dir_face=is_dir_face,
        is_int_face=is_int_face,
        nbr_safe=nbr_safe,
        edge_safe=edge_safe,
        canon_rows=canon_rows,
        canon_cols=canon_cols,
        edge_other=edge_other,
        edge_moff=edge_moff,
        edge_interior=edge_interior,
        edge_wall=edge_wall,
        edge_wall_node=edge_wall_node,
    )


# ---------------------------------------------------------------------------
# staggered field plumbing

def gather_directed(op: Operators, edge_values: np.ndarray) -> np.ndarray:
    """(N, 8) directed view U(i, k) = sign * stored; padded slots are 0."""
    return op.st.edge_sign * edge_values[op.edge_safe]

def scatter_canonical(op: Operators, directed: np.ndarray) -> np.ndarray:
    """(n_edges,) stored values from a (N, 8) directed array (canonical slots)."""
    return directed[op.canon_rows, op.canon_cols]


def normal_velocity(op: Operators, u: NodalField) -> np.ndarray:
    """q_j = n_j . u_j per node (zero off the boundary)."""
    return (op.nodes.normal * u).sum(axis=1)


def radial_targets(
    op: Operators, U: StaggeredField, u: NodalField
) -> np.ndarray:
    """Directed fit targets for the augmented fit.

    Stored values U(i,k) everywhere except the normal-derivative slots of
    the fit, which take 2 q_j.  Oblique faces into Dirichlet nodes are
    value rows whose stored datum the caller maintains through
    refresh_wall_faces.
    """
    t = gather_directed(op, U.values)
    bc = op.aug.is_bc
    if bc.any():
        q = normal_velocity(op, u)
        t = np.where(bc, 2.0 * q[op.nbr_safe], t)
    return t


def staggered_from_nodal(op: Operators, u: NodalField) -> StaggeredField:
    """Seed U(i,j) = 2 (x_ij - x_i) . (u_i + u_j)/2 on every edge."""
    u_mid = 0.5 * (u[op.canon_rows] + u[op.edge_other])
    vals = 2.0 * (op.edge_moff * u_mid).sum(axis=1)
    return StaggeredField(vals)


def refresh_wall_faces(op: Operators, U: StaggeredField, u: NodalField) -> None:
    """Prescribe U on faces with one Dirichlet endpoint from that node's velocity."""
    w = op.edge_wall
    if not w.any():
        return
    u_b = u[op.edge_wall_node[w]]
    U.values[w] = 2.0 * (op.edge_moff[w] * u_b).sum(axis=1)


# ---------------------------------------------------------------------------
# staggered operators

def staggered_value(op: Operators, targets: np.ndarray) -> np.ndarray:
    """Fitted value at x_i from directed face targets (consistency checks)."""
    return np.einsum("nk,nk->n", op.aug.v, targets)


def staggered_divergence(op: Operators, targets: np.ndarray) -> np.ndarray:
    """div u|_i = (1/4) lap U^h_i."""
    return 0.25 * np.einsum("nk,nk->n", op.aug.g, targets)


def staggered_to_nodal_velocity(op: Operators, targets: np.ndarray) -> np.ndarray:
    """u_i = (1/2) grad U^h_i, the velocity consistent with the face data."""
    return 0.5 * np.einsum("nkc,nk->nc", op.aug.d, targets)


def vector_radial_laplacian(
    weights_g: np.ndarray, samples: np.ndarray
) -> np.ndarray:
    """(1/4) sum_k g_ik sample_ik, componentwise over (N, 8, 2) samples."""
    return 0.25 * np.einsum("nk,nkc->nc", weights_g, samples)


# ---------------------------------------------------------------------------
# nodal (collocated) operators

def nodal_gradient(nw: NodalWeights, samples: np.ndarray) -> np.ndarray:
    """(N, 2) gradient of a scalar from (N, 9) node samples."""
    return np.einsum("nsc,ns->nc", nw.d, samples)


def nodal_divergence(nw: NodalWeights, samples: np.ndarray) -> np.ndarray:
    """(N,) divergence of a vector from (N, 9, 2) node samples."""
    return np.einsum("nsc,nsc->n", nw.d, samples)


def nodal_laplacian(nw: NodalWeights, samples: np.ndarray) -> np.ndarray:
    """Laplacian from node samples; vector fields componentwise."""
    if samples.ndim == 3:
        return np.einsum("ns,nsc->nc", nw.g, samples)
    return np.einsum("ns,ns->n", nw.g, samples)


def nodal_divgrad(nw: NodalWeights, u: np.ndarray) -> np.ndarray:
    """div(grad u) componentwise, two passes of the fitted derivatives.

    The single-fit Laplacian functional of a compact quadratic fit has a
    wrong-sign response on axis-alternating node data (the disc sees a
    bowl); composing divergence with gradient keeps the symbol
    non-positive across the spectrum, at worst zero on modes the fit
    cannot see.
    """
    J = np.einsum("nsc,nsd->ndc", nw.d, gather_node_samples(nw, u))
    out = np.empty_like(u)
    out[:, 0] = nodal_divergence(nw, gather_node_samples(nw, J[:, 0, :]))
    out[:, 1] = nodal_divergence(nw, gather_node_samples(nw, J[:, 1, :]))
    return out


# ---------------------------------------------------------------------------
# pressure Poisson system

@dataclass
class PoissonSystem:
    """Assembled pressure system over fluid (+ pressure-Dirichlet) DOFs."""

    matrix: SparseMatrix
    dof_of_node: np.ndarray       # (N,) int32, -1 for non-DOF nodes
    node_of_dof: np.ndarray       # (ndof,)
    zero_mean: bool
    bordered: SparseMatrix | None
    n_fluid_rows: int
    pgrad: NodalWeights | None = None     # gradient fit over DOF nodes only
    null_basis: np.ndarray | None = None   # extra exact null vectors, (ndof, k)
    factor: object = None          # cached LU for precondition="direct"

    @property
    def ndof(self) -> int:
        return self.node_of_dof.shape[0]

    def resolve_precondition(self, precondition):
        """Map "direct" onto a cached LU of the solved system."""
        if precondition == "direct":
            if self.factor is None:
                target = self.bordered if self.zero_mean else self.matrix
                self.factor = direct_preconditioner(target)
            return self.factor
        return precondition

    def solve(
        self,
        b: np.ndarray,
        x0: np.ndarray | None = None,
        criterion: str = "relative",
        tol: float = 1e-7,
        max_iter: int = 10000,
        precondition="none",
    ) -> tuple[np.ndarray, SolveReport]:
        precondition = self.resolve_precondition(precondition)
        if self.zero_mean:
            x, _, rep = solve_zero_mean(
                self.matrix, b, x0, criterion=criterion, tol=tol,
                max_iter=max_iter, precondition=precondition,
                bordered=self.bordered,
            )
            return x, rep
        return bicgstab(
            self.matrix, b, x0, criterion=criterion, tol=tol,
            max_iter=max_iter, precondition=precondition,
        )

    def residual(self, p: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Plain residual b - A p of the pressure block (identity bookkeeping)."""
        return b - self.matrix @ p


def _extra_null_vectors(
    op: Operators, A: SparseMatrix, node_of_dof: np.ndarray
) -> np.ndarray | None:
    """Extra exact null vectors of the assembled pressure operator.

    On the exactly uniform doubly periodic arrangement the face-midpoint
    Laplacian weights collapse to -4/h^2 on axis faces and +4/h^2 on
    diagonal faces for any weight function: the even part of the
    quadratic fit interpolates its four antipodal sample pairs.  The
    symbol 4 cos(a) cos(b) - 2 cos(a) - 2 cos(b) of that stencil
    vanishes at a = b = +/- pi/2, so lattice modes of period four along
    both axes annihilate the matrix whenever nx and ny are multiples of
    four.  They get Lagrange multipliers exactly like the constant mode.
    Candidates are verified against A before use; any perturbation of
    the arrangement (or an obstacle) breaks the identity and they are
    dropped.
    """
    mesh = op.nodes.mesh
    if not (mesh.periodic_x and mesh.periodic_y):
        return None
    if mesh.nx % 4 or mesh.ny % 4:
        return None
    ix, iy = mesh.cell_of(node_of_dof)
    scale = np.abs(A.data).max() if A.nnz else 1.0
    keep = []
    for s in (ix + iy, ix - iy):
        for z in (np.cos(0.5 * np.pi * s), np.sin(0.5 * np.pi * s)):
            if np.abs(z).max() == 0.0:
                continue
            if np.abs(A @ z).max() <= 1e-10 * scale * np.abs(z).max():
                keep.append(z)
    if not keep:
        return None
    return np.column_stack(keep)


def assemble_poisson(
    op: Operators,
    p_dirichlet: np.ndarray | None = None,
    zero_mean: bool | None = None,
) -> PoissonSystem:
    """Assemble row_i = sum over interior faces of g_ik (p_j - p_i).

    ``p_dirichlet`` marks nodes with prescribed pressure (outlets); they
    become DOFs with scaled identity rows and rhs 0.  Rows use the
    augmented fit's Laplacian weights, so the matrix times a pressure
    vector equals 4/dt * rho times the divergence change the subsequent
    correction will produce -- the residual identity depends on this.

    With no pressure-Dirichlet rows the system has the constant nullspace
    and must be solved with the zero-mean constraint; requesting otherwise
    is a configuration error.  Any further exact null vectors (the uniform
    doubly periodic arrangement has four, see _extra_null_vectors) are
    detected here and bordered alongside the mean constraint.
    """
    n = op.n
    if p_dirichlet is None:
        p_dirichlet = np.zeros(n, dtype=bool)
    is_dof = op.fluid | p_dirichlet
    if (op.fluid & p_dirichlet).any():
        raise ValueError("a node cannot be both fluid and pressure-Dirichlet")
    dof_of_node = np.full(n, -1, dtype=np.int32)
    node_of_dof = np.flatnonzero(is_dof)
    dof_of_node[node_of_dof] = np.arange(node_of_dof.size, dtype=np.int32)
    ndof = node_of_dof.size

    has_dirichlet_rows = p_dirichlet.any()
    if zero_mean is None:
        zero_mean = not has_dirichlet_rows
    if not zero_mean and not has_dirichlet_rows:
        raise ValueError(
            "all-Neumann pressure system is singular without the zero-mean "
            "constraint"
        )

    fluid_rows = np.flatnonzero(op.fluid)
    rows_list, cols_list, vals_list = [], [], []
    face = op.is_int_face[fluid_rows]
    g = op.aug.g[fluid_rows]
    nbrs = op.nbr_safe[fluid_rows]
    ii = np.repeat(dof_of_node[fluid_rows], 8).reshape(-1, 8)
    jj = dof_of_node[nbrs]
    sel = face & (jj >= 0)
    if (face & (jj < 0)).any():
        raise AssertionError("interior face into a non-DOF node")
    rows_list.append(ii[sel])
    cols_list.append(jj[sel])
    vals_list.append(g[sel])
    # diagonal: -sum of kept off-diagonal weights
    diag = -(g * sel).sum(axis=1)
    rows_list.append(dof_of_node[fluid_rows])
    cols_list.append(dof_of_node[fluid_rows])
    vals_list.append(diag)

    if has_dirichlet_rows:
        # identity scale must track the off-diagonal row magnitude: the
        # uniform stencil's diagonal cancels to zero, and rows scaled by
        # that would leave the prescribed pressures numerically loose
        row_mag = np.maximum(np.abs(g * sel).max(axis=1), np.abs(diag))
        scale = float(np.median(row_mag)) or 1.0
        drows = dof_of_node[np.flatnonzero(p_dirichlet)]
        rows_list.append(drows)
        cols_list.append(drows)
        vals_list.append(np.full(drows.size, scale))

    A = csr_from_coo(
        ndof,
        ndof,
        np.concatenate(rows_list),
        np.concatenate(cols_list),
        np.concatenate(vals_list),
    )
    null_basis = None
    bordered = None
    if zero_mean:
        null_basis = _extra_null_vectors(op, A, node_of_dof)
        bordered = attach_mean_constraint(A, null_basis)
    # the projection's nodal pressure gradient samples only nodes that
    # carry a pressure value, over its own (widest) influence radius
    pg_weight = WeightSpec(r_e=PGRAD_RADIUS_FACTOR * op.nodes.mesh.l0)
    pgrad = fit_nodal_mls(
        op.nodes, op.st, weight=pg_weight, subset=is_dof, build_interp=False
    )
    return PoissonSystem(
        matrix=A,
        dof_of_node=dof_of_node,
        node_of_dof=node_of_dof,
        zero_mean=zero_mean,
        bordered=bordered,
        n_fluid_rows=int(op.fluid.sum()),
        pgrad=pgrad,
        null_basis=null_basis,
    )


def poisson_rhs(
    op: Operators, ps: PoissonSystem, targets_star: np.ndarray,
    dt: float, rho: float,
) -> np.ndarray:
    """b_i = (rho/dt) * 4 * div(u*)|_i on fluid rows, 0 on Dirichlet rows."""
    div_star = staggered_divergence(op, targets_star)
    b = np.zeros(ps.ndof)
    mask = op.fluid[ps.node_of_dof]
    b[mask] = (4.0 * rho / dt) * div_star[ps.node_of_dof[mask]]
    return b


def projection_correct(
    op: Operators,
    ps: PoissonSystem,
    U_star: StaggeredField,
    u_star: NodalField,
    p: np.ndarray,
    dt: float,
    rho: float,
) -> tuple[StaggeredField, NodalField, np.ndarray]:
    """Subtract the discrete pressure gradient from faces and nodes.

        U(i,j) <- U*(i,j) - (dt/rho) (p_j - p_i)        interior faces
        u_i    <- u*_i   - (dt/rho) grad p^h(x_i)

    The face update is what the divergence/residual identity rests on and
    uses the exact differences the Poisson row was assembled from.  The
    nodal gradient comes from the collocated fit over pressure-carrying
    nodes (ps.pgrad): nodes without a pressure value contribute no sample,
    so walls neither anchor nor pollute the correction.  Faces into
    Dirichlet-velocity nodes are untouched (their value is the boundary
    datum); boundary-node velocities are the case's business and are not
    modified here.  Returns (U_new, u_new, p_node) with p scattered to
    node indexing (non-DOF slots 0).
    """
    p_node = np.zeros(op.n)
    p_node[ps.node_of_dof] = p

    dp_edge = np.where(
        op.edge_interior,
        p_node[op.edge_other] - p_node[op.canon_rows],
        0.0,
    )
    U_new = StaggeredField(U_star.values - (dt / rho) * dp_edge)

    corr = nodal_gradient(ps.pgrad, gather_node_samples(ps.pgrad, p_node))
    u_new = u_star.copy()
    u_new[op.fluid] -= (dt / rho) * corr[op.fluid]
    return U_new, u_new, p_node
