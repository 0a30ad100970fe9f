"""Moving-least-squares reconstruction of radial components and nodal fields.

The staggered discretization stores, per virtual face midpoint x_ij, the
radial component of the velocity about node i,

    U_{i->ij} = 2 (x_ij - x_i) . u(x_ij),

a scalar whose polynomial fit U^h recovers consistent nodal operators:
for linear u the identities grad U^h(x_i) = 2 u(x_i) and
lap U^h(x_i) = 4 div u(x_i) are exact.  Each node therefore carries a
weighted least-squares fit of a 6-term quadratic basis (scaled monomials
1, xi, eta, xi^2, xi*eta, eta^2 with xi = (x - x_i)/h_s) over its face
midpoint samples, and the value/gradient/Laplacian functionals collapse
into per-face weight vectors that are cached once per arrangement.

Near prescribed-velocity boundaries the fit switches to an extended
objective: every sample row is weighted at the neighbor node position
w_i(x_j), and wall-normal faces (midpoint offset parallel to the wall
normal) exchange their value sample for a normal-derivative row

    d/dn U^h(x_ij) = 2 q_j,      q_j = n_j . u_j,

weighted by |e_ij|^2 * w_i(x_j) so the row enters the residual with the
same physical dimension as the value rows.  Oblique faces into boundary
nodes keep value rows; their target is the stored face datum
2 (x_ij - x_i) . u_j, which the stepping code refreshes whenever the
boundary data changes.

Nodal (collocated) fits use the same basis over all node positions
inside an influence disc, with the center node included as a sample;
they provide the midpoint velocity interpolations used by upwinding and
the transport coupling, the projection's nodal pressure gradient, and
the operators of the collocated baseline solver.  Their radius is wider
than the face-fit radius: the face-midpoint Laplacian annihilates
lattice modes of period four, and re-seeding faces from one-ring
interpolants feeds exactly those modes back with gain above one.  The
wider disc filters them below the viscous damping floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import KIND_EXCLUDED, KIND_FLUID, NodeSet, StencilTable

COND_LIMIT = 1e12
TIKHONOV_FACTOR = 1e-10

# influence radius of the nodal fits in units of l0, matching the face
# fits (see default_specs).  Wider discs look tempting as a checkerboard
# filter, but a fit that no longer responds to node-to-node oscillation
# decouples it from the face system entirely: the velocity-face blend
# and the projection then carry no damping for it, and at coarse
# resolution the disc swallows resolved wavelengths (Taylor-Green at
# n = 16 loses second order).  The short scales must stay visible to
# the face coupling; dissipation with the right sign across the
# spectrum is the viscous operator's job, not the fit radius's.
NODAL_RADIUS_FACTOR = 3.1
PGRAD_RADIUS_FACTOR = 3.1


@dataclass(frozen=True)
class BasisSpec:
    """Scaled monomial basis of total order <= ``order`` (order 2 -> 6 terms)."""

    order: int = 2
    h_s: float = 1.0

    @property
    def n_terms(self) -> int:
        return (self.order + 1) * (self.order + 2) // 2

    def rows(self, offsets: np.ndarray) -> np.ndarray:
        """Value rows P(xi) for physical offsets x - x_i (last axis = 2)."""
        if self.order != 2:
            raise NotImplementedError("only the quadratic basis is supported")
        xi = offsets[..., 0] / self.h_s
        eta = offsets[..., 1] / self.h_s
        one = np.ones_like(xi)
        return np.stack([one, xi, eta, xi * xi, xi * eta, eta * eta], axis=-1)

    def normal_derivative_rows(
        self, offsets: np.ndarray, normals: np.ndarray
    ) -> np.ndarray:
        """Rows of n . grad P at physical offsets (already in physical units)."""
        xi = offsets[..., 0] / self.h_s
        eta = offsets[..., 1] / self.h_s
        zero = np.zeros_like(xi)
        one = np.ones_like(xi)
        dx = np.stack([zero, one, zero, 2 * xi, eta, zero], axis=-1)
        dy = np.stack([zero, zero, one, zero, xi, 2 * eta], axis=-1)
        return (dx * normals[..., 0:1] + dy * normals[..., 1:2]) / self.h_s

    def functional_rows(self) -> np.ndarray:
        """(4, n_terms) rows extracting value, d/dx, d/dy, Laplacian at xi=0."""
        e = np.zeros((4, 6))
        e[0, 0] = 1.0
        e[1, 1] = 1.0 / self.h_s
        e[2, 2] = 1.0 / self.h_s
        e[3, 3] = 2.0 / self.h_s**2
        e[3, 5] = 2.0 / self.h_s**2
        return e


@dataclass(frozen=True)
class WeightSpec:
    """Compact quartic spline weight w(d) = (1 - (d/r_e)^2)^2 for d < r_e."""

    r_e: float

    def __call__(self, d: np.ndarray) -> np.ndarray:
        s = np.clip(np.asarray(d) / self.r_e, 0.0, 1.0)
        return (1.0 - s * s) ** 2


def default_specs(l0: float) -> tuple[BasisSpec, WeightSpec]:
    """Quadratic basis scaled by l0 and influence radius r_e = 3.1 l0."""
    return BasisSpec(order=2, h_s=l0), WeightSpec(r_e=3.1 * l0)


def nodal_specs(l0: float) -> tuple[BasisSpec, WeightSpec]:
    """Quadratic basis and the wider influence radius of the nodal fits."""
    return BasisSpec(order=2, h_s=l0), WeightSpec(r_e=NODAL_RADIUS_FACTOR * l0)


def radial_component(x: np.ndarray, x_ref: np.ndarray, u: np.ndarray) -> np.ndarray:
    """U_{ref->}(x) = 2 (x - x_ref) . u(x); broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    x_ref = np.asarray(x_ref, dtype=float)
    u = np.asarray(u, dtype=float)
    return 2.0 * ((x - x_ref) * u).sum(axis=-1)


@dataclass
class BoundaryAugmentation:
    """Marks which nodes switch their neighbors to the extended objective.

    ``dirichlet`` is a node-level mask: faces into a marked node whose
    midpoint offset is parallel to that node's wall normal are fitted
    through d/dn U^h(x_ij) = 2 q_j instead of a midpoint value sample
    (``align_limit`` is the cosine threshold).  The prescribed normal
    velocity q_j itself enters at application time, so the cached weights
    stay valid while boundary values change (moving lids, inflow ramps).
    """

    dirichlet: np.ndarray  # (N,) bool
    align_limit: float = 0.99


@dataclass
class DerivativeWeights:
    """Cached per-face functionals of one radial fit per node.

    Applying the fit to a target vector t (value targets on plain faces,
    2*q_j on augmented faces) gives

        value     v . t     ~ F(x_i)
        gradient  d . t     ~ grad F(x_i)
        laplacian g . t     ~ lap F(x_i)

    exactly for any F whose samples come from a quadratic polynomial.
    """

    v: np.ndarray            # (N, 8)
    d: np.ndarray            # (N, 8, 2)
    g: np.ndarray            # (N, 8)
    is_bc: np.ndarray        # (N, 8) True where the slot is an augmented row
    cond: np.ndarray         # (N,)
    regularized: np.ndarray  # (N,) bool


def _solve_functionals(A, w, E):
    """Weighted normal equations for batched fits.

    A: (N, S, 6) LS rows, zero-padded; w: (N, S) row weights; E: (N, R, 6)
    evaluation rows.  Returns (F, cond, regularized) with F (N, R, S) such
    that the functional r applied to targets t is (F[:, r] * t).sum().
    Ill-conditioned moment matrices (cond > 1e12) fall back to Tikhonov
    regularization with lambda = 1e-10 * trace.
    """
    B = A * w[..., None]
    M = np.einsum("nsa,nsb->nab", B, A)
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(M)
    bad = ~np.isfinite(cond) | (cond > COND_LIMIT)
    if bad.any():
        lam = TIKHONOV_FACTOR * np.einsum("naa->n", M)
        lam = np.where(lam > 0, lam, TIKHONOV_FACTOR)
        M = M.copy()
        M[bad] += lam[bad, None, None] * np.eye(M.shape[1])
    Minv_Bt = np.linalg.solve(M, np.swapaxes(B, 1, 2))
    F = np.einsum("nre,nes->nrs", E, Minv_Bt)
    return F, cond, bad


def fit_radial_mls(
    nodes: NodeSet,
    st: StencilTable,
    basis: BasisSpec | None = None,
    weight: WeightSpec | None = None,
    augment: BoundaryAugmentation | None = None,
) -> DerivativeWeights:
    """Fit the radial quadratic at every node over its face midpoints.

    Without augmentation every valid face contributes a value row at x_ij
    weighted by w_i(x_ij).  With augmentation the extended objective is
    used instead: all rows are weighted at the neighbor node position
    w_i(x_j) = w(2 |x_ij - x_i|), wall-normal faces into marked nodes turn
    into normal-derivative rows weighted by |e_ij|^2 * w_i(x_j), and
    oblique faces into marked nodes stay value rows (their target is the
    stored boundary datum).  At interior nodes the value and Laplacian
    functionals are weight-independent (the even-part fit interpolates its
    antipodal sample-pair means), so the two objectives only differ next
    to boundaries.  Weights are only meaningful at nodes with >= 6
    samples; callers are expected to consume fluid-node rows only.
    """
    if basis is None or weight is None:
        b0, w0 = default_specs(nodes.mesh.l0)
        basis = basis or b0
        weight = weight or w0

    valid = st.valid
    A = basis.rows(st.moff)
    A[~valid] = 0.0
    dmid = np.linalg.norm(st.moff, axis=2)

    is_bc = np.zeros_like(valid)
    if augment is None:
        w = weight(dmid)
    else:
        w = weight(2.0 * dmid)
        jj = np.where(valid, st.nbr, 0)
        wall = valid & augment.dirichlet[jj]
        nrm = nodes.normal[jj]
        with np.errstate(invalid="ignore"):
            mhat = st.moff / np.maximum(dmid[..., None], 1e-300)
        is_bc = wall & ((mhat * nrm).sum(axis=2) > augment.align_limit)
        if is_bc.any():
            rows_bc = basis.normal_derivative_rows(st.moff, nrm)
            A[is_bc] = rows_bc[is_bc]
            e_len2 = 4.0 * (st.moff**2).sum(axis=2)  # |e_ij| = 2 |x_ij - x_i|
            w_bc = e_len2 * weight(2.0 * dmid)
            w[is_bc] = w_bc[is_bc]
    w[~valid] = 0.0

    E = np.broadcast_to(basis.functional_rows(), (nodes.n, 4, 6))
    F, cond, reg = _solve_functionals(A, w, E)
    return DerivativeWeights(
        v=F[:, 0],
        d=np.stack([F[:, 1], F[:, 2]], axis=-1),
        g=F[:, 3],
        is_bc=is_bc,
        cond=cond,
        regularized=reg,
    )


@dataclass
class NodalWeights:
    """Cached functionals of the collocated fit at each node.

    Sample slot 0 is the center node itself (weight w(0) = 1), slots
    1..K its disc neighbors in ``nbr`` (zero padded, mask ``valid``).
    ``interp`` evaluates the fitted polynomial at the 8 face midpoints
    (slot layout matches the stencil), which is what donor-side upwind
    values and the transport-coupling re-interpolations consume; it is
    omitted for fits that only ever supply derivatives.
    """

    nbr: np.ndarray            # (N, K) disc neighbor ids, 0 padded
    valid: np.ndarray          # (N, K)
    v: np.ndarray              # (N, K+1)
    d: np.ndarray              # (N, K+1, 2)
    g: np.ndarray              # (N, K+1)
    interp: np.ndarray | None  # (N, 8, K+1)
    cond: np.ndarray           # (N,)
    regularized: np.ndarray    # (N,) bool


def _periodic_images(mesh, pts: np.ndarray, ids: np.ndarray, r_e: float):
    """Replicate sample points across periodic seams within reach r_e."""
    all_pts = [pts]
    all_ids = [ids]
    shifts_x = [0.0]
    shifts_y = [0.0]
    if mesh.periodic_x:
        shifts_x += [-mesh.nx * mesh.l0, mesh.nx * mesh.l0]
    if mesh.periodic_y:
        shifts_y += [-mesh.ny * mesh.l0, mesh.ny * mesh.l0]
    for sx in shifts_x:
        for sy in shifts_y:
            if sx == 0.0 and sy == 0.0:
                continue
            shifted = pts + np.array([sx, sy])
            near = np.ones(len(pts), dtype=bool)
            if sx:
                near &= (
                    (shifted[:, 0] > mesh.xmin - r_e)
                    & (shifted[:, 0] < mesh.xmax + r_e)
                )
            if sy:
                near &= (
                    (shifted[:, 1] > mesh.ymin - r_e)
                    & (shifted[:, 1] < mesh.ymax + r_e)
                )
            all_pts.append(shifted[near])
            all_ids.append(ids[near])
    return np.vstack(all_pts), np.concatenate(all_ids)


def disc_neighbors(
    nodes: NodeSet, r_e: float, include: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Neighbors of every node within r_e, excluding itself.

    ``include`` restricts which nodes may appear as samples (default: all
    non-excluded nodes).  Periodic directions contribute wrapped images;
    offsets are measured through the seam.  Returns (nbr, valid, offs)
    with shapes (N, K), (N, K), (N, K, 2), zero padded.
    """
    if include is None:
        include = nodes.kind != KIND_EXCLUDED
    ids = np.flatnonzero(include)
    pts, pids = _periodic_images(nodes.mesh, nodes.x[ids], ids, r_e)
    tree = cKDTree(pts)
    hits = tree.query_ball_point(nodes.x, r_e * (1.0 - 1e-9))
    n = nodes.n
    K = max(1, max(len(h) for h in hits))
    nbr = np.zeros((n, K), dtype=np.int64)
    valid = np.zeros((n, K), dtype=bool)
    offs = np.zeros((n, K, 2))
    for i, h in enumerate(hits):
        h = np.asarray(h, dtype=np.int64)
        keep = pids[h] != i
        h = h[keep]
        m = len(h)
        nbr[i, :m] = pids[h]
        valid[i, :m] = True
        offs[i, :m] = pts[h] - nodes.x[i]
    return nbr, valid, offs


def fit_nodal_mls(
    nodes: NodeSet,
    st: StencilTable,
    basis: BasisSpec | None = None,
    weight: WeightSpec | None = None,
    subset: np.ndarray | None = None,
    build_interp: bool = True,
) -> NodalWeights:
    """Fit nodal quadratics over all node positions inside the disc.

    ``subset`` restricts the sample set (e.g. to pressure-carrying nodes
    for the projection gradient); a center outside the subset still gets
    a fit from its admissible neighbors.  Fits at excluded nodes are
    meaningless and must be masked by callers.
    """
    if basis is None or weight is None:
        b0, w0 = nodal_specs(nodes.mesh.l0)
        basis = basis or b0
        weight = weight or w0

    n = nodes.n
    include = subset if subset is not None else None
    nbr, valid, offs = disc_neighbors(nodes, weight.r_e, include=include)
    K = nbr.shape[1]

    A = np.zeros((n, K + 1, 6))
    A[:, 0] = basis.rows(np.zeros((n, 2)))
    A[:, 1:] = basis.rows(offs)
    A[:, 1:][~valid] = 0.0
    w = np.zeros((n, K + 1))
    center_in = (
        np.ones(n, dtype=bool) if subset is None
        else np.asarray(subset, dtype=bool)
    )
    w[:, 0] = np.where(center_in, 1.0, 0.0)
    w[:, 1:] = np.where(valid, weight(np.linalg.norm(offs, axis=2)), 0.0)

    n_rows = 12 if build_interp else 4
    E = np.empty((n, n_rows, 6))
    E[:, :4] = basis.functional_rows()
    if build_interp:
        E[:, 4:] = basis.rows(st.moff)
    F, cond, reg = _solve_functionals(A, w, E)
    return NodalWeights(
        nbr=nbr,
        valid=valid,
        v=F[:, 0],
        d=np.stack([F[:, 1], F[:, 2]], axis=-1),
        g=F[:, 3],
        interp=F[:, 4:] if build_interp else None,
        cond=cond,
        regularized=reg,
    )


def gather_node_samples(nw: NodalWeights, values: np.ndarray) -> np.ndarray:
    """(N, K+1, ...) center+disc samples of a nodal array, zero padded."""
    n, K = nw.nbr.shape
    out_shape = (n, K + 1) + values.shape[1:]
    out = np.zeros(out_shape, dtype=values.dtype)
    out[:, 0] = values
    picked = values[nw.nbr]
    if values.ndim == 1:
        out[:, 1:] = np.where(nw.valid, picked, 0.0)
    else:
        out[:, 1:] = np.where(nw.valid[..., None], picked, 0.0)
    return out


def interpolate_velocity(nw: NodalWeights, u: np.ndarray) -> np.ndarray:
    """Evaluate each node's fitted velocity at its 8 face midpoints.

    Returns (N, 8, 2); rows of nodes without a meaningful fit (excluded)
    are garbage and must be masked by the caller.
    """
    samples = gather_node_samples(nw, u)
    return np.einsum("nks,nsc->nkc", nw.interp, samples)


def evaluate_at_points(
    nodes: NodeSet,
    st: StencilTable,
    values: np.ndarray,
    points: np.ndarray,
    basis: BasisSpec | None = None,
    weight: WeightSpec | None = None,
) -> np.ndarray:
    """MLS-evaluate a nodal field at arbitrary points (probe lines, profiles).

    Each point is attributed to the nearest fluid node and evaluated
    through a collocated fit centered there, over all non-excluded nodes
    inside the influence disc (wrapped across periodic seams).  Scalar or
    per-component vector fields are supported.  Intended for output-sized
    point sets, not per-step inner loops.
    """
    if basis is None or weight is None:
        b0, w0 = nodal_specs(nodes.mesh.l0)
        basis = basis or b0
        weight = weight or w0
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out_shape = (points.shape[0],) + values.shape[1:]
    out = np.zeros(out_shape)

    live_ids = np.flatnonzero(nodes.kind != KIND_EXCLUDED)
    pts, pids = _periodic_images(nodes.mesh, nodes.x[live_ids], live_ids,
                                 weight.r_e)
    tree = cKDTree(pts)
    fluid_ids = np.flatnonzero(nodes.kind == KIND_FLUID)
    fpts, _ = _periodic_images(nodes.mesh, nodes.x[fluid_ids], fluid_ids,
                               weight.r_e)
    ftree = cKDTree(fpts)

    for p_idx, p in enumerate(points):
        dist, fi = ftree.query(p)
        if not np.isfinite(dist):
            out[p_idx] = np.nan
            continue
        center = fpts[fi]
        hits = np.asarray(
            tree.query_ball_point(center, weight.r_e * (1.0 - 1e-9)),
            dtype=np.int64,
        )
        offs = pts[hits] - center
        A = basis.rows(offs)
        w = weight(np.linalg.norm(offs, axis=1))
        M = (A * w[:, None]).T @ A
        if np.linalg.cond(M) > COND_LIMIT:
            M = M + TIKHONOV_FACTOR * np.trace(M) * np.eye(6)
        coef = np.linalg.solve(M, (A * w[:, None]).T @ values[pids[hits]])
        out[p_idx] = basis.rows(p - center) @ coef
    return out
