"""Background mesh, node arrangements and compact stencils.

The discretization keeps one movable node per background-mesh cell and
constrains the node to stay inside its cell's closure.  Node indices and
cell indices therefore coincide: node ``i`` lives in cell
``(ix, iy) = (i % nx, i // nx)``.  Neighbor search degenerates to looking
at the surrounding 3x3 cell block, which keeps every stencil compact
(at most 8 neighbors) and O(1) to build.

Boundary handling: the outermost cell layer along a non-periodic side is
snapped onto the wall line (the wall-normal coordinate is overwritten, the
tangential one is kept), tagged, and given the side's outward normal.
Circular obstacles snap the nodes of circle-intersected cells onto the
circle and exclude the cells strictly inside it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KIND_FLUID = 0
KIND_BOUNDARY = 1
KIND_EXCLUDED = 2

# side name -> (axis, which end, outward normal)
_SIDES = {
    "left": (0, 0, (-1.0, 0.0)),
    "right": (0, 1, (1.0, 0.0)),
    "bottom": (1, 0, (0.0, -1.0)),
    "top": (1, 1, (0.0, 1.0)),
}


@dataclass(frozen=True)
class BackgroundMesh:
    """Uniform Cartesian background mesh with square cells of side l0."""

    xmin: float
    ymin: float
    l0: float
    nx: int
    ny: int
    periodic_x: bool = False
    periodic_y: bool = False

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def xmax(self) -> float:
        return self.xmin + self.nx * self.l0

    @property
    def ymax(self) -> float:
        return self.ymin + self.ny * self.l0

    def cell_of(self, i):
        """Cell multi-index (ix, iy) of flat cell id(s) i."""
        i = np.asarray(i)
        return i % self.nx, i // self.nx

    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of cell center coordinates, row-major in iy."""
        ix, iy = self.cell_of(np.arange(self.n_cells))
        out = np.empty((self.n_cells, 2))
        out[:, 0] = self.xmin + (ix + 0.5) * self.l0
        out[:, 1] = self.ymin + (iy + 0.5) * self.l0
        return out

    def cell_lower(self, i):
        """Lower-left corner of cell(s) i."""
        ix, iy = self.cell_of(i)
        return np.stack(
            [self.xmin + ix * self.l0, self.ymin + iy * self.l0], axis=-1
        )


def build_background_mesh(
    xmin: float,
    xmax: float,
    ymin: float,
    ymax: float,
    l0: float,
    periodic_x: bool = False,
    periodic_y: bool = False,
) -> BackgroundMesh:
    """Build the mesh covering [xmin,xmax]x[ymin,ymax] with cell size l0.

    Extents must be integer multiples of l0 (relative tolerance 1e-9) and at
    least 3 cells per direction so that the 3x3 neighbor block is unambiguous
    under periodic wrap.
    """
    if l0 <= 0.0:
        raise ValueError("l0 must be positive")
    spans = (xmax - xmin, ymax - ymin)
    counts = []
    for span in spans:
        n = int(round(span / l0))
        if n < 3 or abs(n * l0 - span) > 1e-9 * max(1.0, abs(span)):
            raise ValueError(
                f"extent {span} is not a multiple >= 3 of l0 = {l0}"
            )
        counts.append(n)
    return BackgroundMesh(
        xmin=float(xmin),
        ymin=float(ymin),
        l0=float(l0),
        nx=counts[0],
        ny=counts[1],
        periodic_x=periodic_x,
        periodic_y=periodic_y,
    )


@dataclass
class NodeSet:
    """One node per cell, plus kind/tag/normal metadata.

    kind: 0 fluid, 1 boundary, 2 excluded.  tag indexes into ``tags``
    (-1 for untagged).  ``normal`` is the outward unit normal for boundary
    nodes (outward from the fluid for walls, radially outward from the body
    for obstacle surfaces) and zero elsewhere.
    """

    mesh: BackgroundMesh
    x: np.ndarray          # (N, 2)
    kind: np.ndarray       # (N,) int8
    tag: np.ndarray        # (N,) int32
    normal: np.ndarray     # (N, 2)
    tags: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    def tag_id(self, name: str) -> int:
        if name not in self.tags:
            self.tags.append(name)
        return self.tags.index(name)

    def ids_of_tag(self, name: str) -> np.ndarray:
        if name not in self.tags:
            return np.empty(0, dtype=np.int64)
        return np.flatnonzero(self.tag == self.tags.index(name))

    def assert_mesh_constraint(self, tol: float = 1e-9):
        """Every active node must lie inside its cell's closure."""
        active = self.kind != KIND_EXCLUDED
        lower = self.mesh.cell_lower(np.flatnonzero(active))
        d = self.x[active] - lower
        slack = tol * self.mesh.l0
        if not (
            (d >= -slack).all() and (d <= self.mesh.l0 + slack).all()
        ):
            raise AssertionError("mesh constraint violated: node left its cell")


def generate_nodes(
    mesh: BackgroundMesh,
    arrangement: str = "uniform",
    alpha: float = 0.0,
    seed: int = 0,
    walls: dict | None = None,
) -> NodeSet:
    """Place one node per cell and snap/tag the wall layers.

    arrangement "uniform" puts nodes at cell centers; "randomized" shifts
    each node by alpha*l0*(r - 1/2) with r drawn uniformly per component
    from a seeded generator, so |shift| <= alpha*l0/2 and the mesh
    constraint holds for alpha < 1.

    ``walls`` maps side names (left/right/bottom/top) to tag names.  Sides
    on a periodic axis must not be tagged.  Sides are processed in dict
    order and later sides overwrite earlier ones at the corners, which is
    how a case decides corner ownership (e.g. tag the lid last).
    """
    x = mesh.cell_centers()
    if arrangement == "randomized":
        if not 0.0 <= alpha < 1.0:
            raise ValueError("alpha must be in [0, 1)")
        rng = np.random.default_rng(seed)
        x = x + alpha * mesh.l0 * (rng.random((mesh.n_cells, 2)) - 0.5)
    elif arrangement != "uniform":
        raise ValueError(f"unknown arrangement {arrangement!r}")

    nodes = NodeSet(
        mesh=mesh,
        x=x,
        kind=np.zeros(mesh.n_cells, dtype=np.int8),
        tag=np.full(mesh.n_cells, -1, dtype=np.int32),
        normal=np.zeros((mesh.n_cells, 2)),
    )

    walls = walls or {}
    for side, tag_name in walls.items():
        axis, end, nrm = _SIDES[side]
        if (axis == 0 and mesh.periodic_x) or (axis == 1 and mesh.periodic_y):
            raise ValueError(f"side {side} lies on a periodic axis")
        ix, iy = mesh.cell_of(np.arange(mesh.n_cells))
        idx = (ix, iy)[axis]
        count = (mesh.nx, mesh.ny)[axis]
        layer = np.flatnonzero(idx == (0 if end == 0 else count - 1))
        wall_coord = (
            (mesh.xmin, mesh.ymin)[axis]
            if end == 0
            else (mesh.xmin, mesh.ymin)[axis] + count * mesh.l0
        )
        nodes.x[layer, axis] = wall_coord
        nodes.kind[layer] = KIND_BOUNDARY
        nodes.tag[layer] = nodes.tag_id(tag_name)
        nodes.normal[layer] = nrm

    nodes.assert_mesh_constraint()
    return nodes


def place_obstacle_nodes(
    nodes: NodeSet,
    center,
    radius: float,
    mode: str = "fitted",
    tag: str = "cylinder",
    n_arc_samples: int = 4096,
) -> NodeSet:
    """Insert a circular obstacle of the given center/radius.

    mode "fitted": every cell the circle properly crosses has its node
    snapped to the nearest circle point that still lies in the cell and is
    tagged as obstacle boundary with the radially outward normal; cells
    inside the circle are excluded.  A cell the circle merely grazes (a
    corner touch or a sliver shorter than the arc sampling) keeps its node:
    as fluid when the node sits outside the circle, excluded otherwise.
    mode "damping" leaves the arrangement untouched (the obstacle then
    acts through a damping force handled by the solver), which keeps
    configs for both representations symmetric.

    Raises if the circle crosses fewer than 8 cells (unresolvable).
    """
    if mode == "damping":
        return nodes
    if mode != "fitted":
        raise ValueError(f"unknown obstacle mode {mode!r}")

    mesh = nodes.mesh
    c = np.asarray(center, dtype=float)
    lower = mesh.cell_lower(np.arange(mesh.n_cells))
    # distance from circle center to each cell rectangle (0 if inside)
    gap = np.maximum(
        np.maximum(lower - c, c - (lower + mesh.l0)), 0.0
    )
    d_min = np.hypot(gap[:, 0], gap[:, 1])
    corners = lower[:, None, :] + mesh.l0 * np.array(
        [[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float
    )
    d_max = np.linalg.norm(corners - c, axis=2).max(axis=1)

    intersected = (d_min < radius) & (radius < d_max)
    inside = d_max <= radius
    if intersected.sum() < 8:
        raise ValueError(
            f"circle r={radius} intersects only {intersected.sum()} cells; "
            "refine the mesh"
        )
    if (nodes.kind[intersected] == KIND_BOUNDARY).any() or (
        nodes.kind[inside] == KIND_BOUNDARY
    ).any():
        raise ValueError("obstacle overlaps a wall layer")

    theta = np.linspace(0.0, 2.0 * np.pi, n_arc_samples, endpoint=False)
    arc = c + radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)

    tid = nodes.tag_id(tag)
    for i in np.flatnonzero(intersected):
        xi = nodes.x[i]
        r_vec = xi - c
        r_len = np.hypot(r_vec[0], r_vec[1])
        lo = lower[i]
        if r_len > 1e-14 * radius:
            snap = c + radius * r_vec / r_len
        else:
            snap = arc[0]
        in_cell = (snap >= lo - 1e-12 * mesh.l0).all() and (
            snap <= lo + mesh.l0 * (1 + 1e-12)
        ).all()
        if not in_cell:
            # radial snap left the cell: best in-cell point of a sampled arc
            sel = (
                (arc >= lo - 1e-12 * mesh.l0)
                & (arc <= lo + mesh.l0 * (1 + 1e-12))
            ).all(axis=1)
            if not sel.any():
                # grazing contact only: no representable surface point here
                if r_len <= radius:
                    nodes.kind[i] = KIND_EXCLUDED
                continue
            cand = arc[sel]
            snap = cand[np.argmin(np.sum((cand - xi) ** 2, axis=1))]
        nodes.x[i] = np.clip(snap, lo, lo + mesh.l0)
        nodes.kind[i] = KIND_BOUNDARY
        nodes.tag[i] = tid
        n_vec = nodes.x[i] - c
        nodes.normal[i] = n_vec / np.linalg.norm(n_vec)

    nodes.kind[inside] = KIND_EXCLUDED
    nodes.assert_mesh_constraint()
    return nodes


@dataclass
class StencilTable:
    """Padded per-node 3x3-block adjacency with staggered-edge indexing.

    For node i, slot k < nnbr[i] holds neighbor j = nbr[i,k]; shift[i,k]
    is the periodic image shift so that x_j + shift is the geometric
    neighbor position, and moff[i,k] = x_ij - x_i is the offset to the
    shared virtual face midpoint x_ij = (x_i + x_j + shift)/2.  Midpoints
    sit exactly half-way so the two one-sided offsets are opposite, which
    is what makes every staggered edge value antisymmetric.

    Each undirected edge gets one global id; edge_sign[i,k] is +1 when i
    is the canonical (lower-id) endpoint.  A staggered value seen from i is
    sign * stored value.  rev[i,k] is i's slot index in j's row.
    """

    nbr: np.ndarray        # (N, 8) int32, -1 padded
    nnbr: np.ndarray       # (N,) int16
    shift: np.ndarray      # (N, 8, 2)
    moff: np.ndarray       # (N, 8, 2)
    edge_id: np.ndarray    # (N, 8) int32, -1 padded
    edge_sign: np.ndarray  # (N, 8) float64, 0 padded
    rev: np.ndarray        # (N, 8) int8, -1 padded
    n_edges: int
    partner: np.ndarray    # (N,) int32: most-inward fluid neighbor of a
    #                        boundary node (-1 elsewhere), for ghost copies

    @property
    def valid(self) -> np.ndarray:
        return self.nbr >= 0


def build_local_stencils(nodes: NodeSet, min_neighbors: int = 6) -> StencilTable:
    """Enumerate 3x3-block neighbors, virtual-face midpoints and edges.

    Fluid nodes with fewer than ``min_neighbors`` active neighbors are a
    configuration error (the quadratic fit underneath needs 6 independent
    samples); such arrangements are rejected here rather than patched.
    """
    mesh = nodes.mesh
    n = nodes.n
    ids = np.arange(n)
    ix, iy = mesh.cell_of(ids)

    nbr = np.full((n, 8), -1, dtype=np.int32)
    shift = np.zeros((n, 8, 2))
    nnbr = np.zeros(n, dtype=np.int16)
    active = nodes.kind != KIND_EXCLUDED

    slot = np.zeros(n, dtype=np.int64)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            jx, jy = ix + dx, iy + dy
            sx = np.zeros(n)
            sy = np.zeros(n)
            okx = np.ones(n, dtype=bool)
            oky = np.ones(n, dtype=bool)
            if mesh.periodic_x:
                sx = mesh.l0 * mesh.nx * ((jx >= mesh.nx).astype(float) - (jx < 0))
                jx = jx % mesh.nx
            else:
                okx = (jx >= 0) & (jx < mesh.nx)
            if mesh.periodic_y:
                sy = mesh.l0 * mesh.ny * ((jy >= mesh.ny).astype(float) - (jy < 0))
                jy = jy % mesh.ny
            else:
                oky = (jy >= 0) & (jy < mesh.ny)
            j = jy * mesh.nx + jx
            ok = okx & oky & active
            jj = np.where(ok, j, 0)
            ok &= nodes.kind[jj] != KIND_EXCLUDED
            rows = np.flatnonzero(ok)
            nbr[rows, slot[rows]] = j[rows]
            shift[rows, slot[rows], 0] = sx[rows]
            shift[rows, slot[rows], 1] = sy[rows]
            slot[rows] += 1
    nnbr[:] = slot

    fluid = nodes.kind == KIND_FLUID
    if (nnbr[fluid] < min_neighbors).any():
        bad = np.flatnonzero(fluid & (nnbr < min_neighbors))
        raise ValueError(
            f"{bad.size} fluid nodes have fewer than {min_neighbors} "
            f"neighbors (first: node {bad[0]})"
        )

    valid = nbr >= 0
    xj = np.where(valid[:, :, None], nodes.x[np.where(valid, nbr, 0)], 0.0)
    moff = np.where(
        valid[:, :, None], 0.5 * (xj + shift - nodes.x[:, None, :]), 0.0
    )

    # canonical edge = directed pair with i < j
    ii = np.repeat(ids, 8).reshape(n, 8)
    canon = valid & (ii < nbr)
    n_edges = int(canon.sum())
    edge_id = np.full((n, 8), -1, dtype=np.int32)
    edge_id[canon] = np.arange(n_edges, dtype=np.int32)
    edge_sign = np.zeros((n, 8))
    edge_sign[canon] = 1.0

    # mirror ids to the j-side slots via the reverse map
    rev = np.full((n, 8), -1, dtype=np.int8)
    rows, cols = np.nonzero(valid)
    js = nbr[rows, cols]
    # for each directed (i,k): find slot of i in j's row
    match = nbr[js] == rows[:, None]
    rev_slots = np.argmax(match, axis=1).astype(np.int8)
    # a pair can be adjacent through one wrap only (>= 3 cells per axis)
    rev[rows, cols] = rev_slots
    back = edge_id[rows, cols] >= 0
    edge_id[js[back], rev_slots[back]] = edge_id[rows[back], cols[back]]
    edge_sign[js[back], rev_slots[back]] = -1.0

    # ghost partner: most-inward fluid neighbor of each boundary node
    partner = np.full(n, -1, dtype=np.int32)
    for i in np.flatnonzero(nodes.kind == KIND_BOUNDARY):
        ks = np.flatnonzero(nbr[i] >= 0)
        cand = nbr[i, ks]
        is_fluid = nodes.kind[cand] == KIND_FLUID
        if not is_fluid.any():
            continue
        ks = ks[is_fluid]
        d = moff[i, ks]  # half-offsets suffice for direction comparison
        score = -(d @ nodes.normal[i]) / np.linalg.norm(d, axis=1)
        partner[i] = nbr[i, ks[np.argmax(score)]]

    return StencilTable(
        nbr=nbr,
        nnbr=nnbr,
        shift=shift,
        moff=moff,
        edge_id=edge_id,
        edge_sign=edge_sign,
        rev=rev,
        n_edges=n_edges,
        partner=partner,
    )
