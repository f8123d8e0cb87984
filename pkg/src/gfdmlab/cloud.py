"""Lagrangian point clouds: storage, neighbour supports, and cloud management.

A simulation state is a scattered set of points carrying velocity and pressure.
Interior points move with the flow; boundary points are pinned (free-surface
points are boundary points that move).  Derivative stencils downstream need
every point to see at least ``MIN_SUPPORT`` points (itself included) inside its
smoothing length h, so cloud management keeps the distribution admissible as
points advect: clusters are thinned and holes are refilled.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# point kind codes
INTERIOR = 0
WALL = 1
INFLOW = 2
OUTFLOW = 3
FREE_SURFACE = 4

KIND_NAMES = {
    INTERIOR: "interior",
    WALL: "wall",
    INFLOW: "inflow",
    OUTFLOW: "outflow",
    FREE_SURFACE: "free_surface",
}

#: minimum admissible support size: 5 Taylor unknowns plus the point itself
MIN_SUPPORT = 6

#: neighbours used for the volume length scale d_i
VOLUME_NEIGHBORS = 6

#: hole-filling sweeps per management call; each round feeds the next, so
#: this bounds how deep a void can be healed in one step
MAX_FILL_ROUNDS = 6


@dataclass
class CloudParams:
    """Tunables for cloud management.

    r_max : largest admissible hole radius, in units of h.
    r_min : smallest admissible point separation, in units of h.
    n_min : support size below which a point is reported as defective.
    wall_standoff : smallest admissible normal clearance between an interior
        point and a fixed boundary, in units of h; 0 disables the rule.
    """

    r_max: float = 0.45
    r_min: float = 0.2
    n_min: int = 9
    wall_standoff: float = 0.36

    def __post_init__(self):
        if not 0.0 < self.r_min < self.r_max:
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if not 0.0 <= self.wall_standoff < 1.0:
            raise ValueError(f"wall_standoff must lie in [0, 1), got {self.wall_standoff}")
        if self.n_min < MIN_SUPPORT:
            raise ValueError(f"n_min must be >= {MIN_SUPPORT}")


@dataclass
class PointCloud:
    """Struct-of-arrays state for one point cloud.

    All per-point arrays share the same length N.  ``normal`` is the outward
    unit normal for boundary points and zero for interior points.
    ``boundary_weight`` is the surface-integration weight l_i along flux
    boundaries (zero elsewhere).  ``volume_scale`` is the calibration constant
    of the volume model, frozen after the first calibrated call of
    :func:`compute_volumes`.
    """

    positions: np.ndarray
    velocity: np.ndarray
    velocity_prev: np.ndarray
    pressure: np.ndarray
    kind: np.ndarray
    normal: np.ndarray
    h: np.ndarray
    volume: np.ndarray
    boundary_weight: np.ndarray
    active: np.ndarray
    divergence: np.ndarray
    volume_scale: float = 1.0

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def interior_mask(self) -> np.ndarray:
        return self.kind == INTERIOR

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.kind != INTERIOR

    @property
    def fluid_mask(self) -> np.ndarray:
        """Points that move with the flow."""
        return (self.kind == INTERIOR) | (self.kind == FREE_SURFACE)

    def copy(self) -> "PointCloud":
        return PointCloud(
            positions=self.positions.copy(),
            velocity=self.velocity.copy(),
            velocity_prev=self.velocity_prev.copy(),
            pressure=self.pressure.copy(),
            kind=self.kind.copy(),
            normal=self.normal.copy(),
            h=self.h.copy(),
            volume=self.volume.copy(),
            boundary_weight=self.boundary_weight.copy(),
            active=self.active.copy(),
            divergence=self.divergence.copy(),
            volume_scale=self.volume_scale,
        )

    def take(self, idx: np.ndarray) -> "PointCloud":
        """New cloud restricted to the given indices (order preserved)."""
        return PointCloud(
            positions=self.positions[idx],
            velocity=self.velocity[idx],
            velocity_prev=self.velocity_prev[idx],
            pressure=self.pressure[idx],
            kind=self.kind[idx],
            normal=self.normal[idx],
            h=self.h[idx],
            volume=self.volume[idx],
            boundary_weight=self.boundary_weight[idx],
            active=self.active[idx],
            divergence=self.divergence[idx],
            volume_scale=self.volume_scale,
        )


def make_cloud(positions, kind, normal=None, h=1.0, velocity=None, pressure=None,
               boundary_weight=None) -> PointCloud:
    """Convenience constructor filling defaulted per-point arrays."""
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(positions)
    kind = np.asarray(kind, dtype=np.int8).reshape(n)
    if normal is None:
        normal = np.zeros((n, 2))
    else:
        normal = np.asarray(normal, dtype=float).reshape(n, 2)
    h_arr = np.broadcast_to(np.asarray(h, dtype=float), (n,)).copy()
    vel = np.zeros((n, 2)) if velocity is None else np.asarray(velocity, float).reshape(n, 2).copy()
    p = np.zeros(n) if pressure is None else np.asarray(pressure, float).reshape(n).copy()
    bw = np.zeros(n) if boundary_weight is None else np.asarray(boundary_weight, float).reshape(n).copy()
    return PointCloud(
        positions=positions.copy(),
        velocity=vel,
        velocity_prev=vel.copy(),
        pressure=p,
        kind=kind,
        normal=normal,
        h=h_arr,
        volume=np.zeros(n),
        boundary_weight=bw,
        active=np.ones(n, dtype=bool),
        divergence=np.zeros(n),
    )


# ------------------------------------------------------------------------
# neighbour search
# ------------------------------------------------------------------------


@dataclass
class NeighborTable:
    """CSR-style support lists: ``indices[indptr[i]:indptr[i+1]]`` is S_i.

    Rows are sorted ascending and always contain i itself.  ``defect_ids``
    lists points whose support is smaller than ``MIN_SUPPORT``; the caller
    decides whether that is fatal.
    """

    indptr: np.ndarray
    indices: np.ndarray
    defect_ids: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)


class _Grid:
    """Uniform background grid over the cloud's bounding box."""

    def __init__(self, positions: np.ndarray, cell: float):
        self.cell = float(cell)
        self.origin = positions.min(axis=0)
        ij = np.floor((positions - self.origin) / self.cell).astype(np.int64)
        self.ij = ij
        self.ncols = int(ij[:, 1].max()) + 2 if len(ij) else 1
        keys = ij[:, 0] * self.ncols + ij[:, 1]
        order = np.argsort(keys, kind="stable")
        self.order = order
        self.sorted_keys = keys[order]

    def cell_of(self, xy: np.ndarray) -> np.ndarray:
        return np.floor((xy - self.origin) / self.cell).astype(np.int64)

    def points_near(self, ci: int, cj: int) -> np.ndarray:
        """Indices of points in the 3x3 block of cells around (ci, cj)."""
        chunks = []
        for di in (-1, 0, 1):
            row = (ci + di) * self.ncols
            lo = np.searchsorted(self.sorted_keys, row + cj - 1, side="left")
            hi = np.searchsorted(self.sorted_keys, row + cj + 1, side="right")
            if hi > lo:
                chunks.append(self.order[lo:hi])
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(chunks)


def build_neighbors(cloud: PointCloud) -> NeighborTable:
    """Support lists S_i = {j : |x_j - x_i| <= h_i}, i included.

    Uses a uniform background grid of cell size max(h), so the cost is
    O(N * mean |S_i|) rather than O(N^2).  Note the definition is one-sided:
    with non-uniform h the relation need not be symmetric.
    """
    pos = cloud.positions
    n = cloud.n
    if n == 0:
        raise ValueError("empty cloud")
    grid = _Grid(pos, float(cloud.h.max()))
    h2 = cloud.h ** 2
    rows = []
    lengths = np.empty(n, dtype=np.int64)
    for i in range(n):
        ci, cj = grid.ij[i]
        cand = grid.points_near(ci, cj)
        d2 = np.sum((pos[cand] - pos[i]) ** 2, axis=1)
        sel = cand[d2 <= h2[i]]
        sel.sort()
        rows.append(sel)
        lengths[i] = len(sel)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    indices = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    defects = np.flatnonzero(lengths < MIN_SUPPORT)
    return NeighborTable(indptr=indptr, indices=indices, defect_ids=defects)


# ------------------------------------------------------------------------
# cloud generation
# ------------------------------------------------------------------------


def generate_rectangle_cloud(extent, h, spacing_factor=0.4, jitter=0.0, seed=0,
                             kind_boundary=WALL) -> PointCloud:
    """Rectangle [x0,x1] x [y0,y1] filled with a near-uniform lattice.

    One lattice of pitch ~ spacing_factor*h covers the rectangle; edge nodes
    become boundary points (outward normals set, corner normals bisect), inner
    nodes become interior points.  Interior points may be jittered by a
    uniform perturbation of amplitude jitter*pitch (jitter <= 0.1), seeded for
    reproducibility.

    Parameters
    ----------
    extent : (x0, x1, y0, y1) or (Lx, Ly) for a box anchored at the origin.
    h : smoothing length assigned to every point.
    """
    extent = tuple(float(v) for v in extent)
    if len(extent) == 2:
        x0, x1, y0, y1 = 0.0, extent[0], 0.0, extent[1]
    else:
        x0, x1, y0, y1 = extent
    lx, ly = x1 - x0, y1 - y0
    if lx < 3.0 * h or ly < 3.0 * h:
        raise ValueError(f"extent {lx} x {ly} too small for h = {h} (need >= 3h)")
    if not 0.0 <= jitter <= 0.1:
        raise ValueError("jitter must lie in [0, 0.1]")
    s = spacing_factor * h
    nx = max(3, int(round(lx / s)))
    ny = max(3, int(round(ly / s)))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    on_edge_x = np.zeros_like(gx, dtype=bool)
    on_edge_x[0, :] = on_edge_x[-1, :] = True
    on_edge_y = np.zeros_like(gx, dtype=bool)
    on_edge_y[:, 0] = on_edge_y[:, -1] = True
    edge = on_edge_x | on_edge_y

    pts = np.column_stack([gx.ravel(), gy.ravel()])
    edge_flat = edge.ravel()

    # outward normals: edge direction sign, corners get the bisector
    nrm = np.zeros_like(pts)
    ex = np.where(gx == x0, -1.0, 0.0) + np.where(gx == x1, 1.0, 0.0)
    ey = np.where(gy == y0, -1.0, 0.0) + np.where(gy == y1, 1.0, 0.0)
    nrm[:, 0] = ex.ravel()
    nrm[:, 1] = ey.ravel()
    lens = np.linalg.norm(nrm, axis=1)
    nz = lens > 0
    nrm[nz] /= lens[nz, None]

    interior_pts = pts[~edge_flat]
    if jitter > 0 and len(interior_pts):
        rng = np.random.default_rng(seed)
        interior_pts = interior_pts + rng.uniform(-jitter * s, jitter * s,
                                                  size=interior_pts.shape)

    positions = np.vstack([interior_pts, pts[edge_flat]])
    kinds = np.concatenate([
        np.full(len(interior_pts), INTERIOR, dtype=np.int8),
        np.full(int(edge_flat.sum()), kind_boundary, dtype=np.int8),
    ])
    normals = np.vstack([np.zeros_like(interior_pts), nrm[edge_flat]])
    return make_cloud(positions, kinds, normal=normals, h=h)


# ------------------------------------------------------------------------
# cloud management
# ------------------------------------------------------------------------


@dataclass
class ManageReport:
    deleted: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    absorbed: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    inserted: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))
    skipped_insertions: int = 0

    @property
    def changed(self) -> bool:
        return len(self.deleted) > 0 or len(self.absorbed) > 0 or len(self.inserted) > 0


def _shepard_values(cloud: PointCloud, site: np.ndarray, donors: np.ndarray,
                    alpha: float, h_ref: float):
    """Normalized zeroth-order least squares (Shepard) transfer to a site."""
    d2 = np.sum((cloud.positions[donors] - site) ** 2, axis=1)
    w = np.exp(-alpha * d2 / h_ref ** 2)
    w /= w.sum()
    vel = w @ cloud.velocity[donors]
    vel_prev = w @ cloud.velocity_prev[donors]
    p = w @ cloud.pressure[donors]
    h_new = w @ cloud.h[donors]
    return vel, vel_prev, p, h_new


def manage_cloud(cloud: PointCloud, params: CloudParams | None = None,
                 inside=None, alpha: float = 6.25):
    """Thin clusters and fill holes; returns (new_cloud, ManageReport).

    Merging: whenever two points sit closer than r_min*h (h = smaller of the
    pair), the later-indexed interior point of the pair is deleted; a boundary
    point is never deleted, and boundary-boundary pairs are left alone.

    Standoff: interior points whose clearance normal to a solid wall falls
    below wall_standoff*h are absorbed into the boundary, i.e. deleted.
    Only points facing the wall element count (the offset tangential to the
    boundary point must not exceed the normal one); inflow, outflow and
    free-surface points do not trigger this rule.

    Hole filling: candidate sites on a background grid are tested; a site
    whose clearance to every point exceeds r_max*h receives a new interior
    point with Shepard-interpolated field values, provided at least
    ``MIN_SUPPORT`` donors lie within h.  ``inside`` (mask callable on (M,2)
    positions) restricts candidates to the flow domain; without it a
    candidate is accepted only when surrounded by donors (largest angular gap
    below 100 degrees), which keeps free surfaces intact.
    """
    if params is None:
        params = CloudParams()
    report = ManageReport()

    # --- merge too-close pairs -------------------------------------------
    table = build_neighbors(cloud)
    pos = cloud.positions
    alive = np.ones(cloud.n, dtype=bool)
    deleted = []
    for i in range(cloud.n):
        if not alive[i]:
            continue
        row = table.row(i)
        row = row[row > i]
        if len(row) == 0:
            continue
        d = np.linalg.norm(pos[row] - pos[i], axis=1)
        hp = np.minimum(cloud.h[row], cloud.h[i])
        for j, dist, hj in zip(row, d, hp):
            if not (alive[i] and alive[j]) or dist >= params.r_min * hj:
                continue
            i_bnd = cloud.kind[i] != INTERIOR
            j_bnd = cloud.kind[j] != INTERIOR
            if i_bnd and j_bnd:
                continue
            # later-indexed interior point loses; boundary points survive
            victim = i if j_bnd else int(j)
            alive[victim] = False
            deleted.append(victim)
    if deleted:
        report.deleted = np.array(sorted(deleted), dtype=np.int64)
        cloud = cloud.take(np.flatnonzero(alive))

    # --- absorb interior points crowding a wall ---------------------------
    # Interior points advected against a wall end up with one-sided, nearly
    # collinear supports well before the pairwise r_min rule fires, and the
    # pressure feedback loop turns locally amplifying.  Points whose normal
    # clearance to a wall drops below wall_standoff*h are removed; free
    # surfaces move with the flow and inflow/outflow planes pass healthy
    # through-flow (the exit policy owns those crossings), so only solid
    # walls absorb.  The tangential offset must not exceed the normal one,
    # so a wall point only absorbs points facing its own wall element and a
    # sloped wall does not reach past its corner.
    if params.wall_standoff > 0.0:
        pos = cloud.positions
        static = cloud.kind == WALL
        if static.any():
            grid = _Grid(pos, float(cloud.h.max()))
            absorb = np.zeros(cloud.n, dtype=bool)
            reach = 0.75
            for b in np.flatnonzero(static):
                ci, cj = grid.cell_of(pos[b])
                cand = grid.points_near(int(ci), int(cj))
                cand = cand[(cloud.kind[cand] == INTERIOR) & ~absorb[cand]]
                if len(cand) == 0:
                    continue
                delta = pos[cand] - pos[b]
                dist = np.linalg.norm(delta, axis=1)
                hb = np.minimum(cloud.h[cand], cloud.h[b])
                nb = cloud.normal[b]
                dperp = np.abs(delta @ nb)
                dtan = np.abs(delta @ np.array([-nb[1], nb[0]]))
                hit = ((dist < reach * hb) & (dperp < params.wall_standoff * hb)
                       & (dtan <= dperp))
                absorb[cand[hit]] = True
            if absorb.any():
                report.absorbed = np.flatnonzero(absorb).astype(np.int64)
                cloud = cloud.take(np.flatnonzero(~absorb))

    # --- fill holes -------------------------------------------------------
    # A wide void cannot be healed in one sweep: its central sites have too
    # few donors for interpolation and a lone new point would sit with a
    # rank-deficient support.  Sweeping repeatedly lets each round's points
    # serve as donors and clearance anchors for the next, so voids close
    # from the rim inward until every interior disk of radius r_max*h holds
    # a point.
    inserted_all = []
    for _ in range(MAX_FILL_ROUNDS):
        pos = cloud.positions
        h_ref = float(cloud.h.min())
        step = 0.5 * params.r_max * h_ref
        lo = pos.min(axis=0)
        hi = pos.max(axis=0)
        nxc = max(1, int(np.ceil((hi[0] - lo[0]) / step)))
        nyc = max(1, int(np.ceil((hi[1] - lo[1]) / step)))
        cx = lo[0] + (np.arange(nxc) + 0.5) * (hi[0] - lo[0]) / nxc
        cy = lo[1] + (np.arange(nyc) + 0.5) * (hi[1] - lo[1]) / nyc
        gx, gy = np.meshgrid(cx, cy, indexing="ij")
        candidates = np.column_stack([gx.ravel(), gy.ravel()])
        if inside is not None:
            candidates = candidates[np.asarray(inside(candidates), dtype=bool)]

        grid = _Grid(pos, float(cloud.h.max()))
        report.skipped_insertions = 0
        new_pts, new_vel, new_vel_prev, new_p, new_h = [], [], [], [], []
        for site in candidates:
            ci, cj = grid.cell_of(site)
            cand = grid.points_near(int(ci), int(cj))
            if len(cand) == 0:
                continue
            d = np.linalg.norm(pos[cand] - site, axis=1)
            near = int(cand[np.argmin(d)])
            if d.min() <= params.r_max * cloud.h[near]:
                continue
            if new_pts:
                dn = np.linalg.norm(np.asarray(new_pts) - site, axis=1)
                if dn.min() <= params.r_max * cloud.h[near]:
                    continue
            h_site = float(cloud.h[near])
            donors = cand[d <= h_site]
            if len(donors) < MIN_SUPPORT:
                report.skipped_insertions += 1
                continue
            if inside is None:
                ang = np.sort(np.arctan2(*(pos[donors] - site).T[::-1]))
                gaps = np.diff(np.append(ang, ang[0] + 2 * np.pi))
                if gaps.max() > np.deg2rad(100.0):
                    continue
            vel, vel_prev, p, h_new = _shepard_values(cloud, site, donors,
                                                      alpha, h_site)
            new_pts.append(site)
            new_vel.append(vel)
            new_vel_prev.append(vel_prev)
            new_p.append(p)
            new_h.append(h_new)

        if not new_pts:
            break
        m = len(new_pts)
        inserted_all.extend(new_pts)
        cloud = PointCloud(
            positions=np.vstack([cloud.positions, new_pts]),
            velocity=np.vstack([cloud.velocity, new_vel]),
            velocity_prev=np.vstack([cloud.velocity_prev, new_vel_prev]),
            pressure=np.concatenate([cloud.pressure, new_p]),
            kind=np.concatenate([cloud.kind, np.full(m, INTERIOR, dtype=np.int8)]),
            normal=np.vstack([cloud.normal, np.zeros((m, 2))]),
            h=np.concatenate([cloud.h, new_h]),
            volume=np.concatenate([cloud.volume, np.zeros(m)]),
            boundary_weight=np.concatenate([cloud.boundary_weight, np.zeros(m)]),
            active=np.concatenate([cloud.active, np.ones(m, dtype=bool)]),
            divergence=np.concatenate([cloud.divergence, np.zeros(m)]),
            volume_scale=cloud.volume_scale,
        )
    if inserted_all:
        report.inserted = np.asarray(inserted_all)
    return cloud, report


# ------------------------------------------------------------------------
# volumes
# ------------------------------------------------------------------------


def compute_volumes(cloud: PointCloud, table: NeighborTable,
                    known_area: float | None = None, mask=None) -> np.ndarray:
    """Per-point volume model V_i = c * dbar_i^2.

    dbar_i is the mean distance to the ``VOLUME_NEIGHBORS`` nearest
    neighbours.  When ``known_area`` is given, c is calibrated so the masked
    total equals it, and the constant is frozen on the cloud
    (``volume_scale``) so later calls track Lagrangian volume change.
    ``mask`` defaults to the active points.
    """
    pos = cloud.positions
    n = cloud.n
    dbar = np.zeros(n)
    for i in range(n):
        row = table.row(i)
        row = row[row != i]
        if len(row) == 0:
            raise ValueError(f"point {i} is isolated; volume undefined")
        d = np.linalg.norm(pos[row] - pos[i], axis=1)
        if len(d) > VOLUME_NEIGHBORS:
            d = np.partition(d, VOLUME_NEIGHBORS - 1)[:VOLUME_NEIGHBORS]
        dbar[i] = d.mean()
    raw = dbar ** 2
    if mask is None:
        mask = cloud.active
    if known_area is not None:
        total = raw[mask].sum()
        if total <= 0:
            raise ValueError("cannot calibrate volumes: empty mask")
        cloud.volume_scale = float(known_area) / total
    cloud.volume = cloud.volume_scale * raw
    return cloud.volume
