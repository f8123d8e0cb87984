"""Benchmark case definitions.

Three flows exercise the solver schemes:

taylor_green     : decaying vortex array on a periodic-size square with
                   time-dependent Dirichlet data from the exact solution.
bifurcated_tube  : channel with a stretched blunt-nosed splitter island;
                   plug inflow, natural outflow, mass-flux bookkeeping.
sloshing         : shallow liquid layer in a closed tank under a horizontally
                   oscillating body force, with slip walls and a detected
                   free surface.

A case bundles geometry construction, material constants, boundary
conditions by point kind, reference data and the bookkeeping switches the
time loop needs.  All value callables take positions shaped (2,) or (m, 2)
plus the time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .boundary import PressureBC, VelocityBC
from .cloud import (FREE_SURFACE, INFLOW, INTERIOR, OUTFLOW, WALL, PointCloud,
                    build_neighbors, generate_rectangle_cloud, make_cloud)
from .solvers import MaterialParams

GAP_THRESHOLD_DEG = 100.0


@dataclass
class CaseDefinition:
    name: str
    material: MaterialParams
    build: Callable  # (h, jitter=0.0, seed=0) -> PointCloud
    velocity_bcs: dict
    pressure_bcs: dict
    t_end: float
    c_dt: float
    u_ref: float
    known_area: float
    reynolds: float = 0.0
    analytic_velocity: Callable | None = None
    analytic_pressure: Callable | None = None
    inside: Callable | None = None  # (positions) -> bool mask
    project_inside: Callable | None = None  # (positions) -> positions
    exit_policy: str = "delete"  # or "project"
    has_free_surface: bool = False
    volume_on_fluid: bool = False
    p0: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.exit_policy not in ("delete", "project"):
            raise ValueError("exit_policy must be 'delete' or 'project'")


# ------------------------------------------------------------------------
# vortex decay on [0, 2 pi]^2
# ------------------------------------------------------------------------


def taylor_green_case(re=2.0 * math.pi, t_end=1.0, c_dt=0.005) -> CaseDefinition:
    side = 2.0 * math.pi
    rho = 1.0
    u0 = 1.0
    eta = rho * u0 * side / re
    nu = eta / rho

    def velocity(pos, t):
        pos = np.atleast_2d(pos)
        x, y = pos[:, 0], pos[:, 1]
        amp = u0 * math.exp(-2.0 * nu * t)
        return np.column_stack([np.sin(x) * np.cos(y) * amp,
                                -np.cos(x) * np.sin(y) * amp])

    def pressure(pos, t):
        pos = np.atleast_2d(pos)
        x, y = pos[:, 0], pos[:, 1]
        amp = rho * u0 * u0 * math.exp(-4.0 * nu * t) / 4.0
        return amp * (np.cos(2.0 * x) + np.cos(2.0 * y))

    def bc_velocity(x, t):
        return velocity(x, t)[0]

    def bc_pressure(x, t):
        return pressure(x, t)[0]

    def build(h, jitter=0.0, seed=0):
        cloud = generate_rectangle_cloud((side, side), h, jitter=jitter,
                                         seed=seed, kind_boundary=WALL)
        cloud.velocity[:] = velocity(cloud.positions, 0.0)
        cloud.velocity_prev[:] = cloud.velocity
        cloud.pressure[:] = pressure(cloud.positions, 0.0)
        return cloud

    def inside(pos):
        pos = np.atleast_2d(pos)
        tol = 1.0e-12
        return ((pos[:, 0] >= -tol) & (pos[:, 0] <= side + tol)
                & (pos[:, 1] >= -tol) & (pos[:, 1] <= side + tol))

    return CaseDefinition(
        name="taylor_green",
        material=MaterialParams(rho=rho, eta=eta),
        build=build,
        velocity_bcs={WALL: VelocityBC("dirichlet", bc_velocity)},
        pressure_bcs={WALL: PressureBC("dirichlet", bc_pressure)},
        t_end=t_end,
        c_dt=c_dt,
        u_ref=u0,
        known_area=side * side,
        reynolds=re,
        analytic_velocity=velocity,
        analytic_pressure=pressure,
        inside=inside,
        exit_policy="delete",
    )


# ------------------------------------------------------------------------
# bifurcated tube
# ------------------------------------------------------------------------


# the splitter noses are truncated flat: a sharp tip would bring the two
# ramp walls within one support radius of each other, coupling stencils
# straight through the solid and poisoning the pressure system with
# near-dependent boundary rows.  A 0.55 face keeps every wall pair at
# least 1.05 h apart through the material at the design resolution h = 0.5.
NOSE_HALF = 0.275


def _hex_vertices(length: float) -> np.ndarray:
    x0, x1 = length / 3.0, 2.0 * length / 3.0
    return np.array([(x0, NOSE_HALF), (x0 + 2.0, 1.0), (x1 - 2.0, 1.0),
                     (x1, NOSE_HALF), (x1, -NOSE_HALF), (x1 - 2.0, -1.0),
                     (x0 + 2.0, -1.0), (x0, -NOSE_HALF)])


def _hex_halfwidth(x: np.ndarray, length: float) -> np.ndarray:
    x0, x1 = length / 3.0, 2.0 * length / 3.0
    ramp = (1.0 - NOSE_HALF) / 2.0
    w = np.minimum(1.0, NOSE_HALF + ramp * np.minimum(x - x0, x1 - x))
    return np.where((x >= x0) & (x <= x1), w, -np.inf)


def _segment_distance(pts: np.ndarray, segs: np.ndarray) -> np.ndarray:
    """Min distance of each point to a set of segments (m, 2, 2)."""
    a = segs[:, 0]
    d = segs[:, 1] - a
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip((rel * d).sum(-1) / (d * d).sum(-1), 0.0, 1.0)
    proj = a + t[..., None] * d
    return np.linalg.norm(pts[:, None, :] - proj, axis=-1).min(axis=1)


def _sample_loop(vertices, kinds, pitch):
    """Sample a closed polygon loop: edge-interior points carry the edge kind
    and outward normal (right of travel); vertices become wall points with
    bisector normals.  Returns (positions, kind, normal, edge_pitch per pt)."""
    verts = np.asarray(vertices, dtype=float)
    nv = len(verts)
    pos, knd, nrm, wid = [], [], [], []
    edge_normals = []
    for k in range(nv):
        a, b = verts[k], verts[(k + 1) % nv]
        d = b - a
        length = float(np.hypot(*d))
        n = np.array([d[1], -d[0]]) / length
        edge_normals.append(n)
        m = max(1, round(length / pitch))
        step = length / m
        for j in range(1, m):
            pos.append(a + d * (j / m))
            knd.append(kinds[k])
            nrm.append(n)
            wid.append(step)
    for k in range(nv):
        n_prev = edge_normals[k - 1]
        n_here = edge_normals[k]
        bis = n_prev + n_here
        norm = np.hypot(*bis)
        bis = n_here if norm < 1.0e-12 else bis / norm
        pos.append(verts[k])
        knd.append(WALL)
        nrm.append(bis)
        wid.append(0.0)
    return (np.array(pos), np.array(knd, dtype=np.int8), np.array(nrm),
            np.array(wid))


def bifurcated_tube_case(length=60.0, t_end=1.0, c_dt=0.05) -> CaseDefinition:
    if length < 12.0:
        raise ValueError("tube length must be >= 12 to fit the splitter")
    half = 2.0
    u_in = 2.0
    rho, eta = 1.0e3, 2.0
    hexv = _hex_vertices(length)
    hex_segs = np.stack([hexv, np.roll(hexv, -1, axis=0)], axis=1)
    island = 2.0 * length / 3.0 - 4.0 + 4.0 * NOSE_HALF
    area = length * 2.0 * half - island

    def in_hex(pos):
        pos = np.atleast_2d(pos)
        return np.abs(pos[:, 1]) < _hex_halfwidth(pos[:, 0], length) - 1.0e-12

    def inside(pos):
        pos = np.atleast_2d(pos)
        tol = 1.0e-12
        x, y = pos[:, 0], pos[:, 1]
        in_rect = ((x >= -tol) & (x <= length + tol)
                   & (y >= -half - tol) & (y <= half + tol))
        return in_rect & ~in_hex(pos)

    def build(h, jitter=0.0, seed=0):
        s = 0.4 * h
        nx = max(3, round(length / s))
        ny = max(3, round(2.0 * half / s))
        px, py = length / nx, 2.0 * half / ny
        xs = np.arange(1, nx) * px
        ys = -half + np.arange(1, ny) * py
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        if jitter > 0.0:
            rng = np.random.default_rng(seed)
            ang = rng.uniform(0.0, 2.0 * np.pi, len(pts))
            rad = rng.uniform(0.0, jitter * min(px, py), len(pts))
            pts = pts + np.column_stack([rad * np.cos(ang),
                                         rad * np.sin(ang)])
        # keep one full pitch of clearance so the standoff rule leaves the
        # initial ring around the island alone; the tiny slack keeps lattice
        # rows that land exactly on the margin from being culled by roundoff
        margin = 0.4 * h - 1.0e-9
        keep = (~in_hex(pts)) & (_segment_distance(pts, hex_segs) >= margin)
        pts = pts[keep]

        outer = np.array([(0.0, -half), (length, -half), (length, half),
                          (0.0, half)])
        okinds = [WALL, OUTFLOW, WALL, INFLOW]
        bpos, bknd, bnrm, bwid = _sample_loop(outer, okinds, s)
        hpos, hknd, hnrm, hwid = _sample_loop(hexv, [WALL] * len(hexv), s)

        positions = np.vstack([pts, bpos, hpos])
        kind = np.concatenate([np.zeros(len(pts), dtype=np.int8), bknd, hknd])
        normal = np.vstack([np.zeros((len(pts), 2)), bnrm, hnrm])
        weight = np.concatenate([np.zeros(len(pts)), bwid, hwid])
        weight[(kind != INFLOW) & (kind != OUTFLOW)] = 0.0
        cloud = make_cloud(positions, kind, normal=normal, h=h,
                           boundary_weight=weight)
        # start from the plug profile rather than rest: a constant field is
        # exactly divergence-free on the stencils, so the first step sees no
        # impulsive pressure and the CFL clock starts at the real flow speed
        cloud.velocity[:, 0] = np.where(kind == WALL, 0.0, u_in)
        cloud.velocity_prev[:] = cloud.velocity
        return cloud

    def bc_inflow(x, t):
        return np.array([u_in, 0.0])

    def zero_v(x, t):
        return np.array([0.0, 0.0])

    def zero_p(x, t):
        return 0.0

    return CaseDefinition(
        name="bifurcated_tube",
        material=MaterialParams(rho=rho, eta=eta),
        build=build,
        velocity_bcs={WALL: VelocityBC("dirichlet", zero_v),
                      INFLOW: VelocityBC("dirichlet", bc_inflow),
                      OUTFLOW: VelocityBC("neumann_zero")},
        pressure_bcs={WALL: PressureBC("neumann"),
                      INFLOW: PressureBC("neumann"),
                      OUTFLOW: PressureBC("dirichlet", zero_p)},
        t_end=t_end,
        c_dt=c_dt,
        u_ref=u_in,
        known_area=area,
        reynolds=rho * u_in * 2.0 * half / eta,
        inside=inside,
        exit_policy="delete",
        extra={"length": length},
    )


# ------------------------------------------------------------------------
# sloshing tank
# ------------------------------------------------------------------------


def sloshing_case(t_end=3.0, c_dt=0.3) -> CaseDefinition:
    width, height = 1.2, 0.6
    depth = 0.12
    rho, eta = 1.0e3, 0.1

    def g(t):
        return (2.0 * math.cos(10.0 * t), -10.0)

    material = MaterialParams(rho=rho, eta=eta, g=g)

    def build(h, jitter=0.0, seed=0):
        s = 0.4 * h
        nx = max(3, round(width / s))
        px = width / nx
        ny = max(1, round(depth / px))
        nwall = max(1, round(height / px))
        xs = np.arange(1, nx) * px
        ys = np.arange(1, ny + 1) * px
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        if jitter > 0.0:
            rng = np.random.default_rng(seed)
            ang = rng.uniform(0.0, 2.0 * np.pi, len(pts))
            rad = rng.uniform(0.0, jitter * px, len(pts))
            # keep the detected surface row flat; jitter only submerged rows
            sub = pts[:, 1] < ys[-1] - 0.5 * px
            off = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
            pts[sub] += off[sub]

        bx = np.arange(0, nx + 1) * px
        bottom = np.column_stack([bx, np.zeros_like(bx)])
        wy = np.arange(1, nwall + 1) * px
        left = np.column_stack([np.zeros_like(wy), wy])
        right = np.column_stack([np.full_like(wy, width), wy])
        nb, nl = len(bottom), len(left)
        bnorm = np.tile([0.0, -1.0], (nb, 1))
        bnorm[0] = (-1.0, -1.0)
        bnorm[-1] = (1.0, -1.0)
        bnorm /= np.linalg.norm(bnorm, axis=1, keepdims=True)
        lnorm = np.tile([-1.0, 0.0], (nl, 1))
        rnorm = np.tile([1.0, 0.0], (nl, 1))

        positions = np.vstack([pts, bottom, left, right])
        kind = np.concatenate([np.zeros(len(pts), dtype=np.int8),
                               np.full(nb + 2 * nl, WALL, dtype=np.int8)])
        normal = np.vstack([np.zeros((len(pts), 2)), bnorm, lnorm, rnorm])
        cloud = make_cloud(positions, kind, normal=normal, h=h)
        surf = depth
        wet = np.maximum(0.0, surf - cloud.positions[:, 1])
        cloud.pressure[:] = rho * 10.0 * wet
        table = build_neighbors(cloud)
        detect_free_surface(cloud, table)
        update_active(cloud, table)
        return cloud

    def project_inside(pos):
        out = np.array(pos, dtype=float)
        out[:, 0] = np.clip(out[:, 0], 0.0, width)
        out[:, 1] = np.clip(out[:, 1], 0.0, height)
        return out

    def wall_dpdn(x, t, n):
        gx, gy = g(t)
        return rho * (gx * n[0] + gy * n[1])

    return CaseDefinition(
        name="sloshing",
        material=material,
        build=build,
        velocity_bcs={WALL: VelocityBC("slip"),
                      FREE_SURFACE: VelocityBC("free_surface")},
        pressure_bcs={WALL: PressureBC("neumann", wall_dpdn),
                      FREE_SURFACE: PressureBC("free_surface")},
        t_end=t_end,
        c_dt=c_dt,
        u_ref=1.0,
        known_area=width * depth,
        reynolds=rho * 1.0 * width / eta,
        project_inside=project_inside,
        exit_policy="project",
        has_free_surface=True,
        volume_on_fluid=True,
        extra={"width": width, "height": height, "depth": depth},
    )


# ------------------------------------------------------------------------
# free-surface detection and wetting
# ------------------------------------------------------------------------


def detect_free_surface(cloud: PointCloud, table, threshold_deg=GAP_THRESHOLD_DEG):
    """Re-classify fluid points by the largest angular gap between neighbor
    directions; gaps above the threshold mark a free-surface point whose
    normal bisects the gap.  Wall-type kinds are untouched.  Returns ids of
    fluid points with fewer than 3 neighbors (kept, flagged free surface)."""
    thresh = math.radians(threshold_deg)
    defects = []
    fluid_ids = np.flatnonzero(cloud.fluid_mask)
    for i in fluid_ids:
        row = table.row(i)
        row = row[row != i]
        if len(row) < 3:
            defects.append(int(i))
            cloud.kind[i] = FREE_SURFACE
            continue
        rel = cloud.positions[row] - cloud.positions[i]
        ang = np.sort(np.arctan2(rel[:, 1], rel[:, 0]))
        gaps = np.diff(ang, append=ang[0] + 2.0 * np.pi)
        k = int(np.argmax(gaps))
        if gaps[k] > thresh:
            cloud.kind[i] = FREE_SURFACE
            mid = ang[k] + 0.5 * gaps[k]
            cloud.normal[i] = (math.cos(mid), math.sin(mid))
        else:
            cloud.kind[i] = INTERIOR
            cloud.normal[i] = 0.0
    return defects


def update_active(cloud: PointCloud, table, min_fluid_neighbors=3):
    """Wall points far from any fluid are parked: they keep their position
    but contribute no equations and no neighbors until wetted again."""
    fluid = cloud.fluid_mask
    active = np.ones(cloud.n, dtype=bool)
    for i in np.flatnonzero(~fluid):
        row = table.row(i)
        active[i] = int(fluid[row].sum()) >= min_fluid_neighbors
    cloud.active = active
    return active


CASES = {
    "taylor_green": taylor_green_case,
    "bifurcated_tube": bifurcated_tube_case,
    "sloshing": sloshing_case,
}


def make_case(name: str, **kwargs) -> CaseDefinition:
    if name not in CASES:
        raise KeyError(f"unknown case {name!r}; have {sorted(CASES)}")
    return CASES[name](**kwargs)
