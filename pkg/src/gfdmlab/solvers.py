"""One time step of the three pressure-velocity coupling schemes.

All schemes advance velocity and pressure over one step of size dt on a
frozen point configuration, using the classical derivative stencils for
explicit terms.  They differ in how incompressibility is imposed:

projection   : implicit intermediate velocity, then a pressure-correction
               Poisson solve, then a velocity update at interior points.
penalty      : one monolithic system; the mass balance is regularized by a
               penalty pressure term, and boundary rows replace the momentum
               and mass rows at boundary points.
coupled_new  : one monolithic system assembled from over-determined local
               least-squares stencils in which momentum, mass and a
               pressure-Poisson condition are satisfied simultaneously.

Every scheme solves for the pressure correction against a guess p*; with the
default policy p* is the previous pressure field, so the correction vanishes
on steady states.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import boundary as bnd
from .cloud import INTERIOR, NeighborTable, PointCloud
from .operators import OperatorSet, WeightConfig, apply_operator
from .sparselin import SolveStats, assemble, bicgstab, bicgstab_l
from .tiwari import (TiwariConfig, coupled_stencil_batch, interior_pde_rhs,
                     interior_pde_rows)


@dataclass
class MaterialParams:
    """Fluid constants and a (spatially constant) body acceleration g(t)."""

    rho: float
    eta: float
    g: Callable[[float], tuple] = lambda t: (0.0, 0.0)


@dataclass
class SolverConfig:
    scheme: str = "coupled_new"
    penalty_a: float = 0.1
    pressure_guess: str = "previous"  # or "zero"
    lin_tol: float = 1.0e-9
    lin_maxiter: int | None = None
    tiwari: TiwariConfig = field(default_factory=TiwariConfig)

    def __post_init__(self):
        if self.scheme not in ("projection", "penalty", "coupled_new"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not 0.0 < self.penalty_a <= 0.3:
            raise ValueError("penalty_a must lie in (0, 0.3]")
        if self.pressure_guess not in ("previous", "zero"):
            raise ValueError("pressure_guess must be 'previous' or 'zero'")

    @property
    def weights(self) -> WeightConfig:
        return self.tiwari.weights


@dataclass
class StepReport:
    dt: float
    t_new: float
    solves: list
    flags: list = field(default_factory=list)

    @property
    def iterations(self) -> list:
        return [s.iterations for s in self.solves]


class SolverFailure(RuntimeError):
    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


def _solve(mat, rhs, x0, cfg: SolverConfig, label: str) -> tuple:
    # write every equation with a non-negative diagonal (a Laplacian row and
    # its negative state the same equation).  With mixed row signs the
    # spectrum straddles the origin and BiCGSTAB breaks down on the larger
    # pressure systems; the flip is exact in floating point.
    sgn = np.where(mat.diagonal() < 0.0, -1.0, 1.0)
    if np.any(sgn < 0.0):
        mat = sp.diags(sgn) @ mat
        rhs = sgn * rhs
    x, stats = bicgstab(mat, rhs, x0=x0, tol=cfg.lin_tol,
                        max_iter=cfg.lin_maxiter)
    if stats.breakdown or not stats.converged:
        # the degree-1 stabilization polynomial cannot damp strongly complex
        # spectra; escalate to the degree-2 variant before giving up
        x, stats = bicgstab_l(mat, rhs, x0=x0, tol=cfg.lin_tol,
                              max_iter=cfg.lin_maxiter, l=2)
    if stats.breakdown or not stats.converged:
        raise SolverFailure(f"{label} solve failed: {stats.reason} "
                            f"(residual {stats.residual:.3e})", stats)
    return x, stats


def _bc_context(cloud, opset, dt, t_new, material, p_star, stress_nn=None,
                p0=0.0) -> bnd.BCContext:
    gpx = apply_operator(opset, p_star, "x")
    gpy = apply_operator(opset, p_star, "y")
    gx, gy = material.g(t_new)
    kp = dt / material.rho
    r1 = cloud.velocity[:, 0] - kp * gpx + dt * gx
    r2 = cloud.velocity[:, 1] - kp * gpy + dt * gy
    dpdn = cloud.normal[:, 0] * gpx + cloud.normal[:, 1] * gpy
    return bnd.BCContext(material=material, dt=dt, t_new=t_new, p_star=p_star,
                         dpdn_star=dpdn, r1=r1, r2=r2, stress_nn=stress_nn,
                         p0=p0)


def _expand_bcrow(row: bnd.BCRow, i: int, opset: OperatorSet, offsets: dict,
                  row_index: int, rows, cols, vals):
    """Scatter a symbolic BC row into global triplets via the stencils."""
    for fieldname, deriv, coeff in row.terms:
        if fieldname not in offsets:
            raise ValueError(
                f"BC row touches field {fieldname!r} absent from this system")
        off = offsets[fieldname]
        if deriv == "id":
            rows.append(row_index)
            cols.append(off + i)
            vals.append(coeff)
        else:
            nbrs = opset.row_indices(i)
            c = opset.coefficients(deriv, i)
            rows.extend([row_index] * (len(nbrs) + 1))
            cols.extend(off + nbrs)
            cols.append(off + i)
            vals.extend(coeff * c)
            vals.append(-coeff * c.sum())


def _interior_block_triplets(opset, interior_ids, factor, which, offset_row,
                             offset_col, rows, cols, vals):
    """factor * difference-form operator rows for the given points."""
    mat = opset.matrix(which)
    for i in interior_ids:
        lo, hi = mat.indptr[i], mat.indptr[i + 1]
        nbrs = mat.indices[lo:hi]
        rows.extend([offset_row + i] * (hi - lo))
        cols.extend(offset_col + nbrs)
        vals.extend(factor * mat.data[lo:hi])


def _needs_stencil(row: bnd.BCRow) -> bool:
    return any(deriv != "id" for _, deriv, _ in row.terms)


def _anchor_triplets(i, cloud, table, alpha, row_index, col_offset,
                     rows, cols, vals):
    """Shepard tether replacing an equation whose stencil build failed.

    A degenerate support has no usable derivative stencil, so any PDE or
    derivative BC row at that point would be identically zero and the global
    matrix singular.  Tying the unknown to the weighted mean over the support
    keeps the system regular for the step it takes cloud management to heal
    the neighborhood; the tethered value is first-order accurate for smooth
    fields, which is enough for a transient handful of points.
    """
    nbrs = table.row(i)
    nbrs = nbrs[nbrs != i]
    rows.append(row_index)
    cols.append(col_offset + i)
    vals.append(1.0)
    if len(nbrs) == 0:
        return
    d = cloud.positions[nbrs] - cloud.positions[i]
    w = np.exp(-alpha * (d[:, 0] ** 2 + d[:, 1] ** 2) / cloud.h[i] ** 2)
    w /= w.sum()
    rows.extend([row_index] * len(nbrs))
    cols.extend(col_offset + nbrs)
    vals.extend(-w)


def _gauge_point(cloud, case) -> int | None:
    """Dirichlet pin for the pressure when a case is all-Neumann."""
    kinds = {int(k) for k in np.unique(cloud.kind) if k != INTERIOR}
    all_neumann = all(case.pressure_bcs[k].kind == "neumann" for k in kinds)
    if not all_neumann:
        return None
    return int(np.flatnonzero(cloud.boundary_mask)[0])


def projection_step(cloud: PointCloud, table: NeighborTable, opset: OperatorSet,
                    dt: float, t: float, material: MaterialParams, case,
                    cfg: SolverConfig):
    """Pressure-correction (projection) step; returns (v_new, p_new, report)."""
    n = cloud.n
    t_new = t + dt
    u = cloud.velocity[:, 0]
    v = cloud.velocity[:, 1]
    p_star = cloud.pressure.copy() if cfg.pressure_guess == "previous" \
        else np.zeros(n)
    k_visc = material.eta * dt / material.rho
    ctx = _bc_context(cloud, opset, dt, t_new, material, p_star, p0=case.p0)

    interior_ids = np.flatnonzero(cloud.interior_mask)
    boundary_ids = np.flatnonzero(cloud.boundary_mask)
    defects = set(int(k) for k in opset.defect_ids)
    alpha = cfg.weights.alpha

    # --- intermediate velocity system over (u*, v*) -----------------------
    rows, cols, vals = [], [], []
    rhs = np.zeros(2 * n)
    offsets = {"u": 0, "v": n}
    for comp, off in ((0, 0), (1, n)):
        for i in interior_ids:
            rows.append(off + i)
            cols.append(off + i)
            vals.append(1.0)
        _interior_block_triplets(opset, interior_ids, -k_visc, "lap", off, off,
                                 rows, cols, vals)
    rhs[interior_ids] = ctx.r1[interior_ids]
    rhs[n + interior_ids] = ctx.r2[interior_ids]
    for i in boundary_ids:
        vbc = case.velocity_bcs[int(cloud.kind[i])]
        vrows = bnd.velocity_rows(i, cloud, vbc, ctx, family="projection")
        for row in vrows:
            ridx = offsets[row.slot] + i
            if i in defects and _needs_stencil(row):
                _anchor_triplets(i, cloud, table, alpha, ridx,
                                 offsets[row.slot], rows, cols, vals)
                rhs[ridx] = 0.0
                continue
            _expand_bcrow(row, i, opset, offsets, ridx, rows, cols, vals)
            rhs[ridx] = row.rhs
    mat = assemble(rows, cols, vals, (2 * n, 2 * n))
    x0 = np.concatenate([u, v])
    x, stats1 = _solve(mat, rhs, x0, cfg, "intermediate velocity")
    u_star, v_star = x[:n], x[n:]

    # --- pressure-correction Poisson system ------------------------------
    div_star = apply_operator(opset, u_star, "x") + apply_operator(
        opset, v_star, "y")
    stress_nn = None
    if any(case.pressure_bcs[int(k)].kind == "free_surface"
           for k in np.unique(cloud.kind[boundary_ids])):
        ux = apply_operator(opset, u_star, "x")
        uy = apply_operator(opset, u_star, "y")
        vx = apply_operator(opset, v_star, "x")
        vy = apply_operator(opset, v_star, "y")
        nx, ny = cloud.normal[:, 0], cloud.normal[:, 1]
        stress_nn = 2.0 * material.eta * (ux * nx * nx + (uy + vx) * nx * ny
                                          + vy * ny * ny)
    ctx.stress_nn = stress_nn

    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    _interior_block_triplets(opset, interior_ids, 1.0, "lap", 0, 0,
                             rows, cols, vals)
    rhs[interior_ids] = (material.rho / dt) * div_star[interior_ids]
    for i in defects:
        if cloud.interior_mask[i]:
            _anchor_triplets(i, cloud, table, alpha, i, 0, rows, cols, vals)
            rhs[i] = 0.0
    gauge = _gauge_point(cloud, case)
    for i in boundary_ids:
        if gauge is not None and i == gauge:
            rows.append(i)
            cols.append(i)
            vals.append(1.0)
            rhs[i] = 0.0
            continue
        pbc = case.pressure_bcs[int(cloud.kind[i])]
        row = bnd.pressure_row(i, cloud, pbc, ctx, family="projection")
        if i in defects and _needs_stencil(row):
            _anchor_triplets(i, cloud, table, alpha, i, 0, rows, cols, vals)
            rhs[i] = 0.0
            continue
        _expand_bcrow(row, i, opset, {"p": 0}, i, rows, cols, vals)
        rhs[i] = row.rhs
    mat = assemble(rows, cols, vals, (n, n))
    p_corr, stats2 = _solve(mat, rhs, np.zeros(n), cfg, "pressure correction")

    # --- velocity update and new pressure --------------------------------
    v_new = np.column_stack([u_star, v_star])
    corr_mask = cloud.fluid_mask & cloud.interior_mask
    gcx = apply_operator(opset, p_corr, "x")
    gcy = apply_operator(opset, p_corr, "y")
    kp = dt / material.rho
    v_new[corr_mask, 0] -= kp * gcx[corr_mask]
    v_new[corr_mask, 1] -= kp * gcy[corr_mask]
    p_new = p_star + p_corr
    report = StepReport(dt=dt, t_new=t_new, solves=[stats1, stats2])
    return v_new, p_new, report


def penalty_step(cloud: PointCloud, table: NeighborTable, opset: OperatorSet,
                 dt: float, t: float, material: MaterialParams, case,
                 cfg: SolverConfig):
    """Penalty-coupled step: one 3N x 3N solve for (u, v, p_corr)."""
    n = cloud.n
    t_new = t + dt
    p_star = cloud.pressure.copy() if cfg.pressure_guess == "previous" \
        else np.zeros(n)
    k_visc = material.eta * dt / material.rho
    kp = dt / material.rho
    ctx = _bc_context(cloud, opset, dt, t_new, material, p_star, p0=case.p0)

    interior_ids = np.flatnonzero(cloud.interior_mask)
    boundary_ids = np.flatnonzero(cloud.boundary_mask)
    defects = set(int(k) for k in opset.defect_ids)
    alpha = cfg.weights.alpha
    offsets = {"u": 0, "v": n, "p": 2 * n}

    rows, cols, vals = [], [], []
    rhs = np.zeros(3 * n)
    for off in (0, n):
        for i in interior_ids:
            rows.append(off + i)
            cols.append(off + i)
            vals.append(1.0)
        _interior_block_triplets(opset, interior_ids, -k_visc, "lap", off, off,
                                 rows, cols, vals)
    _interior_block_triplets(opset, interior_ids, kp, "x", 0, 2 * n,
                             rows, cols, vals)
    _interior_block_triplets(opset, interior_ids, kp, "y", n, 2 * n,
                             rows, cols, vals)
    # mass rows with the penalty pressure term
    _interior_block_triplets(opset, interior_ids, 1.0, "x", 2 * n, 0,
                             rows, cols, vals)
    _interior_block_triplets(opset, interior_ids, 1.0, "y", 2 * n, n,
                             rows, cols, vals)
    _interior_block_triplets(opset, interior_ids, -cfg.penalty_a * kp, "lap",
                             2 * n, 2 * n, rows, cols, vals)
    rhs[interior_ids] = ctx.r1[interior_ids]
    rhs[n + interior_ids] = ctx.r2[interior_ids]
    for i in defects:
        # the momentum rows degrade to the identity on their own; the mass
        # row would be identically zero, so tether the pressure unknown
        if cloud.interior_mask[i]:
            _anchor_triplets(i, cloud, table, alpha, 2 * n + i, 2 * n,
                             rows, cols, vals)

    stress_needed = any(case.pressure_bcs[int(k)].kind == "free_surface"
                        for k in np.unique(cloud.kind[boundary_ids]))
    if stress_needed:
        ctx.stress_nn = np.zeros(n)  # penalty keeps stress terms implicit

    gauge = _gauge_point(cloud, case)
    for i in boundary_ids:
        vbc = case.velocity_bcs[int(cloud.kind[i])]
        for row in bnd.velocity_rows(i, cloud, vbc, ctx, family="penalty"):
            ridx = offsets[row.slot] + i
            if i in defects and _needs_stencil(row):
                _anchor_triplets(i, cloud, table, alpha, ridx,
                                 offsets[row.slot], rows, cols, vals)
                rhs[ridx] = 0.0
                continue
            _expand_bcrow(row, i, opset, offsets, ridx, rows, cols, vals)
            rhs[ridx] = row.rhs
        if gauge is not None and i == gauge:
            rows.append(2 * n + i)
            cols.append(2 * n + i)
            vals.append(1.0)
            rhs[2 * n + i] = 0.0
            continue
        pbc = case.pressure_bcs[int(cloud.kind[i])]
        row = bnd.pressure_row(i, cloud, pbc, ctx, family="penalty")
        if i in defects and _needs_stencil(row):
            _anchor_triplets(i, cloud, table, alpha, 2 * n + i, 2 * n,
                             rows, cols, vals)
            rhs[2 * n + i] = 0.0
            continue
        _expand_bcrow(row, i, opset, offsets, 2 * n + i, rows, cols, vals)
        rhs[2 * n + i] = row.rhs

    mat = assemble(rows, cols, vals, (3 * n, 3 * n))
    x0 = np.concatenate([cloud.velocity[:, 0], cloud.velocity[:, 1],
                         np.zeros(n)])
    x, stats = _solve(mat, rhs, x0, cfg, "penalty coupled")
    v_new = np.column_stack([x[:n], x[n:2 * n]])
    p_new = p_star + x[2 * n:]
    report = StepReport(dt=dt, t_new=t_new, solves=[stats])
    return v_new, p_new, report


def coupled_new_step(cloud: PointCloud, table: NeighborTable,
                     opset: OperatorSet, dt: float, t: float,
                     material: MaterialParams, case, cfg: SolverConfig):
    """Over-determined coupled step; returns (v_new, p_new, report).

    Per point, the local least-squares system stacks the Taylor rows of u, v
    and the pressure correction with weighted PDE rows (or mass + BC rows on
    the boundary); the extracted function stencils assemble one diagonally
    dominant 3N x 3N system.
    """
    n = cloud.n
    t_new = t + dt
    u = cloud.velocity[:, 0]
    v = cloud.velocity[:, 1]
    p_star = cloud.pressure.copy() if cfg.pressure_guess == "previous" \
        else np.zeros(n)
    ctx = _bc_context(cloud, opset, dt, t_new, material, p_star, p0=case.p0)

    ux = apply_operator(opset, u, "x")
    uy = apply_operator(opset, u, "y")
    vx = apply_operator(opset, v, "x")
    vy = apply_operator(opset, v, "y")
    divv = ux + vy
    lap_pstar = apply_operator(opset, p_star, "lap")
    gpx = apply_operator(opset, p_star, "x")
    gpy = apply_operator(opset, p_star, "y")

    counts = table.counts()
    interior = cloud.interior_mask
    defects = set(int(k) for k in opset.defect_ids)
    healthy = np.ones(n, dtype=bool)
    if defects:
        healthy[list(defects)] = False
    offsets = {"u": 0, "v": n, "p": 2 * n}
    rows_l, cols_l, vals_l = [], [], []
    rhs = np.zeros(3 * n)

    def scatter(ids, idx, alpha, beta, gamma, rhs_vals):
        # global rows: (1 - s_ii) f_i - sum_{j != i} s_ij f_j = zeta . r
        b, m = idx.shape
        for r_out, off_r in ((0, 0), (1, n), (2, 2 * n)):
            su = alpha[:, r_out, :]
            sv = beta[:, r_out, :]
            sp = gamma[:, r_out, :]
            for arr, off_c in ((su, 0), (sv, n), (sp, 2 * n)):
                rows_l.append(np.repeat(off_r + ids, m))
                cols_l.append((off_c + idx).ravel())
                vals_l.append((-arr).ravel())
            rows_l.append(off_r + ids)
            cols_l.append(off_r + ids)
            vals_l.append(np.ones(b))
            rhs[off_r + ids] = rhs_vals[:, r_out]

    # interior points, batched by support size
    for m in np.unique(counts[interior & healthy]):
        ids = np.flatnonzero(interior & healthy & (counts == m))
        idx = table.indices[table.indptr[ids, None] + np.arange(m)]
        pde = interior_pde_rows(material, dt, ux[ids], uy[ids], vx[ids],
                                vy[ids])
        alpha, beta, gamma, zeta = coupled_stencil_batch(
            cloud.positions, cloud.h, idx, ids, pde, cfg.tiwari)
        r_loc = interior_pde_rhs(material, dt, t_new, u[ids], v[ids],
                                 gpx[ids], gpy[ids], divv[ids],
                                 lap_pstar[ids])
        rhs_vals = np.einsum("brk,bk->br", zeta, r_loc)
        scatter(ids, idx, alpha, beta, gamma, rhs_vals)

    # boundary points, one by one (rows vary with the BCs)
    for i in np.flatnonzero(cloud.boundary_mask):
        if i in defects:
            continue
        vbc = case.velocity_bcs[int(cloud.kind[i])]
        pbc = case.pressure_bcs[int(cloud.kind[i])]
        loc_rows, loc_rhs = bnd.coupled_boundary_rows(i, cloud, vbc, pbc, ctx)
        idx = table.row(i)[None, :]
        alpha, beta, gamma, zeta = coupled_stencil_batch(
            cloud.positions, cloud.h, idx, np.array([i]),
            loc_rows[None, :, :], cfg.tiwari)
        rhs_vals = np.einsum("brk,bk->br", zeta, loc_rhs[None, :])
        scatter(np.array([i]), idx, alpha, beta, gamma, rhs_vals)

    if defects:
        # degenerate supports bypass the local least squares entirely:
        # id-only BC rows scatter directly, everything else is tethered
        ra, ca, va = [], [], []
        aw = cfg.weights.alpha
        for i in sorted(defects):
            if cloud.boundary_mask[i]:
                vbc = case.velocity_bcs[int(cloud.kind[i])]
                for row in bnd.velocity_rows(i, cloud, vbc, ctx,
                                             family="penalty"):
                    ridx = offsets[row.slot] + i
                    if _needs_stencil(row):
                        _anchor_triplets(i, cloud, table, aw, ridx,
                                         offsets[row.slot], ra, ca, va)
                        rhs[ridx] = 0.0
                    else:
                        _expand_bcrow(row, i, opset, offsets, ridx, ra, ca, va)
                        rhs[ridx] = row.rhs
                pbc = case.pressure_bcs[int(cloud.kind[i])]
                row = bnd.pressure_row(i, cloud, pbc, ctx, family="penalty")
                if _needs_stencil(row):
                    _anchor_triplets(i, cloud, table, aw, 2 * n + i, 2 * n,
                                     ra, ca, va)
                    rhs[2 * n + i] = 0.0
                else:
                    _expand_bcrow(row, i, opset, offsets, 2 * n + i,
                                  ra, ca, va)
                    rhs[2 * n + i] = row.rhs
            else:
                for off in (0, n, 2 * n):
                    _anchor_triplets(i, cloud, table, aw, off + i, off,
                                     ra, ca, va)
                    rhs[off + i] = 0.0
        rows_l.append(np.asarray(ra, dtype=np.int64))
        cols_l.append(np.asarray(ca, dtype=np.int64))
        vals_l.append(np.asarray(va, dtype=float))

    rows_all = np.concatenate(rows_l)
    cols_all = np.concatenate(cols_l)
    vals_all = np.concatenate(vals_l)
    mat = assemble(rows_all, cols_all, vals_all, (3 * n, 3 * n))
    x0 = np.concatenate([u, v, np.zeros(n)])
    x, stats = _solve(mat, rhs, x0, cfg, "coupled")
    v_new = np.column_stack([x[:n], x[n:2 * n]])
    p_new = p_star + x[2 * n:]
    report = StepReport(dt=dt, t_new=t_new, solves=[stats])
    return v_new, p_new, report


STEPPERS = {
    "projection": projection_step,
    "penalty": penalty_step,
    "coupled_new": coupled_new_step,
}


def advance(cloud, table, opset, dt, t, material, case, cfg: SolverConfig):
    return STEPPERS[cfg.scheme](cloud, table, opset, dt, t, material, case, cfg)
