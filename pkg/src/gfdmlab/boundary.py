"""Boundary-condition rows for the three solver families.

Every boundary point contributes exactly two velocity rows and one pressure
row.  Row-replacement schemes (projection, penalty-coupled) overwrite matrix
rows with them; the over-determined coupled scheme feeds the same conditions,
plus the mass-conservation row, into the point's augmented local system.

A row is expressed as symbolic terms (field, derivative, coefficient) plus a
right-hand side, so one description serves both families: derivatives expand
through classical stencils in the replacement schemes and map onto the local
Taylor unknowns in the coupled scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tiwari import mass_row, term_column


@dataclass
class VelocityBC:
    """kind: 'dirichlet' (value -> (u, v)), 'neumann_zero', 'slip',
    or 'free_surface' (zero tangential traction)."""

    kind: str
    value: Callable | None = None


@dataclass
class PressureBC:
    """kind: 'dirichlet' (value -> p), 'neumann' (value -> target dp/dn for
    the total field; without a value the correction gets a homogeneous slope
    and the total keeps its inherited one), or 'free_surface' (normal
    traction balances p - p0)."""

    kind: str
    value: Callable | None = None


@dataclass
class BCRow:
    """One scalar boundary equation: sum of coeff * deriv(field) = rhs."""

    terms: list
    rhs: float
    slot: str = "u"  # preferred row slot in replacement schemes


@dataclass
class BCContext:
    """Per-step data the row builders need.

    r1, r2 are the interior momentum right-hand sides (known at assembly
    time); dpdn_star is the normal derivative of the pressure guess at
    boundary points; stress_nn is the normal viscous traction of the field
    the pressure Poisson equation is built from (projection only).
    """

    material: object
    dt: float
    t_new: float
    p_star: np.ndarray
    dpdn_star: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    stress_nn: np.ndarray | None = None
    p0: float = 0.0


def _tangent(n):
    return np.array([-n[1], n[0]])


def _tangential_stress_terms(n, t, eta):
    shear = eta * (t[0] * n[1] + t[1] * n[0])
    return [("u", "x", 2.0 * eta * t[0] * n[0]),
            ("u", "y", shear),
            ("v", "x", shear),
            ("v", "y", 2.0 * eta * t[1] * n[1])]


def _normal_stress_terms(n, eta):
    return [("u", "x", 2.0 * eta * n[0] * n[0]),
            ("u", "y", 2.0 * eta * n[0] * n[1]),
            ("v", "x", 2.0 * eta * n[0] * n[1]),
            ("v", "y", 2.0 * eta * n[1] * n[1])]


def _momentum_projection(direction, ctx, i, include_pressure):
    """direction . (momentum rows), as symbolic terms plus rhs."""
    k = ctx.material.eta * ctx.dt / ctx.material.rho
    kp = ctx.dt / ctx.material.rho
    dx, dy = direction
    terms = [("u", "id", dx), ("u", "xx", -k * dx), ("u", "yy", -k * dx),
             ("v", "id", dy), ("v", "xx", -k * dy), ("v", "yy", -k * dy)]
    if include_pressure:
        terms += [("p", "x", kp * dx), ("p", "y", kp * dy)]
    rhs = dx * ctx.r1[i] + dy * ctx.r2[i]
    return terms, rhs


def velocity_rows(i, cloud, vbc: VelocityBC, ctx: BCContext, family: str):
    """Two velocity BC rows for one boundary point.

    family is 'projection' (rows over u, v only; pressure-guess terms are
    folded into the rhs) or 'penalty' (rows may reference the pressure
    correction unknowns).
    """
    n = cloud.normal[i]
    t = _tangent(n)
    x = cloud.positions[i]
    slot_n = "u" if abs(n[0]) >= abs(n[1]) else "v"
    slot_t = "v" if slot_n == "u" else "u"
    if vbc.kind == "dirichlet":
        ud, vd = vbc.value(x, ctx.t_new)
        return [BCRow([("u", "id", 1.0)], float(ud), slot="u"),
                BCRow([("v", "id", 1.0)], float(vd), slot="v")]
    if vbc.kind == "neumann_zero":
        return [BCRow([("u", "x", n[0]), ("u", "y", n[1])], 0.0, slot="u"),
                BCRow([("v", "x", n[0]), ("v", "y", n[1])], 0.0, slot="v")]
    if vbc.kind == "slip":
        row_n = BCRow([("u", "id", n[0]), ("v", "id", n[1])], 0.0, slot=slot_n)
        row_t = BCRow([("u", "x", t[0] * n[0]), ("u", "y", t[0] * n[1]),
                       ("v", "x", t[1] * n[0]), ("v", "y", t[1] * n[1])],
                      0.0, slot=slot_t)
        return [row_n, row_t]
    if vbc.kind == "free_surface":
        eta = ctx.material.eta
        row_t = BCRow(_tangential_stress_terms(n, t, eta), 0.0,
                      slot="u" if abs(t[0]) >= abs(t[1]) else "v")
        terms, rhs = _momentum_projection(n, ctx, i, family == "penalty")
        row_n = BCRow(terms, rhs, slot="v" if row_t.slot == "u" else "u")
        return [row_t, row_n]
    raise ValueError(f"unknown velocity BC kind {vbc.kind!r}")


def pressure_row(i, cloud, pbc: PressureBC, ctx: BCContext, family: str) -> BCRow:
    """Pressure (correction) BC row for one boundary point.

    In the projection family the row may only touch the pressure unknowns;
    free-surface normal-stress data then enters through ctx.stress_nn.
    """
    n = cloud.normal[i]
    x = cloud.positions[i]
    if pbc.kind == "dirichlet":
        pd = pbc.value(x, ctx.t_new)
        return BCRow([("p", "id", 1.0)], float(pd) - ctx.p_star[i], slot="p")
    if pbc.kind == "neumann":
        if pbc.value is None:
            # without target data the condition constrains the correction
            # only; subtracting dpdn_star here would erase the inherited
            # normal slope of the total pressure every step and feed a
            # spurious divergence source at inflows and walls
            return BCRow([("p", "x", n[0]), ("p", "y", n[1])], 0.0, slot="p")
        target = pbc.value(x, ctx.t_new, n)
        return BCRow([("p", "x", n[0]), ("p", "y", n[1])],
                     float(target) - ctx.dpdn_star[i], slot="p")
    if pbc.kind == "free_surface":
        if family == "projection":
            if ctx.stress_nn is None:
                raise ValueError("projection free-surface row needs stress_nn")
            rhs = ctx.p0 + ctx.stress_nn[i] - ctx.p_star[i]
            return BCRow([("p", "id", 1.0)], rhs, slot="p")
        eta = ctx.material.eta
        terms = _normal_stress_terms(n, eta) + [("p", "id", -1.0)]
        return BCRow(terms, ctx.p_star[i] - ctx.p0, slot="p")
    raise ValueError(f"unknown pressure BC kind {pbc.kind!r}")


def slip_momentum_row(i, cloud, ctx: BCContext) -> BCRow:
    """Tangential momentum row used by the coupled scheme at slip walls."""
    t = _tangent(cloud.normal[i])
    terms, rhs = _momentum_projection(t, ctx, i, include_pressure=True)
    return BCRow(terms, rhs, slot="v")


def to_coupled_row(row: BCRow) -> np.ndarray:
    """Map symbolic terms onto the 18-wide local unknown vector."""
    out = np.zeros(18)
    for fieldname, deriv, coeff in row.terms:
        out[term_column(fieldname, deriv)] += coeff
    return out


def coupled_boundary_rows(i, cloud, vbc: VelocityBC, pbc: PressureBC,
                          ctx: BCContext):
    """(rows, rhs) of the augmented local system at a boundary point.

    Mass conservation is always retained alongside the boundary conditions.
    At slip walls the second velocity condition is the tangential momentum
    equation of the interior scheme rather than a homogeneous Neumann row.
    """
    vrows = velocity_rows(i, cloud, vbc, ctx, family="penalty")
    if vbc.kind == "slip":
        vrows = [vrows[0], slip_momentum_row(i, cloud, ctx)]
    prow = pressure_row(i, cloud, pbc, ctx, family="penalty")
    rows = [mass_row()] + [to_coupled_row(r) for r in vrows] + [to_coupled_row(prow)]
    rhs = [0.0] + [r.rhs for r in vrows] + [prow.rhs]
    return np.array(rows), np.array(rhs)
