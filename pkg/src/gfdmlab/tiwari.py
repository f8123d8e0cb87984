"""Over-determined (PDE-augmented) least-squares stencils.

Where the classical stencils fit Taylor differences only, this family adds
the discretized PDE itself as extra weighted rows and keeps a constant basis
column, so each local solve approximates the *function value* together with
its derivatives.  Extracting the function rows of the local pseudo-inverse
yields stencils

    u_i  ~=  sum_j alpha_ij u_j + sum_k zeta_ik r_k,

which assemble into a sparse, diagonally dominant global system.

For the incompressible Navier-Stokes step, all three fields are fitted at
once: the local unknown vector stacks (u, u_x, u_y, u_xx, u_yy, u_xy), the
same for v, then for the pressure correction, 18 entries in total.  Interior
points carry four PDE rows (x-momentum, y-momentum, mass conservation, and a
pressure-Poisson row); boundary points carry mass conservation plus their
boundary-condition rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import INTERIOR, MIN_SUPPORT, NeighborTable, PointCloud
from .operators import COND_LIMIT, KRONECKER_BOOST, WeightConfig

#: unknown ordering inside one 6-block: value, x, y, xx, yy, xy
FIELD_OFFSET = {"u": 0, "v": 6, "p": 12}
DERIV_COLUMN = {"id": 0, "x": 1, "y": 2, "xx": 3, "yy": 4, "xy": 5}


@dataclass
class TiwariConfig:
    """Weights for the augmented least-squares systems.

    ``w_pde`` applies to every PDE and boundary-condition row (the Taylor
    rows keep their Gaussian weights).
    """

    w_pde: float = 2.0
    weights: WeightConfig = field(default_factory=WeightConfig)

    def __post_init__(self):
        if self.w_pde <= 0:
            raise ValueError("w_pde must be positive")


class DegenerateSystemError(RuntimeError):
    def __init__(self, point_ids):
        self.point_ids = sorted(int(i) for i in np.atleast_1d(point_ids))
        super().__init__(f"ill-conditioned local systems at points {self.point_ids}")


def term_column(fieldname: str, deriv: str) -> int:
    """Column of one (field, derivative) unknown in the 18-wide layout."""
    return FIELD_OFFSET[fieldname] + DERIV_COLUMN[deriv]


def _taylor_block(dxh: np.ndarray, dyh: np.ndarray) -> np.ndarray:
    """(..., n) scaled offsets -> (..., n, 6) Taylor rows with constant column."""
    one = np.ones_like(dxh)
    return np.stack([one, dxh, dyh, 0.5 * dxh ** 2, 0.5 * dyh ** 2, dxh * dyh],
                    axis=-1)


def _column_scale(h, reps: int) -> np.ndarray:
    h = np.asarray(h, dtype=float)
    block = np.stack([np.ones_like(h), h, h, h ** 2, h ** 2, h ** 2], axis=-1)
    return np.concatenate([block] * reps, axis=-1)


# ------------------------------------------------------------------------
# scalar demonstration stencils
# ------------------------------------------------------------------------


def scalar_function_stencil(delta: np.ndarray, h: float, pde_rows: np.ndarray,
                            cfg: TiwariConfig, central: int | None = 0):
    """Function-value stencil for one point of a scalar problem.

    delta : (n, 2) neighbour offsets (the central zero offset included).
    pde_rows : (m, 6) coefficient rows over (u, u_x, u_y, u_xx, u_yy, u_xy).
    Returns (alpha (n,), zeta (m,)): u_i ~= alpha . u_S + zeta . rhs.
    """
    delta = np.asarray(delta, dtype=float)
    wcfg = cfg.weights
    dxh = delta[:, 0] / h
    dyh = delta[:, 1] / h
    w = np.exp(-wcfg.alpha * (dxh ** 2 + dyh ** 2))
    if wcfg.kronecker_delta_mode and central is not None:
        w[central] *= KRONECKER_BOOST
    mt = _taylor_block(dxh, dyh)
    scale = _column_scale(h, 1)
    rows_s = np.atleast_2d(np.asarray(pde_rows, dtype=float)) / scale
    a = mt.T @ (w[:, None] * mt) + cfg.w_pde * rows_s.T @ rows_s
    if np.linalg.cond(a) > COND_LIMIT:
        raise DegenerateSystemError([0])
    y = np.linalg.solve(a, np.eye(6)[:, 0])
    alpha = w * (mt @ y)
    zeta = cfg.w_pde * (rows_s @ y)
    return alpha, zeta


def build_scalar_tiwari_stencil(cloud: PointCloud, table: NeighborTable, i: int,
                                pde_coeffs, cfg: TiwariConfig | None = None):
    """Stencil for  a*u + b*du/dx + c*lap(u) = d  at interior point i.

    Returns (neighbors, alpha, zeta) with zeta the scalar weight of the
    right-hand side value d at point i.
    """
    if cfg is None:
        cfg = TiwariConfig()
    ca, cb, cc = (float(v) for v in pde_coeffs)
    row = np.array([[ca, cb, 0.0, cc, cc, 0.0]])
    nbrs = table.row(i)
    delta = cloud.positions[nbrs] - cloud.positions[i]
    central = int(np.searchsorted(nbrs, i))
    alpha, zeta = scalar_function_stencil(delta, float(cloud.h[i]), row, cfg,
                                          central=central)
    return nbrs, alpha, float(zeta[0])


def solve_scalar_pde(cloud: PointCloud, table: NeighborTable, pde_coeffs,
                     rhs_values: np.ndarray, bc_values: np.ndarray,
                     cfg: TiwariConfig | None = None, tol: float = 1.0e-9):
    """Assemble and solve one scalar PDE over the cloud.

    Interior points get the PDE row, boundary points a Dirichlet row, both in
    the over-determined local systems.  Returns the nodal solution.
    """
    from .sparselin import assemble, bicgstab

    if cfg is None:
        cfg = TiwariConfig()
    n = cloud.n
    rows, cols, vals = [], [], []
    rhs = np.zeros(n)
    dirichlet_row = np.array([[1.0, 0, 0, 0, 0, 0]])
    ca, cb, cc = (float(v) for v in pde_coeffs)
    pde_row = np.array([[ca, cb, 0.0, cc, cc, 0.0]])
    for i in range(n):
        nbrs = table.row(i)
        delta = cloud.positions[nbrs] - cloud.positions[i]
        central = int(np.searchsorted(nbrs, i))
        local = pde_row if cloud.kind[i] == INTERIOR else dirichlet_row
        r_val = rhs_values[i] if cloud.kind[i] == INTERIOR else bc_values[i]
        alpha, zeta = scalar_function_stencil(delta, float(cloud.h[i]), local,
                                              cfg, central=central)
        coeffs = -alpha
        coeffs[central] += 1.0
        rows.extend([i] * len(nbrs))
        cols.extend(nbrs)
        vals.extend(coeffs)
        rhs[i] = zeta[0] * r_val
    mat = assemble(rows, cols, vals, (n, n))
    x, stats = bicgstab(mat, rhs, tol=tol)
    if not stats.converged:
        raise RuntimeError(f"scalar solve failed: {stats.reason}")
    return x


# ------------------------------------------------------------------------
# coupled velocity-pressure stencils
# ------------------------------------------------------------------------


@dataclass
class CoupledPointStencil:
    """Function-row stencils of one point's augmented local system.

    Row r in (0, 1, 2) approximates u, v and the pressure correction.
    ``alpha``/``beta``/``gamma`` weight the neighbour values of u, v, p_corr;
    ``zeta`` weights the PDE/BC right-hand sides.
    """

    neighbors: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    rhs_values: np.ndarray

    @property
    def rhs_contracted(self) -> np.ndarray:
        return self.zeta @ self.rhs_values


def coupled_stencil_batch(positions, h, idx, center_ids, pde_rows, cfg: TiwariConfig):
    """Vectorized function-row stencils for points sharing a support size.

    positions : (N, 2) cloud positions;  h : (N,) smoothing lengths.
    idx : (B, n) neighbour indices per point;  center_ids : (B,) point ids.
    pde_rows : (B, k, 18) unscaled PDE/BC coefficient rows.
    Returns (alpha, beta, gamma) as (B, 3, n) and zeta as (B, 3, k).
    """
    wcfg = cfg.weights
    delta = positions[idx] - positions[center_ids][:, None, :]
    hs = h[center_ids]
    dxh = delta[..., 0] / hs[:, None]
    dyh = delta[..., 1] / hs[:, None]
    w = np.exp(-wcfg.alpha * (dxh ** 2 + dyh ** 2))
    if wcfg.kronecker_delta_mode:
        w[idx == center_ids[:, None]] *= KRONECKER_BOOST
    mt = _taylor_block(dxh, dyh)
    t = np.einsum("bnk,bn,bnl->bkl", mt, w, mt)
    scale = _column_scale(hs, 3)
    rows_s = np.asarray(pde_rows, dtype=float) / scale[:, None, :]
    b = len(center_ids)
    a = np.zeros((b, 18, 18))
    for blk in range(3):
        a[:, 6 * blk:6 * blk + 6, 6 * blk:6 * blk + 6] = t
    a += cfg.w_pde * np.einsum("bki,bkj->bij", rows_s, rows_s)
    cond = np.linalg.cond(a)
    bad = np.flatnonzero(cond > COND_LIMIT)
    if len(bad):
        raise DegenerateSystemError(center_ids[bad])
    e = np.zeros((18, 3))
    e[0, 0] = e[6, 1] = e[12, 2] = 1.0
    y = np.linalg.solve(a, np.broadcast_to(e, (b, 18, 3)).copy())
    alpha = np.einsum("bnk,bkr->brn", mt, y[:, 0:6, :]) * w[:, None, :]
    beta = np.einsum("bnk,bkr->brn", mt, y[:, 6:12, :]) * w[:, None, :]
    gamma = np.einsum("bnk,bkr->brn", mt, y[:, 12:18, :]) * w[:, None, :]
    zeta = cfg.w_pde * np.einsum("bki,bir->brk", rows_s, y)
    return alpha, beta, gamma, zeta


def build_coupled_stencil(cloud: PointCloud, table: NeighborTable, i: int,
                          pde_rows, rhs_values,
                          cfg: TiwariConfig | None = None) -> CoupledPointStencil:
    """Stencil of one point from explicit local rows (see module docstring)."""
    if cfg is None:
        cfg = TiwariConfig()
    nbrs = table.row(i)
    if len(nbrs) < MIN_SUPPORT:
        raise DegenerateSystemError([i])
    pde_rows = np.atleast_2d(np.asarray(pde_rows, dtype=float))
    alpha, beta, gamma, zeta = coupled_stencil_batch(
        cloud.positions, cloud.h, nbrs[None, :], np.array([i]),
        pde_rows[None, :, :], cfg)
    return CoupledPointStencil(
        neighbors=nbrs, alpha=alpha[0], beta=beta[0], gamma=gamma[0],
        zeta=zeta[0], rhs_values=np.asarray(rhs_values, dtype=float))


def momentum_rows(material, dt: float) -> np.ndarray:
    """The two implicit momentum rows (x and y) over the 18 unknowns."""
    k = material.eta * dt / material.rho
    kp = dt / material.rho
    r1 = np.zeros(18)
    r1[term_column("u", "id")] = 1.0
    r1[term_column("u", "xx")] = -k
    r1[term_column("u", "yy")] = -k
    r1[term_column("p", "x")] = kp
    r2 = np.zeros(18)
    r2[term_column("v", "id")] = 1.0
    r2[term_column("v", "xx")] = -k
    r2[term_column("v", "yy")] = -k
    r2[term_column("p", "y")] = kp
    return np.stack([r1, r2])


def mass_row() -> np.ndarray:
    row = np.zeros(18)
    row[term_column("u", "x")] = 1.0
    row[term_column("v", "y")] = 1.0
    return row


def interior_pde_rows(material, dt: float, ux, uy, vx, vy) -> np.ndarray:
    """(B, 4, 18) interior rows; ux..vy are frozen velocity gradients."""
    b = len(ux)
    rows = np.zeros((b, 4, 18))
    rows[:, 0:2, :] = momentum_rows(material, dt)
    rows[:, 2, :] = mass_row()
    rho = material.rho
    rows[:, 3, term_column("u", "x")] = rho * ux
    rows[:, 3, term_column("u", "y")] = rho * vx
    rows[:, 3, term_column("v", "x")] = rho * uy
    rows[:, 3, term_column("v", "y")] = rho * vy
    rows[:, 3, term_column("p", "xx")] = 1.0
    rows[:, 3, term_column("p", "yy")] = 1.0
    return rows


def interior_pde_rhs(material, dt: float, t_new: float, u, v, gpx, gpy,
                     divv, lap_pstar) -> np.ndarray:
    """(B, 4) right-hand sides matching :func:`interior_pde_rows`.

    The body force is spatially constant, so its divergence term vanishes
    from the pressure-Poisson row.
    """
    gx, gy = material.g(t_new)
    kp = dt / material.rho
    b = len(u)
    rhs = np.zeros((b, 4))
    rhs[:, 0] = u - kp * gpx + dt * gx
    rhs[:, 1] = v - kp * gpy + dt * gy
    rhs[:, 3] = (material.rho / dt) * divv - lap_pstar
    return rhs
