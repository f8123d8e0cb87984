"""Classical weighted-least-squares derivative stencils.

Around each point i, the field differences u_j - u_i over the support S_i are
fitted by a second-order Taylor polynomial in the weighted least-squares
sense.  The rows of the resulting pseudo-inverse are stencil coefficients
c*_ij such that, e.g.,

    (d u / d x)_i  ~=  sum_j  c^x_ij (u_j - u_i).

The basis contains no constant column, so constants are annihilated by
construction and the stencils are exact on quadratics.  The discrete
Laplacian stencil is the sum of the two pure second-derivative rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cloud import MIN_SUPPORT, NeighborTable, PointCloud

#: condition-number cutoff of the (scaled) normal equations
COND_LIMIT = 1.0e12

#: weight multiplier on the central point when Kronecker-delta mode is on
KRONECKER_BOOST = 1.0e3

DERIVATIVES = ("x", "y", "xx", "yy", "xy", "lap")


class DegenerateNeighborhoodError(RuntimeError):
    """Support cannot resolve the quadratic Taylor basis."""

    def __init__(self, point_ids):
        self.point_ids = sorted(int(i) for i in np.atleast_1d(point_ids))
        super().__init__(f"degenerate neighborhoods at points {self.point_ids}")


@dataclass
class WeightConfig:
    """Gaussian least-squares weights W_j = exp(-alpha |x_j - x_i|^2 / h^2).

    ``kronecker_delta_mode`` boosts the central weight by a fixed factor; it
    only matters for stencils that carry a constant basis column and is off by
    default.
    """

    alpha: float = 6.25
    kronecker_delta_mode: bool = False

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


def gaussian_weight(dist, h, cfg: WeightConfig) -> np.ndarray:
    """Weight of a neighbour at distance ``dist`` for central length ``h``."""
    dist = np.asarray(dist, dtype=float)
    return np.exp(-cfg.alpha * dist ** 2 / float(h) ** 2)


def taylor_matrix(dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """n x 5 difference-form Taylor matrix, columns ordered like the stencils."""
    return np.column_stack([dx, dy, 0.5 * dx ** 2, 0.5 * dy ** 2, dx * dy])


@dataclass
class OperatorSet:
    """Stencil coefficients for one cloud, aligned with a NeighborTable.

    ``data[k]`` holds the coefficient array (same layout as
    ``table.indices``) for derivative k in ("x", "y", "xx", "yy", "xy").
    ``defect_ids`` lists points excluded as degenerate (empty when built in
    raising mode).
    """

    indptr: np.ndarray
    indices: np.ndarray
    data: dict
    defect_ids: np.ndarray

    def __post_init__(self):
        self._matrices = {}

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    def coefficients(self, which: str, i: int) -> np.ndarray:
        arr = self.data["xx"] + self.data["yy"] if which == "lap" else self.data[which]
        return arr[self.indptr[i]:self.indptr[i + 1]]

    def row_indices(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def matrix(self, which: str) -> sp.csr_matrix:
        """Difference-form operator matrix: (C u)_i = sum_j c_ij (u_j - u_i)."""
        if which not in self._matrices:
            if which == "lap":
                data = self.data["xx"] + self.data["yy"]
            else:
                data = self.data[which]
            n = self.n
            rows = np.repeat(np.arange(n), np.diff(self.indptr))
            rowsum = np.add.reduceat(data, self.indptr[:-1])
            coo_rows = np.concatenate([rows, np.arange(n)])
            coo_cols = np.concatenate([self.indices, np.arange(n)])
            coo_vals = np.concatenate([data, -rowsum])
            mat = sp.coo_matrix((coo_vals, (coo_rows, coo_cols)), shape=(n, n))
            self._matrices[which] = mat.tocsr()
        return self._matrices[which]


def build_operator_set(cloud: PointCloud, table: NeighborTable,
                       cfg: WeightConfig | None = None,
                       on_degenerate: str = "raise") -> OperatorSet:
    """Build all five derivative stencils for every point.

    The normal equations are formed on an h-scaled basis so the condition
    estimate reflects neighborhood geometry; a support is degenerate when it
    has fewer than ``MIN_SUPPORT`` points or its condition number exceeds
    ``COND_LIMIT``.  With on_degenerate="raise" such points raise
    :class:`DegenerateNeighborhoodError`; with "collect" they are recorded in
    ``defect_ids`` and their coefficients left at zero.
    """
    if cfg is None:
        cfg = WeightConfig()
    pos = cloud.positions
    n = cloud.n
    counts = table.counts()
    nnz = int(table.indptr[-1])
    data = {k: np.zeros(nnz) for k in ("x", "y", "xx", "yy", "xy")}
    bad = list(np.flatnonzero(counts < MIN_SUPPORT))

    # batch points by support size so the dense algebra vectorizes
    order = np.argsort(counts, kind="stable")
    for m in np.unique(counts):
        if m < MIN_SUPPORT:
            continue
        sel = order[np.searchsorted(counts[order], m):
                    np.searchsorted(counts[order], m, side="right")]
        idx = table.indices[table.indptr[sel, None] + np.arange(m)]
        delta = pos[idx] - pos[sel, None, :]
        hsel = cloud.h[sel]
        dx = delta[..., 0] / hsel[:, None]
        dy = delta[..., 1] / hsel[:, None]
        w = np.exp(-cfg.alpha * (dx ** 2 + dy ** 2))
        if cfg.kronecker_delta_mode:
            w[idx == sel[:, None]] *= KRONECKER_BOOST
        m5 = np.stack([dx, dy, 0.5 * dx ** 2, 0.5 * dy ** 2, dx * dy], axis=-1)
        a = np.einsum("bnk,bn,bnl->bkl", m5, w, m5)
        cond = np.linalg.cond(a)
        ok = cond <= COND_LIMIT
        bad.extend(sel[~ok])
        if not np.any(ok):
            continue
        ainv = np.linalg.inv(a[ok])
        stencil = np.einsum("bkl,bnl,bn->bkn", ainv, m5[ok], w[ok])
        hs = hsel[ok]
        scale = np.stack([hs, hs, hs ** 2, hs ** 2, hs ** 2], axis=-1)
        stencil /= scale[:, :, None]
        slots = table.indptr[sel[ok], None] + np.arange(m)
        for k, name in enumerate(("x", "y", "xx", "yy", "xy")):
            data[name][slots] = stencil[:, k, :]

    if bad and on_degenerate == "raise":
        raise DegenerateNeighborhoodError(bad)
    defect_ids = np.array(sorted(int(b) for b in bad), dtype=np.int64)
    return OperatorSet(indptr=table.indptr.copy(), indices=table.indices.copy(),
                       data=data, defect_ids=defect_ids)


def apply_operator(opset: OperatorSet, field: np.ndarray, which: str) -> np.ndarray:
    """Apply a derivative stencil to a nodal field in difference form."""
    field = np.asarray(field, dtype=float)
    if which == "lap":
        data = opset.data["xx"] + opset.data["yy"]
    else:
        data = opset.data[which]
    contrib = data * field[opset.indices]
    sums = np.add.reduceat(contrib, opset.indptr[:-1])
    rowsum = np.add.reduceat(data, opset.indptr[:-1])
    return sums - rowsum * field


def laplace_divgrad_gap(cloud: PointCloud, opset: OperatorSet, field: np.ndarray,
                        table: NeighborTable) -> float:
    """Volume-weighted L2 norm of (lap u - div(grad u)) on deep interior points.

    The direct Laplacian stencil and the composition of first-derivative
    stencils are distinct discrete operators; their difference is measured
    over interior points whose whole support is itself interior, so neither
    route touches one-sided boundary stencils.
    """
    gx = apply_operator(opset, field, "x")
    gy = apply_operator(opset, field, "y")
    lap = apply_operator(opset, field, "lap")
    div_grad = apply_operator(opset, gx, "x") + apply_operator(opset, gy, "y")
    interior = cloud.interior_mask
    deep = interior.copy()
    for i in np.flatnonzero(interior):
        if not interior[table.row(i)].all():
            deep[i] = False
    if not deep.any():
        raise ValueError("no interior points with fully interior supports")
    diff2 = (lap[deep] - div_grad[deep]) ** 2
    v = cloud.volume[deep]
    if v.sum() <= 0:
        v = np.ones_like(diff2)
    return float(np.sqrt(np.sum(diff2 * v) / np.sum(v)))
