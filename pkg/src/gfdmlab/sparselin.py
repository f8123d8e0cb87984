"""Sparse CSR assembly and an unpreconditioned BiCGSTAB solver.

Matrices are assembled from (row, col, value) triplets into scipy CSR with
duplicate entries summed; the canonical CSR layout makes assembly independent
of triplet order.  The iterative solver is written out explicitly so the
breakdown conditions, iteration counts and termination reasons are fully
reportable and deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

#: magnitude below which the BiCGSTAB scalars rho / omega signal breakdown
BREAKDOWN_EPS = 1.0e-30


def assemble(rows, cols, vals, shape) -> sp.csr_matrix:
    """CSR matrix from triplets; duplicates are summed, layout is canonical."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    if not (rows.shape == cols.shape == vals.shape):
        raise ValueError("triplet arrays must have identical shapes")
    nr, nc = shape
    if len(rows) and (rows.min() < 0 or rows.max() >= nr
                      or cols.min() < 0 or cols.max() >= nc):
        raise ValueError("triplet index out of range for shape %r" % (shape,))
    mat = sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def write_matrix_market(mat: sp.spmatrix, path) -> None:
    """Dump a matrix in MatrixMarket coordinate format (1-based indices)."""
    coo = mat.tocoo()
    with open(path, "w") as f:
        f.write("%%MatrixMarket matrix coordinate real general\n")
        f.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            f.write(f"{r + 1} {c + 1} {v:.17g}\n")


@dataclass
class SolveStats:
    """Outcome of one linear solve."""

    converged: bool
    iterations: int
    residual: float
    breakdown: bool = False
    reason: str = ""


def bicgstab(a, b, x0=None, tol: float = 1.0e-9, max_iter: int | None = None):
    """BiCGSTAB without preconditioning; returns (x, SolveStats).

    Convergence is declared on the relative residual |b - A x| / |b| <= tol,
    certified against the true residual on exit.  A zero right-hand side
    short-circuits to x = 0.  Lanczos breakdowns (|rho|, |omega| or the
    rhat.v product vanishing) restart the recurrence with a fresh shadow
    residual; the solve only aborts once a restart fails to improve the
    residual.  When the recursion converges but the true residual stays
    above tol the solve reports "stagnation": that marks the attainable
    accuracy of the unpreconditioned iteration on that system, and the
    caller should loosen tol rather than retry.
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(True, 0, 0.0, reason="zero rhs")
    if max_iter is None:
        max_iter = 10 * n
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - a @ x
    res = np.linalg.norm(r) / bnorm
    if res <= tol:
        return x, SolveStats(True, 0, float(res), reason="initial guess")
    r_hat = r.copy()
    rho_old = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    res_at_restart = res
    stats = SolveStats(False, 0, float(res))

    def _restart(reason):
        # a restart is only worth taking while the residual keeps shrinking
        nonlocal r_hat, rho_old, alpha, omega, v, p, res_at_restart
        cur = np.linalg.norm(r) / bnorm
        if cur >= res_at_restart:
            stats.breakdown = True
            stats.reason = reason
            return False
        res_at_restart = cur
        r_hat = r.copy()
        rho_old = alpha = omega = 1.0
        v = np.zeros(n)
        p = np.zeros(n)
        return True

    for k in range(1, max_iter + 1):
        stats.iterations = k
        rho = r_hat @ r
        if abs(rho) < BREAKDOWN_EPS:
            if _restart("rho breakdown"):
                continue
            break
        beta = (rho / rho_old) * (alpha / omega)
        p = r + beta * (p - omega * v)
        v = a @ p
        denom = r_hat @ v
        if abs(denom) < BREAKDOWN_EPS:
            if _restart("rhat.v breakdown"):
                continue
            break
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / bnorm <= tol:
            x = x + alpha * p
            if np.linalg.norm(b - a @ x) / bnorm > tol:
                stats.reason = "stagnation"
            break
        t = a @ s
        tt = t @ t
        if tt == 0.0:
            x = x + alpha * p
            r = s
            if _restart("t breakdown"):
                continue
            break
        omega = (t @ s) / tt
        x = x + alpha * p + omega * s
        r = s - omega * t
        rho_old = rho
        if np.linalg.norm(r) / bnorm <= tol:
            # the recursive residual can drift above the true one on
            # ill-conditioned systems, so certify against the latter
            if np.linalg.norm(b - a @ x) / bnorm > tol:
                stats.reason = "stagnation"
            break
        if abs(omega) < BREAKDOWN_EPS:
            if _restart("omega breakdown"):
                continue
            break
    true_res = float(np.linalg.norm(b - a @ x) / bnorm)
    stats.residual = true_res
    stats.converged = true_res <= tol
    if stats.converged:
        stats.breakdown = False
        stats.reason = "converged"
    elif not stats.reason:
        stats.reason = "max_iter"
    return x, stats


def bicgstab_l(a, b, x0=None, tol: float = 1.0e-9, max_iter: int | None = None,
               l: int = 2):
    """BiCGstab(l) without preconditioning; returns (x, SolveStats).

    The degree-l minimal-residual polynomial damps eigenvalue pairs with
    large imaginary parts, where the degree-1 polynomial of plain BiCGSTAB
    breaks down.  Keeps the best iterate seen so a stalled run still
    returns its most accurate solution; iterations count full cycles
    (2 l matvecs each).
    """
    b = np.asarray(b, dtype=float)
    n = len(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolveStats(True, 0, 0.0, reason="zero rhs")
    if max_iter is None:
        max_iter = max(1, (10 * n) // (2 * l))
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r0 = b - a @ x
    res = np.linalg.norm(r0) / bnorm
    if res <= tol:
        return x, SolveStats(True, 0, float(res), reason="initial guess")
    r_shadow = r0.copy()
    u = [np.zeros(n)]
    r = [r0]
    rho0, alpha, omega = 1.0, 0.0, 1.0
    x_best = x.copy()
    res_best = res
    stats = SolveStats(False, 0, float(res))
    for k in range(1, max_iter + 1):
        stats.iterations = k
        rho0 = -omega * rho0
        for j in range(l):
            rho1 = r_shadow @ r[j]
            if abs(rho0) < BREAKDOWN_EPS:
                stats.breakdown = True
                stats.reason = "rho breakdown"
                break
            beta = alpha * rho1 / rho0
            rho0 = rho1
            for i in range(j + 1):
                u[i] = r[i] - beta * u[i]
            u.append(a @ u[j])
            gamma = r_shadow @ u[j + 1]
            if abs(gamma) < BREAKDOWN_EPS:
                stats.breakdown = True
                stats.reason = "gamma breakdown"
                break
            alpha = rho0 / gamma
            for i in range(j + 1):
                r[i] = r[i] - alpha * u[i + 1]
            r.append(a @ r[j])
            x = x + alpha * u[0]
        if stats.breakdown:
            break
        # minimal-residual combination of r_1..r_l applied to x, r_0, u_0
        gram = np.empty((l, l))
        for i in range(1, l + 1):
            for j in range(i, l + 1):
                gram[i - 1, j - 1] = gram[j - 1, i - 1] = r[i] @ r[j]
        rhs_mr = np.array([r[0] @ r[j] for j in range(1, l + 1)])
        try:
            gam = np.linalg.solve(gram, rhs_mr)
        except np.linalg.LinAlgError:
            stats.breakdown = True
            stats.reason = "mr breakdown"
            break
        omega = gam[l - 1]
        if abs(omega) < BREAKDOWN_EPS:
            stats.breakdown = True
            stats.reason = "omega breakdown"
            break
        x = x + sum(gam[j] * r[j] for j in range(l))
        r = [r[0] - sum(gam[j] * r[j + 1] for j in range(l))]
        u = [u[0] - sum(gam[j] * u[j + 1] for j in range(l))]
        res = np.linalg.norm(r[0]) / bnorm
        if res < res_best:
            res_best = res
            x_best = x.copy()
        if res <= tol:
            if np.linalg.norm(b - a @ x) / bnorm > tol:
                stats.reason = "stagnation"
            break
        # the cycles are strongly non-monotone (transient excursions of 1e7
        # over the best residual occur in convergent runs), so only overflow
        # aborts the iteration; max_iter plus the best-iterate fallback
        # handles genuine divergence
        if not np.isfinite(res) or res > 1.0e50:
            stats.reason = "diverged"
            break
    if stats.reason in ("diverged", "max_iter", ""):
        x = x_best
    true_res = float(np.linalg.norm(b - a @ x) / bnorm)
    if np.linalg.norm(b - a @ x_best) / bnorm < true_res:
        x = x_best
        true_res = float(np.linalg.norm(b - a @ x) / bnorm)
    stats.residual = true_res
    stats.converged = true_res <= tol
    if stats.converged:
        stats.breakdown = False
        stats.reason = "converged"
    elif not stats.reason:
        stats.reason = "max_iter"
    return x, stats
