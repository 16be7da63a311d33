"""Factorizations: one-sided Jacobi SVD and Householder thin QR.

Both accept dense float64 arrays.  The Jacobi sweeps run in a compiled
kernel so profiles of 1000-row benchmark matrices stay cheap; everything
is plain cyclic-sweep one-sided Jacobi, no library SVD behind it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .matrices import check_dense

__all__ = [
    "DEFAULT_RANK_TOL",
    "ConvergenceError",
    "RankDeficiencyError",
    "SvdResult",
    "qr_householder",
    "svd_jacobi",
]

# singular values below DEFAULT_RANK_TOL * sigma_max count as zero everywhere
DEFAULT_RANK_TOL = 1e-12

MAX_SWEEPS = 60


class ConvergenceError(RuntimeError):
    """Iteration failed to converge within its sweep or step budget."""


class RankDeficiencyError(ValueError):
    """Factorization requires full column rank and the input lacks it."""


@dataclass
class SvdResult:
    """Thin SVD restricted to the numerical rank.

    a == left @ diag(singular_values) @ right.T up to rounding;
    singular_values is strictly positive and nonincreasing.
    """

    singular_values: np.ndarray   # (r,)
    left: np.ndarray              # (m, r) orthonormal columns
    right: np.ndarray             # (n, r) orthonormal columns
    sweeps: int

    @property
    def rank(self) -> int:
        return int(self.singular_values.shape[0])


@njit(cache=True, nogil=True)
def _jacobi_sweeps(bt, vt, tol, max_sweeps):
    """Cyclic one-sided Jacobi on the rows of bt (columns of the input).

    Rotates row pairs of bt (and vt alongside) until every off-diagonal
    Gram entry satisfies |<bp,bq>| <= tol * |bp| * |bq|.  Returns the sweep
    count on convergence, -1 if the cap was hit.
    """
    n, m = bt.shape
    for sweep in range(1, max_sweeps + 1):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                app = 0.0
                aqq = 0.0
                apq = 0.0
                for t in range(m):
                    bp = bt[p, t]
                    bq = bt[q, t]
                    app += bp * bp
                    aqq += bq * bq
                    apq += bp * bq
                if apq * apq <= tol * tol * app * aqq:
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    tstep = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    tstep = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + tstep * tstep)
                s = c * tstep
                for t in range(m):
                    bp = bt[p, t]
                    bq = bt[q, t]
                    bt[p, t] = c * bp - s * bq
                    bt[q, t] = s * bp + c * bq
                for t in range(n):
                    vp = vt[p, t]
                    vq = vt[q, t]
                    vt[p, t] = c * vp - s * vq
                    vt[q, t] = s * vp + c * vq
        if not rotated:
            return sweep
    return -1


def svd_jacobi(a, tol: float = DEFAULT_RANK_TOL, max_sweeps: int = MAX_SWEEPS) -> SvdResult:
    """Thin SVD by one-sided Jacobi with cyclic sweeps.

    tol is relative: it is both the rotation convergence threshold and the
    rank cutoff (singular values below tol * sigma_max are dropped).
    Raises ConvergenceError if the sweep cap is hit.
    """
    a = check_dense(a)
    m, n = a.shape
    if m < n:
        # rotate the short side: factor the transpose, swap factors
        res = svd_jacobi(a.T, tol=tol, max_sweeps=max_sweeps)
        return SvdResult(res.singular_values, res.right, res.left, res.sweeps)
    bt = np.ascontiguousarray(a.T.copy())    # (n, m), rows are input columns
    vt = np.eye(n)
    sweeps = _jacobi_sweeps(bt, vt, float(tol), int(max_sweeps))
    if sweeps < 0:
        raise ConvergenceError(f"one-sided Jacobi did not settle in {max_sweeps} sweeps")
    sigma = np.sqrt((bt * bt).sum(axis=1))   # (n,)
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    smax = sigma[0] if sigma.size else 0.0
    if smax == 0.0:
        r = 0
    else:
        r = int(np.sum(sigma >= tol * smax))
    order = order[:r]
    left = (bt[order] / sigma[:r, None]).T   # (m, r)
    right = vt[order].T                      # (n, r)
    return SvdResult(sigma[:r].copy(), np.ascontiguousarray(left),
                     np.ascontiguousarray(right), sweeps)


def qr_householder(a, rank_tol: float = DEFAULT_RANK_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR via Householder reflectors, R diagonal canonicalized >= 0.

    Returns (q, r) with q: (m, k), r: (k, n), k = min(m, n).  Raises
    RankDeficiencyError when a diagonal of R falls below
    rank_tol * ||a||_F, since callers use Q as an orthonormal basis.
    """
    a = check_dense(a)
    m, n = a.shape
    k = min(m, n)
    r = a.copy()
    scale = math.sqrt(float((a * a).sum()))
    vs: list[tuple[np.ndarray, float]] = []
    for j in range(k):
        x = r[j:, j].copy()
        normx = math.sqrt(float((x * x).sum()))
        v = x
        v[0] += math.copysign(normx, x[0]) if x[0] != 0.0 else normx
        vn2 = float((v * v).sum())
        if vn2 > 0.0:
            r[j:, j:] -= (2.0 / vn2) * np.outer(v, v @ r[j:, j:])
        vs.append((v, vn2))
        r[j, j] = -math.copysign(normx, x[0]) if x[0] != 0.0 else -normx
        r[j + 1:, j] = 0.0
    diag = np.abs(np.diag(r)[:k])
    if np.any(diag <= rank_tol * scale):
        worst = int(np.argmin(diag))
        raise RankDeficiencyError(
            f"column {worst} is dependent within tolerance ({diag[worst]:.3e} <= "
            f"{rank_tol:.1e} * {scale:.3e})")
    q = np.eye(m, k)
    for j in range(k - 1, -1, -1):
        v, vn2 = vs[j]
        if vn2 > 0.0:
            q[j:, :] -= (2.0 / vn2) * np.outer(v, v @ q[j:, :])
    flip = np.where(np.diag(r)[:k] < 0.0, -1.0, 1.0)
    q *= flip
    r = r[:k, :] * flip[:, None]
    return q, r
