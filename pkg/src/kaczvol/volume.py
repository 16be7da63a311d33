"""Exact volume sampling of row subsets.

For block size 2 the pair distribution P({i,j}) proportional to
det(A_{ij} A_{ij}^T) = |A_i|^2 |A_j|^2 - <A_i,A_j>^2 admits linear-size
cumulative tables: suffix norm sums zeta, per-row prefix sums phi of
squared Gram entries over the sparse neighbor list, partial row masses
alpha, and the row-level cumulative psi.  Sampling is two binary searches
plus a lazy closed-form scan inside one neighbor window; no O(m^2) state
is ever materialized for sparse inputs.

For other block sizes (and as the test oracle for s=2) subsets are
enumerated outright, guarded by the global enumeration budget.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .matrices import GRAM_DROP_TOL_SQ, CsrMatrix, GramCounts, check_dense, gram_sparse
from .rng import RngStream
from .spectral import _subset_dets, ensure_enum_budget

__all__ = [
    "EnumSampler",
    "VsPreprocS2",
    "content_hash",
    "load_tables",
    "pair_from_uniforms",
    "save_tables",
    "vs_enumerate",
    "vs_preprocess_s2",
    "vs_prob_s2_exact",
    "vs_sample_s2",
]

TABLES_FORMAT_VERSION = 1

# systems whose total pair mass is this small relative to |A|_F^4 are
# within rounding of rank one and cannot be pair-sampled
RANK2_REL_TOL = 1e-12

# stand-in for a uniform draw of exactly 0.0, which would otherwise let the
# min-index rule select a zero-probability leading plateau
_U_FLOOR = 1e-300


def content_hash(a) -> str:
    """Stable identity of a matrix's numeric content (hex sha256)."""
    h = hashlib.sha256()
    if isinstance(a, CsrMatrix):
        h.update(b"csr")
        h.update(np.array([a.rows, a.cols], dtype="<i8").tobytes())
        h.update(a.row_ptr.astype("<i8").tobytes())
        h.update(a.col_idx.astype("<i8").tobytes())
        h.update(a.values.astype("<f8").tobytes())
    else:
        a = check_dense(a)
        h.update(b"dense")
        h.update(np.array(a.shape, dtype="<i8").tobytes())
        h.update(a.astype("<f8").tobytes())
    return h.hexdigest()


@dataclass
class VsPreprocS2:
    """Preprocessed cumulative tables for pair volume sampling.

    zeta[i] = sum of squared row norms from row i on (zeta[m] = 0, so zeta
    is nonincreasing and zeta[0] = |A|_F^2).  Rows i keep their Gram
    neighbors at or right of the diagonal in nbr_cols[nbr_offsets[i]:
    nbr_offsets[i+1]], with running squared-entry sums phi and partial
    masses alpha_nbr at those columns; alpha starts at exactly 0 on the
    diagonal.  alpha_row[i] is the full mass of row i (clamped at 0) and
    psi is its cumulative over i < m-1.
    """

    m: int
    zeta: np.ndarray          # (m+1,)
    row_norms_sq: np.ndarray  # (m,)  Gram diagonal
    nbr_offsets: np.ndarray   # (m+1,) int64
    nbr_cols: np.ndarray      # (nnz_upper,) int64
    phi: np.ndarray           # (nnz_upper,)
    alpha_nbr: np.ndarray     # (nnz_upper,)
    alpha_row: np.ndarray     # (m,)
    psi: np.ndarray           # (m-1,)
    matrix_hash: str
    op_count: int | None = None     # published preprocessing flop count (sparse route)
    gram_mults: int | None = None   # intersection multiplications inside the Gram pass

    @property
    def total_mass(self) -> float:
        return float(self.psi[-1])


def _gram_upper_rows(a):
    """Per-row (cols >= i, values) of the Gram matrix, plus diagonal and counts.

    CsrMatrix inputs go through the sparse row-pair product; dense inputs
    take one matmul (nothing sparse to exploit) and keep only structural
    nonzeros.  The diagonal entry is always present.
    """
    if isinstance(a, CsrMatrix):
        counts = GramCounts()
        g = gram_sparse(a, counts)
        m = a.rows
        diag = np.zeros(m)
        cols_per_row = []
        vals_per_row = []
        for i in range(m):
            cols, vals = g.row(i)
            take = cols >= i
            c = cols[take].copy()
            v = vals[take].copy()
            if c.size == 0 or c[0] != i:
                # diagonal dropped as an exact zero cannot happen for a
                # nonzero row; re-insert defensively for zero-norm rows
                c = np.concatenate(([i], c))
                v = np.concatenate(([0.0], v))
            diag[i] = v[0]
            cols_per_row.append(c)
            vals_per_row.append(v)
        flops = 2 * counts.pair_mults + 2 * counts.t_size + 5 * m - 2
        return diag, cols_per_row, vals_per_row, flops, counts.pair_mults
    a = check_dense(a)
    m = a.shape[0]
    g = a @ a.T
    diag = np.diag(g).copy()
    cols_per_row = []
    vals_per_row = []
    for i in range(m):
        tail = g[i, i:]
        keep = tail * tail > GRAM_DROP_TOL_SQ   # same drop rule as the sparse route
        keep[0] = True   # diagonal stays
        c = (i + np.flatnonzero(keep)).astype(np.int64)
        cols_per_row.append(c)
        vals_per_row.append(tail[keep].copy())
    return diag, cols_per_row, vals_per_row, None, None


def vs_preprocess_s2(a) -> VsPreprocS2:
    """Preprocess a matrix for pair volume sampling.

    Raises ValueError when the matrix has fewer than 2 rows or its total
    pair mass vanishes (numerical rank below 2).
    """
    if isinstance(a, CsrMatrix):
        m = a.rows
    else:
        a = check_dense(a)
        m = a.shape[0]
    if m < 2:
        raise ValueError("pair sampling needs at least 2 rows")
    diag, cols_per_row, vals_per_row, flops, gram_mults = _gram_upper_rows(a)

    zeta = np.zeros(m + 1)
    for i in range(m - 1, -1, -1):
        zeta[i] = diag[i] + zeta[i + 1]

    offsets = np.zeros(m + 1, dtype=np.int64)
    for i in range(m):
        offsets[i + 1] = offsets[i] + cols_per_row[i].size
    nbr_cols = np.empty(offsets[-1], dtype=np.int64)
    phi = np.empty(offsets[-1])
    alpha_nbr = np.empty(offsets[-1])
    alpha_row = np.zeros(m)
    for i in range(m):
        lo, hi = offsets[i], offsets[i + 1]
        c = cols_per_row[i]
        v = vals_per_row[i]
        nbr_cols[lo:hi] = c
        run = 0.0
        for k in range(c.size):
            run += v[k] * v[k]
            phi[lo + k] = run
            if k == 0:
                alpha_nbr[lo] = 0.0   # alpha(i, i) is identically zero
            else:
                alpha_nbr[lo + k] = diag[i] * (zeta[i] - zeta[c[k] + 1]) - run
        total = diag[i] * (zeta[i] - zeta[m]) - run
        alpha_row[i] = total if total > 0.0 else 0.0

    psi = np.cumsum(alpha_row[: m - 1])
    if psi[-1] <= RANK2_REL_TOL * zeta[0] * zeta[0]:
        raise ValueError("total pair mass is zero within tolerance: numerical rank below 2")
    return VsPreprocS2(
        m=m,
        zeta=zeta,
        row_norms_sq=diag,
        nbr_offsets=offsets,
        nbr_cols=nbr_cols,
        phi=phi,
        alpha_nbr=alpha_nbr,
        alpha_row=alpha_row,
        psi=psi,
        matrix_hash=content_hash(a),
        op_count=flops,
        gram_mults=gram_mults,
    )


def _alpha_at(t: VsPreprocS2, i: int, j: int) -> float:
    """Partial mass alpha(i, j) for any i <= j < m, from the tables."""
    if j == i:
        return 0.0
    lo, hi = int(t.nbr_offsets[i]), int(t.nbr_offsets[i + 1])
    cols = t.nbr_cols
    # largest neighbor index k in [lo, hi) with cols[k] <= j
    a, b = lo, hi - 1
    while a < b:
        mid = (a + b + 1) // 2
        if cols[mid] <= j:
            a = mid
        else:
            b = mid - 1
    k = a
    if cols[k] == j:
        return float(t.alpha_nbr[k])
    return float(t.row_norms_sq[i]) * (float(t.zeta[i]) - float(t.zeta[j + 1])) - float(t.phi[k])


def pair_from_uniforms(t: VsPreprocS2, u1: float, u2: float) -> tuple[int, int]:
    """Deterministic pair (i, j), i < j, from two uniforms in [0, 1).

    First binary search walks psi for the row; the second walks the row's
    neighbor masses; the final window between two neighbors is resolved
    with the closed-form alpha, evaluated only where probed.  Exactly the
    inverse CDF of the pair distribution: min-index on u <= cdf, so
    zero-probability plateaus (parallel rows) are never selected.
    """
    if u1 <= 0.0:
        u1 = _U_FLOOR
    if u2 <= 0.0:
        u2 = _U_FLOOR
    m = t.m
    psi = t.psi
    psi_last = psi[m - 2]
    lo, hi = 0, m - 2
    while lo < hi:
        mid = (lo + hi) // 2
        if u1 <= psi[mid] / psi_last:
            hi = mid
        else:
            lo = mid + 1
    i0 = lo

    atot = t.alpha_row[i0]
    o0, o1 = int(t.nbr_offsets[i0]), int(t.nbr_offsets[i0 + 1])
    anbr = t.alpha_nbr
    cols = t.nbr_cols
    rn = float(t.row_norms_sq[i0])
    zeta = t.zeta
    if u2 <= anbr[o1 - 1] / atot:
        # u2 lands at or before the last neighbor: find the first neighbor
        # whose mass covers it, then scan the window ending at that neighbor
        lo_k, hi_k = o0, o1 - 1
        while lo_k < hi_k:
            mid = (lo_k + hi_k) // 2
            if u2 <= anbr[mid] / atot:
                hi_k = mid
            else:
                lo_k = mid + 1
        k0 = lo_k   # > o0 because alpha is 0 on the diagonal and u2 > 0
        j_lo = int(cols[k0 - 1]) + 1
        j_hi = int(cols[k0])
        phi_prev = float(t.phi[k0 - 1])
    else:
        # beyond the last neighbor: only norm growth remains out to row m-1
        j_lo = int(cols[o1 - 1]) + 1
        j_hi = m - 1
        phi_prev = float(t.phi[o1 - 1])
    lo_j, hi_j = j_lo, j_hi
    while lo_j < hi_j:
        mid = (lo_j + hi_j) // 2
        a_mid = rn * (float(zeta[i0]) - float(zeta[mid + 1])) - phi_prev
        if u2 <= a_mid / atot:
            hi_j = mid
        else:
            lo_j = mid + 1
    return i0, lo_j


def vs_sample_s2(t: VsPreprocS2, rng: RngStream) -> tuple[int, int]:
    """Draw one volume-sampled pair (i, j), i < j.  Consumes 2 uniforms."""
    u1 = rng.uniform()
    u2 = rng.uniform()
    return pair_from_uniforms(t, u1, u2)


def vs_prob_s2_exact(t: VsPreprocS2, i: int, j: int) -> float:
    """Exact probability of the unordered pair {i, j}, i < j, under the
    tables: the row factor alpha_row[i]/psi_total times the in-row factor
    (alpha(i,j) - alpha(i,j-1))/alpha_row[i]."""
    if not 0 <= i < j < t.m:
        raise ValueError(f"need 0 <= i < j < {t.m}, got ({i}, {j})")
    atot = float(t.alpha_row[i])
    if atot <= 0.0:
        return 0.0
    row_factor = atot / t.total_mass
    inc = _alpha_at(t, i, j) - _alpha_at(t, i, j - 1)
    if inc <= 0.0:
        return 0.0
    return row_factor * (inc / atot)


def linear_scan_pair(t: VsPreprocS2, u1: float, u2: float) -> tuple[int, int]:
    """Reference sampler: same min-index inverse CDF, walked linearly.

    Evaluates alpha through the same table expressions as the binary
    version so index agreement is exact, not approximate.
    """
    if u1 <= 0.0:
        u1 = _U_FLOOR
    if u2 <= 0.0:
        u2 = _U_FLOOR
    m = t.m
    psi_last = t.psi[m - 2]
    i0 = m - 2
    for i in range(m - 1):
        if u1 <= t.psi[i] / psi_last:
            i0 = i
            break
    atot = t.alpha_row[i0]
    for j in range(i0 + 1, m):
        if u2 <= _alpha_at(t, i0, j) / atot:
            return i0, j
    return i0, m - 1


# ---------------------------------------------------------------------------
# enumeration sampler, any block size

class EnumSampler:
    """Exact subset sampler by full enumeration (budget-guarded)."""

    def __init__(self, a, s: int):
        if isinstance(a, CsrMatrix):
            a = a.to_dense()
        a = check_dense(a)
        m = a.shape[0]
        if not 1 <= s <= m:
            raise ValueError(f"block size {s} outside [1, {m}]")
        ensure_enum_budget(m, s)
        subsets, dets = _subset_dets(a, s)
        total = dets.sum()
        if total <= 0.0:
            raise ValueError(f"all {s}-subsets are singular; rank(A) < {s}")
        self.m = m
        self.s = s
        self.subsets = np.array(subsets, dtype=np.int64)   # (count, s)
        self.probs = dets / total
        self.cdf = np.cumsum(self.probs)

    def index_from_uniform(self, u: float) -> int:
        """Min-index inverse CDF over subset order."""
        if u <= 0.0:
            u = _U_FLOOR
        lo, hi = 0, len(self.cdf) - 1
        last = self.cdf[-1]
        while lo < hi:
            mid = (lo + hi) // 2
            if u <= self.cdf[mid] / last:
                hi = mid
            else:
                lo = mid + 1
        return lo

    def sample(self, rng: RngStream) -> np.ndarray:
        """One subset as a sorted index array.  Consumes 1 uniform."""
        return self.subsets[self.index_from_uniform(rng.uniform())]


def vs_enumerate(a, s: int, rng: RngStream) -> np.ndarray:
    """One volume-sampled s-subset by full enumeration.  For repeated
    draws build an EnumSampler once instead."""
    return EnumSampler(a, s).sample(rng)


# ---------------------------------------------------------------------------
# sidecar serialization (preprocess once, reuse across runs)

def save_tables(t: VsPreprocS2, path: str) -> None:
    np.savez_compressed(
        path,
        format_version=np.int64(TABLES_FORMAT_VERSION),
        m=np.int64(t.m),
        zeta=t.zeta,
        row_norms_sq=t.row_norms_sq,
        nbr_offsets=t.nbr_offsets,
        nbr_cols=t.nbr_cols,
        phi=t.phi,
        alpha_nbr=t.alpha_nbr,
        alpha_row=t.alpha_row,
        psi=t.psi,
        matrix_hash=np.bytes_(t.matrix_hash.encode()),
        op_count=np.int64(-1 if t.op_count is None else t.op_count),
        gram_mults=np.int64(-1 if t.gram_mults is None else t.gram_mults),
    )


def load_tables(path: str, expect_hash: str | None = None) -> VsPreprocS2:
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != TABLES_FORMAT_VERSION:
            raise ValueError(f"{path}: tables format {version}, expected {TABLES_FORMAT_VERSION}")
        stored_hash = bytes(z["matrix_hash"]).decode()
        if expect_hash is not None and stored_hash != expect_hash:
            raise ValueError(f"{path}: tables were built for a different matrix")
        op_count = int(z["op_count"])
        gram_mults = int(z["gram_mults"])
        return VsPreprocS2(
            m=int(z["m"]),
            zeta=z["zeta"],
            row_norms_sq=z["row_norms_sq"],
            nbr_offsets=z["nbr_offsets"],
            nbr_cols=z["nbr_cols"],
            phi=z["phi"],
            alpha_nbr=z["alpha_nbr"],
            alpha_row=z["alpha_row"],
            psi=z["psi"],
            matrix_hash=stored_hash,
            op_count=None if op_count < 0 else op_count,
            gram_mults=None if gram_mults < 0 else gram_mults,
        )
