"""Dense and sparse matrix primitives shared by the solvers.

Dense matrices are plain 2-D float64 numpy arrays (validated at the API
boundary with :func:`check_dense`).  Sparse matrices use a compressed
sparse row layout with sorted, duplicate-free column indices and no
explicitly stored zeros; the row-projection solvers and the pair-sampling
preprocessor rely on those invariants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CsrMatrix",
    "GramCounts",
    "MatrixMarketError",
    "check_dense",
    "gram_sparse",
    "matvec",
    "read_matrix_market",
]

# entries whose squared magnitude falls below this are treated as zero when
# building Gram products (guards denormal blowups in alpha tables)
GRAM_DROP_TOL_SQ = 1e-300


class MatrixMarketError(ValueError):
    """Malformed Matrix Market input; message carries the offending line."""


def check_dense(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a 2-D float64 array with finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={a.ndim}")
    if a.shape[0] == 0 or a.shape[1] == 0:
        raise ValueError(f"{name} must be nonempty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


@dataclass
class CsrMatrix:
    """Compressed sparse row matrix.

    Invariants enforced on construction: row_ptr is nondecreasing with
    row_ptr[0] == 0 and row_ptr[-1] == nnz; column indices are sorted and
    unique within each row and lie in [0, cols); values are finite and
    never exactly zero.
    """

    rows: int
    cols: int
    row_ptr: np.ndarray   # (rows+1,) int64
    col_idx: np.ndarray   # (nnz,)   int64
    values: np.ndarray    # (nnz,)   float64

    def __post_init__(self):
        self.row_ptr = np.ascontiguousarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.ascontiguousarray(self.col_idx, dtype=np.int64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.rows <= 0 or self.cols <= 0:
            raise ValueError(f"empty shape ({self.rows}, {self.cols})")
        if self.row_ptr.shape != (self.rows + 1,):
            raise ValueError("row_ptr length must be rows+1")
        if self.row_ptr[0] != 0 or self.row_ptr[-1] != self.col_idx.shape[0]:
            raise ValueError("row_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ValueError("row_ptr must be nondecreasing")
        if self.col_idx.shape != self.values.shape:
            raise ValueError("col_idx and values length mismatch")
        if self.col_idx.size:
            if self.col_idx.min() < 0 or self.col_idx.max() >= self.cols:
                raise ValueError("column index out of range")
            # sorted strictly within each row: diffs may only be <= 0 at row starts
            d = np.diff(self.col_idx)
            starts = self.row_ptr[1:-1]
            bad = d <= 0
            bad[starts[(starts > 0) & (starts < self.col_idx.size)] - 1] = False
            if np.any(bad):
                raise ValueError("column indices must be sorted and unique per row")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values contain NaN or Inf")
        if np.any(self.values == 0.0):
            raise ValueError("explicitly stored zero value")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row i (views, do not mutate)."""
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def row_norms_sq(self) -> np.ndarray:
        """Squared Euclidean norm of every row.  (rows,)"""
        sq = self.values * self.values
        out = np.zeros(self.rows)
        cs = np.concatenate(([0.0], np.cumsum(sq)))
        out = cs[self.row_ptr[1:]] - cs[self.row_ptr[:-1]]
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            cols, vals = self.row(i)
            out[i, cols] = vals
        return out

    @classmethod
    def from_dense(cls, a) -> "CsrMatrix":
        a = check_dense(a)
        m, n = a.shape
        mask = a != 0.0
        counts = mask.sum(axis=1)
        row_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        col_idx = np.nonzero(mask)[1].astype(np.int64)
        values = a[mask].astype(np.float64)
        return cls(m, n, row_ptr, col_idx, values)

    @classmethod
    def from_coo(cls, rows, cols, vals, shape) -> "CsrMatrix":
        """Build from unordered triplets; duplicates are summed, zeros dropped."""
        m, n = shape
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if rows.size:
            if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
                raise ValueError("triplet index out of range")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if rows.size:
            # collapse duplicate (i, j) runs by summation
            new_run = np.ones(rows.size, dtype=bool)
            new_run[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            run_id = np.cumsum(new_run) - 1
            summed = np.zeros(run_id[-1] + 1)
            np.add.at(summed, run_id, vals)
            rows, cols, vals = rows[new_run], cols[new_run], summed
            keep = vals != 0.0
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
        row_ptr = np.zeros(m + 1, dtype=np.int64)
        np.add.at(row_ptr, rows + 1, 1)
        row_ptr = np.cumsum(row_ptr).astype(np.int64)
        return cls(m, n, row_ptr, cols, vals)


def matvec(a, x) -> np.ndarray:
    """Product a @ x for a dense array or CsrMatrix.  x: (cols,)"""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(a, CsrMatrix):
        if x.shape != (a.cols,):
            raise ValueError(f"shape mismatch: {a.shape} @ {x.shape}")
        prod = a.values * x[a.col_idx]
        cs = np.concatenate(([0.0], np.cumsum(prod)))
        return cs[a.row_ptr[1:]] - cs[a.row_ptr[:-1]]
    a = check_dense(a)
    if x.shape != (a.shape[1],):
        raise ValueError(f"shape mismatch: {a.shape} @ {x.shape}")
    return a @ x


@dataclass
class GramCounts:
    """Work counters from one gram_sparse call.

    pair_mults: total intersection multiplications over pairs i <= l with
    structurally overlapping support (the published per-pair dot cost s_il).
    t_size: number of ordered pairs (i, l), diagonal included, whose rows
    overlap structurally.
    """

    m: int = 0
    pair_mults: int = 0
    t_size: int = 0


def gram_sparse(a: CsrMatrix, counts: GramCounts | None = None) -> CsrMatrix:
    """Gram matrix a @ a.T as CSR, via row-pair sparse dots.

    Only pairs with structurally intersecting column support are touched
    (one sparse dot each, upper triangle mirrored), so the work matches the
    published intersection-size accounting.  Dots that come out exactly
    zero are dropped from the result; pass `counts` to capture the work
    done including those.
    """
    if not isinstance(a, CsrMatrix):
        raise TypeError("gram_sparse expects a CsrMatrix")
    m = a.rows
    # rows touching each column, for candidate discovery
    col_rows: list[list[int]] = [[] for _ in range(a.cols)]
    for i in range(m):
        lo, hi = a.row_ptr[i], a.row_ptr[i + 1]
        for c in a.col_idx[lo:hi]:
            col_rows[c].append(i)

    out_rows: list[int] = []
    out_cols: list[int] = []
    out_vals: list[float] = []
    pair_mults = 0
    t_upper = 0   # unordered overlapping pairs i < l
    diag_seen = 0
    stamp = np.full(m, -1, dtype=np.int64)
    for i in range(m):
        ci, vi = a.row(i)
        # candidates l >= i sharing at least one column with row i
        cand: list[int] = []
        for c in ci:
            for l in col_rows[c]:
                if l >= i and stamp[l] != i:
                    stamp[l] = i
                    cand.append(l)
        cand.sort()
        for l in cand:
            cl, vl = a.row(l)
            # two-pointer intersection dot
            s = 0.0
            nmul = 0
            p, q = 0, 0
            while p < ci.size and q < cl.size:
                cp, cq = ci[p], cl[q]
                if cp == cq:
                    s += vi[p] * vl[q]
                    nmul += 1
                    p += 1
                    q += 1
                elif cp < cq:
                    p += 1
                else:
                    q += 1
            pair_mults += nmul
            if l == i:
                diag_seen += 1
            else:
                t_upper += 1
            if s * s >= GRAM_DROP_TOL_SQ:
                out_rows.append(i)
                out_cols.append(l)
                out_vals.append(s)
                if l != i:
                    out_rows.append(l)
                    out_cols.append(i)
                    out_vals.append(s)   # mirrored, bitwise symmetric
    if counts is not None:
        counts.m = m
        counts.pair_mults = pair_mults
        counts.t_size = 2 * t_upper + diag_seen
    return CsrMatrix.from_coo(out_rows, out_cols, out_vals, (m, m))


# ---------------------------------------------------------------------------
# Matrix Market I/O

def _mm_parse_value(tok: str, field: str, path: str, lineno: int) -> float:
    try:
        return float(tok) if field == "real" else float(int(tok))
    except ValueError:
        raise MatrixMarketError(
            f"{path}:{lineno}: bad {field} value {tok!r}") from None


def read_matrix_market(path: str):
    """Read a Matrix Market file.

    Coordinate files come back as CsrMatrix (duplicate entries summed),
    array files as a dense ndarray.  Real and integer fields only; general
    and symmetric symmetries only.  Errors name the offending line.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MatrixMarketError(f"{path}:1: empty file")
    header = lines[0].split()
    if len(header) != 5 or header[0] != "%%MatrixMarket" or header[1].lower() != "matrix":
        raise MatrixMarketError(f"{path}:1: bad header {lines[0]!r}")
    fmt, fld, sym = header[2].lower(), header[3].lower(), header[4].lower()
    if fmt not in ("coordinate", "array"):
        raise MatrixMarketError(f"{path}:1: unsupported format {fmt!r}")
    if fld not in ("real", "integer"):
        raise MatrixMarketError(f"{path}:1: unsupported field {fld!r} (real or integer only)")
    if sym not in ("general", "symmetric"):
        raise MatrixMarketError(f"{path}:1: unsupported symmetry {sym!r}")

    # skip comments and blank lines before the size line
    k = 1
    while k < len(lines) and (lines[k].startswith("%") or not lines[k].strip()):
        k += 1
    if k >= len(lines):
        raise MatrixMarketError(f"{path}:{len(lines)}: missing size line")
    size_tok = lines[k].split()
    size_lineno = k + 1

    if fmt == "coordinate":
        if len(size_tok) != 3:
            raise MatrixMarketError(f"{path}:{size_lineno}: coordinate size line needs 'rows cols nnz'")
        try:
            m, n, nnz = (int(t) for t in size_tok)
        except ValueError:
            raise MatrixMarketError(f"{path}:{size_lineno}: bad size line {lines[k]!r}") from None
        if m <= 0 or n <= 0 or nnz < 0:
            raise MatrixMarketError(f"{path}:{size_lineno}: bad dimensions")
        ri: list[int] = []
        ci: list[int] = []
        vv: list[float] = []
        seen = 0
        for off, line in enumerate(lines[k + 1:], start=size_lineno + 1):
            if not line.strip() or line.startswith("%"):
                continue
            tok = line.split()
            if len(tok) != 3:
                raise MatrixMarketError(f"{path}:{off}: expected 'i j value', got {line!r}")
            try:
                i, j = int(tok[0]), int(tok[1])
            except ValueError:
                raise MatrixMarketError(f"{path}:{off}: bad index in {line!r}") from None
            if not (1 <= i <= m and 1 <= j <= n):
                raise MatrixMarketError(f"{path}:{off}: index ({i}, {j}) outside {m} x {n}")
            v = _mm_parse_value(tok[2], fld, path, off)
            seen += 1
            ri.append(i - 1)
            ci.append(j - 1)
            vv.append(v)
            if sym == "symmetric" and i != j:
                ri.append(j - 1)
                ci.append(i - 1)
                vv.append(v)
        if seen != nnz:
            raise MatrixMarketError(f"{path}: expected {nnz} entries, found {seen}")
        if sym == "symmetric" and m != n:
            raise MatrixMarketError(f"{path}:{size_lineno}: symmetric matrix must be square")
        return CsrMatrix.from_coo(ri, ci, vv, (m, n))

    # array format: column-major dense values
    if len(size_tok) != 2:
        raise MatrixMarketError(f"{path}:{size_lineno}: array size line needs 'rows cols'")
    try:
        m, n = (int(t) for t in size_tok)
    except ValueError:
        raise MatrixMarketError(f"{path}:{size_lineno}: bad size line {lines[k]!r}") from None
    if m <= 0 or n <= 0:
        raise MatrixMarketError(f"{path}:{size_lineno}: bad dimensions")
    if sym == "symmetric" and m != n:
        raise MatrixMarketError(f"{path}:{size_lineno}: symmetric matrix must be square")
    want = m * n if sym == "general" else m * (m + 1) // 2
    vals: list[float] = []
    for off, line in enumerate(lines[k + 1:], start=size_lineno + 1):
        if not line.strip() or line.startswith("%"):
            continue
        for tok in line.split():
            vals.append(_mm_parse_value(tok, fld, path, off))
    if len(vals) != want:
        raise MatrixMarketError(f"{path}: expected {want} array values, found {len(vals)}")
    out = np.zeros((m, n))
    if sym == "general":
        out[:] = np.array(vals).reshape((n, m)).T   # file is column-major
    else:
        p = 0
        for j in range(n):
            for i in range(j, m):
                out[i, j] = vals[p]
                out[j, i] = vals[p]
                p += 1
    return check_dense(out, name=path)
