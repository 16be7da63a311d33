"""Solver interface over the compiled kernels.

One configuration type covers all five methods (RK, RBK, GTRK, RBKVS,
mRBKVS); RK is exactly the volume-sampled block method with block size 1,
and the dispatcher treats it that way.  Every solver measures progress as
RSE = |x^k - x_ref|^2 / |x^0 - x_ref|^2 against a caller-supplied
ReferenceSolution and stops at rse_tol or the iteration budget.

Randomness: one counter-based stream per run, seeded from the config.
Kernels consume uniforms from fixed-size chunks pre-drawn off the stream,
so a trajectory is a pure function of (matrix, rhs, config, reference).
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .decomp import DEFAULT_RANK_TOL, svd_jacobi
from .matrices import CsrMatrix, check_dense, matvec
from .rng import RngStream
from .spectral import SpectralProfile, convergence_rate, spectral_profile
from .volume import EnumSampler, VsPreprocS2, vs_preprocess_s2

__all__ = [
    "METHODS",
    "ReferenceSolution",
    "RunRecord",
    "SolverConfig",
    "solve",
    "solve_gtrk",
    "solve_mrbkvs",
    "solve_rbk",
    "solve_rbkvs",
    "step_rk",
    "step_block_project",
]

METHODS = ("RK", "RBK", "GTRK", "RBKVS", "mRBKVS")

UNIFORM_CHUNK = 1 << 16

# a planted/derived reference with residual below this (relative to b) is
# treated as exactly consistent when deciding whether to report an error floor
CONSISTENT_REL_TOL = 1e-12


@dataclass
class SolverConfig:
    """Method selection plus every knob the iteration reads.

    s is the volume-sampling block size (RBKVS/mRBKVS), p the partition
    block size (RBK).  omega and beta only act on mRBKVS.
    """

    method: str = "RBKVS"
    s: int = 2
    p: int = 2
    omega: float = 1.0
    beta: float = 0.0
    max_iters: int = 200_000_000
    rse_tol: float = 1e-12
    seed: int = 0
    history_stride: int = 100

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.s < 1:
            raise ValueError("block size s must be >= 1")
        if self.p < 1:
            raise ValueError("partition block p must be >= 1")
        if self.beta < 0.0:
            raise ValueError("momentum beta must be >= 0")
        if self.method == "mRBKVS" and not 0.0 < self.omega < 2.0:
            raise ValueError("mRBKVS needs 0 < omega < 2")
        if self.rse_tol <= 0.0:
            raise ValueError("rse_tol must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.history_stride < 1:
            raise ValueError("history_stride must be >= 1")


@dataclass
class ReferenceSolution:
    """The point RSE is measured against, with its origin recorded."""

    x_star: np.ndarray
    provenance: str   # known-planted | pseudoinverse | consensus-mean

    PROVENANCES = ("known-planted", "pseudoinverse", "consensus-mean")

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=np.float64).ravel()
        if self.provenance not in self.PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    @classmethod
    def planted(cls, x_star) -> "ReferenceSolution":
        return cls(x_star=x_star, provenance="known-planted")

    @classmethod
    def pseudoinverse(cls, a, b, x0=None) -> "ReferenceSolution":
        """Least-norm solution A^+ b, shifted by the null-space component
        of x0 when a nonzero start is used (the limit point of every
        row-action method started at x0)."""
        dense = a.to_dense() if isinstance(a, CsrMatrix) else check_dense(a)
        b = np.asarray(b, dtype=np.float64).ravel()
        res = svd_jacobi(dense)
        r = res.rank
        coeff = (res.left[:, :r].T @ b) / res.singular_values[:r]
        x = res.right[:, :r] @ coeff
        if x0 is not None:
            x0 = np.asarray(x0, dtype=np.float64).ravel()
            x = x + (x0 - res.right[:, :r] @ (res.right[:, :r].T @ x0))
        return cls(x_star=x, provenance="pseudoinverse")

    @classmethod
    def consensus_mean(cls, c) -> "ReferenceSolution":
        c = np.asarray(c, dtype=np.float64).ravel()
        return cls(x_star=np.full(c.shape[0], c.mean()), provenance="consensus-mean")


@dataclass
class RunRecord:
    """Everything a single solve produced."""

    method: str
    iterations: int
    final_rse: float
    converged: bool
    seed_used: int
    wall_time: float
    rse_history: list = field(default_factory=list)   # (iteration, rse) pairs
    floor_estimate: float | None = None   # predicted RSE floor for inconsistent systems
    # final iterate, for callers that need the point itself; not serialized
    x_final: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_json(self, include_timing: bool = False) -> str:
        """Canonical JSON: sorted keys, no whitespace variance.  Timing is
        zeroed unless requested so that seeded reruns are byte-identical."""
        payload = {
            "method": self.method,
            "iterations": self.iterations,
            "final_rse": self.final_rse,
            "converged": self.converged,
            "seed_used": self.seed_used,
            "wall_time": self.wall_time if include_timing else 0.0,
            "rse_history": [[int(i), float(r)] for i, r in self.rse_history],
            "floor_estimate": self.floor_estimate,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# single-step reference operations (pure Python; the fuzzed invariants run here)

def _as_csr(a) -> CsrMatrix:
    if isinstance(a, CsrMatrix):
        return a
    return CsrMatrix.from_dense(check_dense(a))


def _row_slice(a, i):
    """Row i as (cols, vals) for CSR or dense input."""
    if isinstance(a, CsrMatrix):
        return a.row(i)
    cols = np.flatnonzero(a[i])
    return cols, a[i, cols]


def step_rk(a, b, x, rng: RngStream) -> np.ndarray:
    """One row projection; the row is drawn by squared-norm weights via
    the shared min-index inverse-CDF rule."""
    b = np.asarray(b, dtype=np.float64).ravel()
    if isinstance(a, CsrMatrix):
        rn = a.row_norms_sq()
    else:
        a = check_dense(a)
        rn = np.einsum("ij,ij->i", a, a)
    crow = np.cumsum(rn)
    total = crow[-1]
    u1 = rng.uniform()
    if u1 <= 0.0:
        u1 = 1e-300
    lo, hi = 0, rn.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) >> 1
        if u1 <= crow[mid] / total:
            hi = mid
        else:
            lo = mid + 1
    i = lo
    cols, vals = _row_slice(a, i)
    out = np.array(x, dtype=np.float64)
    resid = float(vals @ out[cols]) - b[i]
    out[cols] -= (resid / rn[i]) * vals
    return out


def step_block_project(a, b, s_idx, x) -> np.ndarray:
    """Exact projection onto the equations of the index set.

    Size 1 reduces to the row projection; size 2 uses the closed 2x2 Gram
    solve with the degenerate fallback; larger sets go through an SVD
    least-squares solve at the global rank tolerance.
    """
    b = np.asarray(b, dtype=np.float64).ravel()
    s_idx = list(s_idx)
    if len(s_idx) == 0:
        raise ValueError("block index set must be nonempty")
    out = np.array(x, dtype=np.float64)
    if len(s_idx) == 1:
        i = s_idx[0]
        cols, vals = _row_slice(a, i)
        rn = float(vals @ vals)
        if rn <= 0.0:
            return out
        resid = float(vals @ out[cols]) - b[i]
        out[cols] -= (resid / rn) * vals
        return out
    if len(s_idx) == 2:
        i, j = s_idx
        ci, vi = _row_slice(a, i)
        cj, vj = _row_slice(a, j)
        g00 = float(vi @ vi)
        g11 = float(vj @ vj)
        shared_i, ii, jj = np.intersect1d(ci, cj, assume_unique=True, return_indices=True)
        g01 = float(vi[ii] @ vj[jj])
        r0 = float(vi @ out[ci]) - b[i]
        r1 = float(vj @ out[cj]) - b[j]
        det = g00 * g11 - g01 * g01
        if abs(det) <= _kernels.PAIR_DET_TOL * g00 * g11:
            if g00 >= g11:
                y0, y1 = (r0 / g00 if g00 > 0.0 else 0.0), 0.0
            else:
                y0, y1 = 0.0, r1 / g11
        else:
            y0 = (g11 * r0 - g01 * r1) / det
            y1 = (g00 * r1 - g01 * r0) / det
        out[ci] -= y0 * vi
        out[cj] -= y1 * vj
        return out
    dense = a.to_dense() if isinstance(a, CsrMatrix) else check_dense(a)
    rows = dense[s_idx]
    resid = rows @ out - b[s_idx]
    res = svd_jacobi(rows)
    r = res.rank
    if r > 0:
        coeff = (res.left[:, :r].T @ resid) / res.singular_values[:r]
        out -= res.right[:, :r] @ coeff
    return out


# ---------------------------------------------------------------------------
# full solves

def _validate_system(a, b, ref):
    csr = _as_csr(a)
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.shape[0] != csr.rows:
        raise ValueError(f"rhs length {b.shape[0]} != row count {csr.rows}")
    if not isinstance(ref, ReferenceSolution):
        raise TypeError("ref must be a ReferenceSolution")
    if ref.x_star.shape[0] != csr.cols:
        raise ValueError(f"reference length {ref.x_star.shape[0]} != column count {csr.cols}")
    return csr, b


def _start_point(csr, x0):
    if x0 is None:
        return np.zeros(csr.cols)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    if x0.shape[0] != csr.cols:
        raise ValueError(f"x0 length {x0.shape[0]} != column count {csr.cols}")
    return x0.copy()


def _history_pairs(hist, k, stride, final_rse):
    pairs = [(t * stride, float(hist[t])) for t in range(k // stride + 1)]
    if k % stride == 0:
        pairs[-1] = (k, float(final_rse))
    else:
        pairs.append((k, float(final_rse)))
    return pairs


def _trivial_record(method, config, x, n_iterations=0) -> RunRecord:
    return RunRecord(
        method=method,
        iterations=n_iterations,
        final_rse=0.0,
        converged=True,
        seed_used=config.seed,
        wall_time=0.0,
        rse_history=[(0, 0.0)],
        x_final=x.copy(),
    )


def _run_chunked(kernel_call, rng, max_iters):
    """Feed uniform chunks to a kernel until it stops; returns its status."""
    while True:
        chunk = rng.uniform(UNIFORM_CHUNK)
        status, _ = kernel_call(chunk)
        if status != _kernels.STATUS_CHUNK:
            return status


def _floor_estimate(profile: SpectralProfile, s: int, rstar_sq: float, err0sq: float) -> float:
    rho = convergence_rate(profile, s)
    ratio_last = profile.esp_drop_ratio(s - 1, profile.m - 1, s)
    return ratio_last * rstar_sq / (rho * err0sq)


def _finalize(method, config, csr, x, ref, err0sq, k, hist, status, t0,
              floor_fn=None) -> RunRecord:
    wall = time.perf_counter() - t0
    diff = x - ref.x_star
    final_err = float(diff @ diff)
    final_rse = final_err / err0sq
    converged = status == _kernels.STATUS_CONVERGED
    floor = None
    if not converged and floor_fn is not None:
        floor = floor_fn()
    return RunRecord(
        method=method,
        iterations=int(k),
        final_rse=final_rse,
        converged=converged,
        seed_used=config.seed,
        wall_time=wall,
        rse_history=_history_pairs(hist, int(k), config.history_stride, final_rse),
        floor_estimate=floor,
        x_final=x.copy(),
    )


def _common_state(csr, b, ref, x0, config):
    x = _start_point(csr, x0)
    diff = x - ref.x_star
    err0sq = float(diff @ diff)
    rstar = matvec(csr, ref.x_star) - b
    st = np.array([err0sq, 0.0, 0.0])
    ist = np.zeros(2, dtype=np.int64)
    nhist = config.max_iters // config.history_stride + 1
    hist = np.zeros(nhist)
    hist[0] = 1.0
    thresh = config.rse_tol * err0sq
    return x, err0sq, rstar, st, ist, hist, thresh


def _pair_tables_arrays(pre: VsPreprocS2):
    return (pre.psi, pre.zeta, pre.row_norms_sq, pre.nbr_offsets,
            pre.nbr_cols, pre.phi, pre.alpha_nbr, pre.alpha_row)


def _block_catalog_grams(csr: CsrMatrix, blk_offsets, blk_rows):
    """Ragged per-block Gram storage from CSR row dot products."""
    sizes = np.diff(blk_offsets)
    gram_offsets = np.zeros(blk_offsets.shape[0], dtype=np.int64)
    gram_offsets[1:] = np.cumsum(sizes * sizes)
    gram_vals = np.zeros(int(gram_offsets[-1]))
    for bi in range(sizes.shape[0]):
        base = int(blk_offsets[bi])
        bs = int(sizes[bi])
        g0 = int(gram_offsets[bi])
        rows = [csr.row(int(blk_rows[base + t])) for t in range(bs)]
        for t in range(bs):
            ct, vt = rows[t]
            for q in range(t, bs):
                cq, vq = rows[q]
                _, ti, qi = np.intersect1d(ct, cq, assume_unique=True, return_indices=True)
                dot = float(vt[ti] @ vq[qi])
                gram_vals[g0 + t * bs + q] = dot
                gram_vals[g0 + q * bs + t] = dot
    return gram_offsets, gram_vals


def _resolve_pre(a, csr, config, pre):
    """Volume-sampling machinery for the configured block size."""
    if config.s == 2:
        if pre is None:
            pre = vs_preprocess_s2(a)
        if not isinstance(pre, VsPreprocS2):
            raise TypeError("s=2 needs a VsPreprocS2 (or None to build one)")
        if pre.m != csr.rows:
            raise ValueError("preprocessing tables built for a different row count")
        return pre
    if pre is None:
        pre = EnumSampler(a, config.s)
    if not isinstance(pre, EnumSampler):
        raise TypeError(f"s={config.s} needs an EnumSampler (or None to build one)")
    if pre.s != config.s or pre.m != csr.rows:
        raise ValueError("enumeration sampler does not match the system/block size")
    return pre


def solve_rbkvs(a, b, config: SolverConfig, pre=None, ref: ReferenceSolution = None,
                x0=None, profile: SpectralProfile = None) -> RunRecord:
    """Volume-sampled block projections; s=1 is exactly the single-row
    method, s=2 the table-driven fast path, larger s the enumeration path."""
    csr, b = _validate_system(a, b, ref)
    x, err0sq, rstar, st, ist, hist, thresh = _common_state(csr, b, ref, x0, config)
    method = "RK" if config.s == 1 else "RBKVS"
    if err0sq == 0.0:
        return _trivial_record(method, config, x)
    rng = RngStream(config.seed)
    t0 = time.perf_counter()
    if config.s == 1:
        rn = pre if isinstance(pre, np.ndarray) else csr.row_norms_sq()
        if np.all(rn <= 0.0):
            raise ValueError("all rows are zero")
        crow = np.cumsum(rn)
        status = _run_chunked(
            lambda u: _kernels.rk_kernel(
                csr.row_ptr, csr.col_idx, csr.values, b, rstar, ref.x_star,
                rn, crow, x, st, ist, u, hist,
                config.history_stride, config.max_iters, thresh, err0sq),
            rng, config.max_iters)
    elif config.s == 2:
        pre = _resolve_pre(a, csr, config, pre)
        vbuf = np.zeros(csr.cols)
        dummy = np.ones(1)
        psi, zeta, rnq, offs, cols, phi, anbr, arow = _pair_tables_arrays(pre)
        status = _run_chunked(
            lambda u: _kernels.pair_kernel(
                csr.row_ptr, csr.col_idx, csr.values, b, rstar, ref.x_star,
                x, vbuf, st, ist, u, hist,
                config.history_stride, config.max_iters, thresh, err0sq,
                1.0, 0, psi, zeta, rnq, offs, cols, phi, anbr, arow, dummy),
            rng, config.max_iters)
    else:
        sampler = _resolve_pre(a, csr, config, pre)
        blk_offsets = (np.arange(sampler.subsets.shape[0] + 1, dtype=np.int64)
                       * config.s)
        blk_rows = sampler.subsets.ravel().astype(np.int64)
        gram_offsets, gram_vals = _block_catalog_grams(csr, blk_offsets, blk_rows)
        vbuf = np.zeros(csr.cols)
        rbuf = np.empty(config.s)
        ybuf = np.empty(config.s)
        status = _run_chunked(
            lambda u: _kernels.block_kernel(
                csr.row_ptr, csr.col_idx, csr.values, b, rstar, ref.x_star,
                x, vbuf, st, ist, u, hist,
                config.history_stride, config.max_iters, thresh, err0sq,
                blk_offsets, blk_rows, gram_offsets, gram_vals,
                sampler.cdf, 1, rbuf, ybuf),
            rng, config.max_iters)

    rstar_sq = float(rstar @ rstar)
    bsq = float(b @ b)
    floor_fn = None
    if rstar_sq > CONSISTENT_REL_TOL * max(bsq, 1.0):
        prof = profile
        s = config.s

        def floor_fn():
            p = prof if prof is not None else spectral_profile(csr)
            return _floor_estimate(p, s, rstar_sq, err0sq)

    return _finalize(method, config, csr, x, ref, err0sq, ist[0], hist, status, t0, floor_fn)


def solve_mrbkvs(a, b, config: SolverConfig, pre=None, ref: ReferenceSolution = None,
                 x0=None) -> RunRecord:
    """Volume-sampled pair projections with heavy-ball momentum.  The
    analysis (and this implementation) is specific to block size 2; the
    iteration starts with a doubled initial point."""
    if config.s != 2:
        raise ValueError("the momentum variant is implemented for block size 2 only")
    csr, b = _validate_system(a, b, ref)
    x, err0sq, rstar, st, ist, hist, thresh = _common_state(csr, b, ref, x0, config)
    if err0sq == 0.0:
        return _trivial_record("mRBKVS", config, x)
    pre = _resolve_pre(a, csr, config, pre)
    rng = RngStream(config.seed)
    xu = np.zeros(csr.cols)
    vbuf = np.zeros(csr.cols)
    psi, zeta, rnq, offs, cols, phi, anbr, arow = _pair_tables_arrays(pre)
    t0 = time.perf_counter()
    status = _run_chunked(
        lambda u: _kernels.momentum_pair_kernel(
            csr.row_ptr, csr.col_idx, csr.values, b, rstar, ref.x_star,
            x, xu, vbuf, st, ist, u, hist,
            config.history_stride, config.max_iters, thresh, err0sq,
            config.omega, config.beta,
            psi, zeta, rnq, offs, cols, phi, anbr, arow),
        rng, config.max_iters)
    return _finalize("mRBKVS", config, csr, x, ref, err0sq, ist[0], hist, status, t0)


def solve_rbk(a, b, config: SolverConfig, ref: ReferenceSolution = None,
              rng: RngStream = None, x0=None) -> RunRecord:
    """Random-partition block projections: one uniform permutation fixes
    the blocks, then every iteration projects onto a uniformly chosen block."""
    csr, b = _validate_system(a, b, ref)
    x, err0sq, rstar, st, ist, hist, thresh = _common_state(csr, b, ref, x0, config)
    if err0sq == 0.0:
        return _trivial_record("RBK", config, x)
    if rng is None:
        rng = RngStream(config.seed)
    m = csr.rows
    p = min(config.p, m)
    perm = rng.permutation(m)
    nblocks = (m + p - 1) // p
    blk_offsets = np.minimum(np.arange(nblocks + 1, dtype=np.int64) * p, m)
    blk_rows = perm.astype(np.int64)
    gram_offsets, gram_vals = _block_catalog_grams(csr, blk_offsets, blk_rows)
    vbuf = np.zeros(csr.cols)
    rbuf = np.empty(p)
    ybuf = np.empty(p)
    dummy_cdf = np.ones(1)
    t0 = time.perf_counter()
    status = _run_chunked(
        lambda u: _kernels.block_kernel(
            csr.row_ptr, csr.col_idx, csr.values, b, rstar, ref.x_star,
            x, vbuf, st, ist, u, hist,
            config.history_stride, config.max_iters, thresh, err0sq,
            blk_offsets, blk_rows, gram_offsets, gram_vals,
            dummy_cdf, 0, rbuf, ybuf),
        rng, config.max_iters)
    return _finalize("RBK", config, csr, x, ref, err0sq, ist[0], hist, status, t0)


def solve_gtrk(a, b, config: SolverConfig, ref: ReferenceSolution = None,
               rng: RngStream = None, x0=None) -> RunRecord:
    """Two-row projections with norm-weighted row draws: the first row by
    squared norms, the second by squared norms renormalized over the rest."""
    csr, b = _validate_system(a, b, ref)
    x, err0sq, rstar, st, ist, hist, thresh = _common_state(csr, b, ref, x0, config)
    if err0sq == 0.0:
        return _trivial_record("GTRK", config, x)
    if rng is None:
        rng = RngStream(config.seed)
    rn = csr.row_norms_sq()
    if int(np.count_nonzero(rn > 0.0)) < 2:
        raise ValueError("two-row sampling needs at least 2 nonzero rows")
    crow = np.cumsum(rn)
    vbuf = np.zeros(csr.cols)
    dummy = np.ones(1)
    dummy_i = np.zeros(1, dtype=np.int64)
    t0 = time.perf_counter()
    status = _run_chunked(
        lambda u: _kernels.pair_kernel(
            csr.row_ptr, csr.col_idx, csr.values, b, rstar, ref.x_star,
            x, vbuf, st, ist, u, hist,
            config.history_stride, config.max_iters, thresh, err0sq,
            1.0, 1, dummy, dummy, rn, dummy_i, dummy_i, dummy, dummy, dummy, crow),
        rng, config.max_iters)
    return _finalize("GTRK", config, csr, x, ref, err0sq, ist[0], hist, status, t0)


def solve(a, b, config: SolverConfig, pre=None, ref: ReferenceSolution = None,
          x0=None, profile: SpectralProfile = None) -> RunRecord:
    """Dispatch on config.method.  method='RK' forces block size 1."""
    if config.method == "RK":
        cfg = SolverConfig(**{**config.__dict__, "method": "RBKVS", "s": 1})
        return solve_rbkvs(a, b, cfg, pre=pre, ref=ref, x0=x0, profile=profile)
    if config.method == "RBKVS":
        return solve_rbkvs(a, b, config, pre=pre, ref=ref, x0=x0, profile=profile)
    if config.method == "mRBKVS":
        return solve_mrbkvs(a, b, config, pre=pre, ref=ref, x0=x0)
    if config.method == "RBK":
        return solve_rbk(a, b, config, ref=ref, x0=x0)
    if config.method == "GTRK":
        return solve_gtrk(a, b, config, ref=ref, x0=x0)
    raise ValueError(f"unknown method {config.method!r}")
