"""Compiled inner loops for the iterative solvers.

Every kernel consumes CSR arrays plus a pre-drawn chunk of uniforms and
runs until the chunk is exhausted (status 0), convergence (status 1), or
the iteration budget (status 2).  The Python wrappers in solvers.py own
the RNG stream and refill chunks, so trajectories depend only on the
stream contents, never on chunk boundaries.

Squared error against the reference solution is tracked incrementally
from the step scalars (one O(n) pass only for momentum, whose update is
dense by nature), exactly refreshed every 2^16 iterations, and always
confirmed by an exact recomputation before convergence is declared.

All cumulative-table comparisons are written in the division form
``u <= value / total`` so that kernel-side sampling is bit-identical to
the pure-Python reference samplers operating on the same arrays.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# exact error refresh cadence (power of two) and retry spacing after a
# failed convergence confirmation
REFRESH_MASK = (1 << 16) - 1
CONFIRM_BACKOFF = 1024

# stand-in for a uniform of exactly 0.0 (zero-probability plateaus must
# stay unselectable under the min-index rule)
U_FLOOR = 1e-300

# 2x2 Gram degeneracy threshold, relative to the product of row norms
PAIR_DET_TOL = 1e-14

# relative eigenvalue cutoff of the general block pseudo-solve
BLOCK_RANK_TOL = 1e-12

STATUS_CHUNK = 0
STATUS_CONVERGED = 1
STATUS_BUDGET = 2


@njit(cache=True, nogil=True, inline="always")
def _row_dot(indptr, indices, data, i, x):
    acc = 0.0
    for p in range(indptr[i], indptr[i + 1]):
        acc += data[p] * x[indices[p]]
    return acc


@njit(cache=True, nogil=True, inline="always")
def _pair_gram_dot(indptr, indices, data, i, j):
    """<A_i, A_j> over sorted CSR rows (two-pointer walk)."""
    p = indptr[i]
    pe = indptr[i + 1]
    q = indptr[j]
    qe = indptr[j + 1]
    acc = 0.0
    while p < pe and q < qe:
        ci = indices[p]
        cj = indices[q]
        if ci == cj:
            acc += data[p] * data[q]
            p += 1
            q += 1
        elif ci < cj:
            p += 1
        else:
            q += 1
    return acc


@njit(cache=True, nogil=True, inline="always")
def _exact_err(x, ref):
    acc = 0.0
    for t in range(x.shape[0]):
        d = x[t] - ref[t]
        acc += d * d
    return acc


@njit(cache=True, nogil=True, inline="always")
def _pair_solve(g00, g11, g01, r0, r1):
    """Solve the 2x2 Gram system, least-squares fallback when singular.

    Degenerate pairs project onto the larger-norm row (lower index wins
    ties); a fully zero pair is a no-op.
    """
    det = g00 * g11 - g01 * g01
    if abs(det) <= PAIR_DET_TOL * g00 * g11:
        if g00 >= g11:
            if g00 > 0.0:
                return r0 / g00, 0.0
            return 0.0, 0.0
        return 0.0, r1 / g11
    return (g11 * r0 - g01 * r1) / det, (g00 * r1 - g01 * r0) / det


@njit(cache=True, nogil=True, inline="always")
def _vs_pair_draw(psi, zeta, rnq, offs, cols, phi, anbr, arow, m, u1, u2):
    """Volume-sampled pair from two uniforms; twin of the pure-Python
    sampler (same arrays, same division-form comparisons, same windows)."""
    if u1 <= 0.0:
        u1 = U_FLOOR
    if u2 <= 0.0:
        u2 = U_FLOOR
    psi_last = psi[m - 2]
    lo = 0
    hi = m - 2
    while lo < hi:
        mid = (lo + hi) >> 1
        if u1 <= psi[mid] / psi_last:
            hi = mid
        else:
            lo = mid + 1
    i0 = lo

    atot = arow[i0]
    o0 = offs[i0]
    o1 = offs[i0 + 1]
    rn = rnq[i0]
    if u2 <= anbr[o1 - 1] / atot:
        lo_k = o0
        hi_k = o1 - 1
        while lo_k < hi_k:
            mid = (lo_k + hi_k) >> 1
            if u2 <= anbr[mid] / atot:
                hi_k = mid
            else:
                lo_k = mid + 1
        k0 = lo_k   # > o0: the diagonal entry carries exactly zero mass
        j_lo = cols[k0 - 1] + 1
        j_hi = cols[k0]
        phi_prev = phi[k0 - 1]
    else:
        j_lo = cols[o1 - 1] + 1
        j_hi = m - 1
        phi_prev = phi[o1 - 1]
    lo_j = j_lo
    hi_j = j_hi
    while lo_j < hi_j:
        mid = (lo_j + hi_j) >> 1
        a_mid = rn * (zeta[i0] - zeta[mid + 1]) - phi_prev
        if u2 <= a_mid / atot:
            hi_j = mid
        else:
            lo_j = mid + 1
    return i0, lo_j


@njit(cache=True, nogil=True)
def vs_pair_batch(psi, zeta, rnq, offs, cols, phi, anbr, arow, m, u, out):
    """Draw len(u)//2 volume-sampled pairs into out (draws, 2)."""
    nd = u.shape[0] // 2
    for t in range(nd):
        i, j = _vs_pair_draw(psi, zeta, rnq, offs, cols, phi, anbr, arow,
                             m, u[2 * t], u[2 * t + 1])
        out[t, 0] = i
        out[t, 1] = j


@njit(cache=True, nogil=True)
def rk_kernel(indptr, indices, data, b, rstar, ref, rn, crow, x,
              st, ist, u, hist, stride, max_iters, thresh, err0sq):
    """Single-row projections with squared-row-norm sampling."""
    m = rn.shape[0]
    total = crow[m - 1]
    nu = u.shape[0]
    upos = 0
    k = ist[0]
    ncu = ist[1]
    err2 = st[0]
    status = STATUS_BUDGET
    while True:
        if k >= max_iters:
            status = STATUS_BUDGET
            break
        if upos + 1 > nu:
            status = STATUS_CHUNK
            break
        u1 = u[upos]
        upos += 1
        if u1 <= 0.0:
            u1 = U_FLOOR
        lo = 0
        hi = m - 1
        while lo < hi:
            mid = (lo + hi) >> 1
            if u1 <= crow[mid] / total:
                hi = mid
            else:
                lo = mid + 1
        i = lo
        rni = rn[i]
        ri = -b[i]
        for p in range(indptr[i], indptr[i + 1]):
            ri += data[p] * x[indices[p]]
        theta = -ri / rni
        for p in range(indptr[i], indptr[i + 1]):
            x[indices[p]] += theta * data[p]
        d1 = theta * (ri - rstar[i])
        d2 = theta * theta * rni
        err2 += 2.0 * d1 + d2
        if err2 < 0.0:
            err2 = 0.0
        k += 1
        if (k & REFRESH_MASK) == 0:
            err2 = _exact_err(x, ref)
        if k % stride == 0:
            hist[k // stride] = err2 / err0sq
        if err2 <= thresh and k >= ncu:
            err2 = _exact_err(x, ref)
            if k % stride == 0:
                hist[k // stride] = err2 / err0sq
            if err2 <= thresh:
                status = STATUS_CONVERGED
                break
            ncu = k + CONFIRM_BACKOFF
    st[0] = err2
    ist[0] = k
    ist[1] = ncu
    return status, upos


@njit(cache=True, nogil=True)
def pair_kernel(indptr, indices, data, b, rstar, ref, x, vbuf,
                st, ist, u, hist, stride, max_iters, thresh, err0sq,
                omega, sampler_kind,
                psi, zeta, rnq, offs, cols, phi, anbr, arow, crow):
    """Plain two-row block projections.

    sampler_kind 0 draws pairs from the volume-sampling tables; kind 1
    draws row i by squared norms and row j by renormalized squared norms
    over the remaining rows.  rnq always holds the squared row norms used
    by both the sampler and the Gram solve.
    """
    m = rnq.shape[0]
    nu = u.shape[0]
    upos = 0
    k = ist[0]
    ncu = ist[1]
    err2 = st[0]
    total = crow[crow.shape[0] - 1]
    status = STATUS_BUDGET
    while True:
        if k >= max_iters:
            status = STATUS_BUDGET
            break
        if upos + 2 > nu:
            status = STATUS_CHUNK
            break
        u1 = u[upos]
        u2 = u[upos + 1]
        upos += 2
        if sampler_kind == 0:
            i, j = _vs_pair_draw(psi, zeta, rnq, offs, cols, phi, anbr, arow, m, u1, u2)
        else:
            if u1 <= 0.0:
                u1 = U_FLOOR
            if u2 <= 0.0:
                u2 = U_FLOOR
            lo = 0
            hi = m - 1
            while lo < hi:
                mid = (lo + hi) >> 1
                if u1 <= crow[mid] / total:
                    hi = mid
                else:
                    lo = mid + 1
            i = lo
            rem = total - rnq[i]
            lo = 0
            hi = m - 1
            while lo < hi:
                mid = (lo + hi) >> 1
                c = crow[mid]
                if mid >= i:
                    c = c - rnq[i]
                if u2 <= c / rem:
                    hi = mid
                else:
                    lo = mid + 1
            j = lo

        r0 = -b[i]
        for p in range(indptr[i], indptr[i + 1]):
            r0 += data[p] * x[indices[p]]
        r1 = -b[j]
        for p in range(indptr[j], indptr[j + 1]):
            r1 += data[p] * x[indices[p]]
        g01 = _pair_gram_dot(indptr, indices, data, i, j)
        y0, y1 = _pair_solve(rnq[i], rnq[j], g01, r0, r1)

        ev = y0 * (r0 - rstar[i]) + y1 * (r1 - rstar[j])
        ygy = y0 * y0 * rnq[i] + 2.0 * y0 * y1 * g01 + y1 * y1 * rnq[j]
        d1 = -(omega * ev)
        d2 = omega * omega * ygy

        for p in range(indptr[i], indptr[i + 1]):
            vbuf[indices[p]] += y0 * data[p]
        for p in range(indptr[j], indptr[j + 1]):
            vbuf[indices[p]] += y1 * data[p]
        for p in range(indptr[i], indptr[i + 1]):
            c = indices[p]
            x[c] -= omega * vbuf[c]
            vbuf[c] = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            c = indices[p]
            x[c] -= omega * vbuf[c]   # overlap columns were zeroed above
            vbuf[c] = 0.0

        err2 += 2.0 * d1 + d2
        if err2 < 0.0:
            err2 = 0.0
        k += 1
        if (k & REFRESH_MASK) == 0:
            err2 = _exact_err(x, ref)
        if k % stride == 0:
            hist[k // stride] = err2 / err0sq
        if err2 <= thresh and k >= ncu:
            err2 = _exact_err(x, ref)
            if k % stride == 0:
                hist[k // stride] = err2 / err0sq
            if err2 <= thresh:
                status = STATUS_CONVERGED
                break
            ncu = k + CONFIRM_BACKOFF
    st[0] = err2
    ist[0] = k
    ist[1] = ncu
    return status, upos


@njit(cache=True, nogil=True)
def momentum_pair_kernel(indptr, indices, data, b, rstar, ref, x, xu, vbuf,
                         st, ist, u, hist, stride, max_iters, thresh, err0sq,
                         omega, beta,
                         psi, zeta, rnq, offs, cols, phi, anbr, arow):
    """Volume-sampled pair projections with heavy-ball momentum.

    xu carries x^k - x^{k-1} (zero at entry: the iteration starts from a
    doubled initial point).  The update is dense, so x and xu advance in
    one fused pass; with beta = 0 every float operation reduces to the
    plain kernel's, giving identical trajectories.

    Error tracking needs two extra running scalars: st = (|e|^2, e.u,
    |u|^2) with e = x - ref, maintained from the same step quantities.
    """
    m = rnq.shape[0]
    n = x.shape[0]
    nu = u.shape[0]
    upos = 0
    k = ist[0]
    ncu = ist[1]
    err2 = st[0]
    s_eu = st[1]
    s_uu = st[2]
    status = STATUS_BUDGET
    while True:
        if k >= max_iters:
            status = STATUS_BUDGET
            break
        if upos + 2 > nu:
            status = STATUS_CHUNK
            break
        u1 = u[upos]
        u2 = u[upos + 1]
        upos += 2
        i, j = _vs_pair_draw(psi, zeta, rnq, offs, cols, phi, anbr, arow, m, u1, u2)

        r0 = -b[i]
        for p in range(indptr[i], indptr[i + 1]):
            r0 += data[p] * x[indices[p]]
        r1 = -b[j]
        for p in range(indptr[j], indptr[j + 1]):
            r1 += data[p] * x[indices[p]]
        g01 = _pair_gram_dot(indptr, indices, data, i, j)
        y0, y1 = _pair_solve(rnq[i], rnq[j], g01, r0, r1)

        ev = y0 * (r0 - rstar[i]) + y1 * (r1 - rstar[j])
        ygy = y0 * y0 * rnq[i] + 2.0 * y0 * y1 * g01 + y1 * y1 * rnq[j]
        uv = y0 * _row_dot(indptr, indices, data, i, xu) \
            + y1 * _row_dot(indptr, indices, data, j, xu)
        d1 = beta * s_eu - omega * ev
        d2 = beta * beta * s_uu - 2.0 * beta * omega * uv + omega * omega * ygy

        for p in range(indptr[i], indptr[i + 1]):
            vbuf[indices[p]] += y0 * data[p]
        for p in range(indptr[j], indptr[j + 1]):
            vbuf[indices[p]] += y1 * data[p]
        for t in range(n):
            du = beta * xu[t] - omega * vbuf[t]
            xu[t] = du
            x[t] += du
        for p in range(indptr[i], indptr[i + 1]):
            vbuf[indices[p]] = 0.0
        for p in range(indptr[j], indptr[j + 1]):
            vbuf[indices[p]] = 0.0

        err2 += 2.0 * d1 + d2
        if err2 < 0.0:
            err2 = 0.0
        s_eu = d1 + d2
        s_uu = d2 if d2 > 0.0 else 0.0
        k += 1
        if (k & REFRESH_MASK) == 0:
            err2 = _exact_err(x, ref)
            s_eu = 0.0
            s_uu = 0.0
            for t in range(n):
                s_eu += (x[t] - ref[t]) * xu[t]
                s_uu += xu[t] * xu[t]
        if k % stride == 0:
            hist[k // stride] = err2 / err0sq
        if err2 <= thresh and k >= ncu:
            err2 = _exact_err(x, ref)
            if k % stride == 0:
                hist[k // stride] = err2 / err0sq
            if err2 <= thresh:
                status = STATUS_CONVERGED
                break
            ncu = k + CONFIRM_BACKOFF
    st[0] = err2
    st[1] = s_eu
    st[2] = s_uu
    ist[0] = k
    ist[1] = ncu
    return status, upos


@njit(cache=True, nogil=True)
def block_kernel(indptr, indices, data, b, rstar, ref, x, vbuf,
                 st, ist, u, hist, stride, max_iters, thresh, err0sq,
                 blk_offsets, blk_rows, gram_offsets, gram_vals, cdf,
                 pick_kind, rbuf, ybuf):
    """Plain block projections over a fixed block catalog.

    pick_kind 0 chooses a block uniformly via floor(u * count) (random
    partition); kind 1 walks the supplied cumulative weights with the
    shared min-index rule (exact subset distribution).  Block Gram
    matrices are precomputed into ragged storage; sizes 1 and 2 use
    closed-form solves, larger blocks diagonalize their Gram.
    """
    nblocks = blk_offsets.shape[0] - 1
    nu = u.shape[0]
    upos = 0
    k = ist[0]
    ncu = ist[1]
    err2 = st[0]
    cdf_total = cdf[cdf.shape[0] - 1]
    status = STATUS_BUDGET
    while True:
        if k >= max_iters:
            status = STATUS_BUDGET
            break
        if upos + 1 > nu:
            status = STATUS_CHUNK
            break
        u1 = u[upos]
        upos += 1
        if pick_kind == 0:
            bi = int(u1 * nblocks)
            if bi >= nblocks:
                bi = nblocks - 1
        else:
            if u1 <= 0.0:
                u1 = U_FLOOR
            lo = 0
            hi = nblocks - 1
            while lo < hi:
                mid = (lo + hi) >> 1
                if u1 <= cdf[mid] / cdf_total:
                    hi = mid
                else:
                    lo = mid + 1
            bi = lo

        b0 = blk_offsets[bi]
        bs = blk_offsets[bi + 1] - b0
        g0 = gram_offsets[bi]
        for t in range(bs):
            row = blk_rows[b0 + t]
            rbuf[t] = _row_dot(indptr, indices, data, row, x) - b[row]
        if bs == 1:
            g00 = gram_vals[g0]
            if g00 > 0.0:
                ybuf[0] = rbuf[0] / g00
            else:
                ybuf[0] = 0.0
        elif bs == 2:
            y0, y1 = _pair_solve(gram_vals[g0], gram_vals[g0 + 3],
                                 gram_vals[g0 + 1], rbuf[0], rbuf[1])
            ybuf[0] = y0
            ybuf[1] = y1
        else:
            g = np.empty((bs, bs))
            for t in range(bs):
                for q in range(bs):
                    g[t, q] = gram_vals[g0 + t * bs + q]
            w, vecs = np.linalg.eigh(g)
            wmax = w[bs - 1]
            for t in range(bs):
                ybuf[t] = 0.0
            if wmax > 0.0:
                for t in range(bs):
                    if w[t] > BLOCK_RANK_TOL * wmax:
                        proj = 0.0
                        for q in range(bs):
                            proj += vecs[q, t] * rbuf[q]
                        proj /= w[t]
                        for q in range(bs):
                            ybuf[q] += vecs[q, t] * proj

        ev = 0.0
        ygy = 0.0
        for t in range(bs):
            row = blk_rows[b0 + t]
            ev += ybuf[t] * (rbuf[t] - rstar[row])
            acc = 0.0
            for q in range(bs):
                acc += gram_vals[g0 + t * bs + q] * ybuf[q]
            ygy += ybuf[t] * acc
        d1 = -ev
        d2 = ygy

        for t in range(bs):
            row = blk_rows[b0 + t]
            yt = ybuf[t]
            for p in range(indptr[row], indptr[row + 1]):
                vbuf[indices[p]] += yt * data[p]
        for t in range(bs):
            row = blk_rows[b0 + t]
            for p in range(indptr[row], indptr[row + 1]):
                c = indices[p]
                x[c] -= vbuf[c]
                vbuf[c] = 0.0

        err2 += 2.0 * d1 + d2
        if err2 < 0.0:
            err2 = 0.0
        k += 1
        if (k & REFRESH_MASK) == 0:
            err2 = _exact_err(x, ref)
        if k % stride == 0:
            hist[k // stride] = err2 / err0sq
        if err2 <= thresh and k >= ncu:
            err2 = _exact_err(x, ref)
            if k % stride == 0:
                hist[k // stride] = err2 / err0sq
            if err2 <= thresh:
                status = STATUS_CONVERGED
                break
            ncu = k + CONFIRM_BACKOFF
    st[0] = err2
    ist[0] = k
    ist[1] = ncu
    return status, upos
