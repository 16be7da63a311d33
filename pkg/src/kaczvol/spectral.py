"""Spectral constants for block-projection methods.

Everything here is driven by the squared singular values lambda of the
system matrix, zero-padded to the row count m.  A SpectralProfile keeps
lambda plus prefix/suffix tables of elementary symmetric polynomials so
that leave-one-out values e_l(lambda minus entry i) cost O(l) each.  The
tables are built on mu = lambda / lambda_max to dodge overflow; public
ratio helpers cancel the scale exactly.

The enumeration oracles at the bottom are deliberately naive (subset
loops, library pinv/eigh): they are the independent route the identity
implementations are tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .decomp import DEFAULT_RANK_TOL, svd_jacobi
from .matrices import CsrMatrix, check_dense

__all__ = [
    "ENUM_BUDGET",
    "AdjugateCheck",
    "MomentumConstants",
    "SpectralProfile",
    "adjugate",
    "adjugate_identity_checks",
    "adjugate_identity_details",
    "convergence_rate",
    "ensure_enum_budget",
    "esp_ratio_lower_bound_check",
    "esp_ratio_margin",
    "expectation_kernel",
    "expected_pinv_gram_bruteforce",
    "expected_projector_bruteforce",
    "momentum_constants",
    "momentum_step_cap",
    "momentum_window",
    "spectral_profile",
]

# hard cap on brute-force subset enumeration
ENUM_BUDGET = 1_000_000


def ensure_enum_budget(m: int, s: int) -> int:
    count = math.comb(m, s)
    if count > ENUM_BUDGET:
        raise ValueError(f"C({m},{s}) = {count} subsets exceeds enumeration budget {ENUM_BUDGET}")
    return count


class SpectralProfile:
    """Squared singular values of a matrix plus esp lookup tables.

    lam: (m,) nonincreasing, zero-padded past the rank.  esp(l) returns
    e_l(lam); esp_drop(l, i) returns e_l of lam with 0-based entry i
    removed; esp_drop_ratio(l, i, s) returns e_l(lam_minus_i) / e_s(lam)
    without forming either raw value (overflow-safe).
    """

    def __init__(self, singular_values, m: int):
        sv = np.asarray(singular_values, dtype=np.float64).ravel()
        if sv.size == 0:
            raise ValueError("profile needs at least one positive singular value")
        if np.any(sv <= 0.0) or np.any(np.diff(sv) > 0.0):
            raise ValueError("singular values must be positive and nonincreasing")
        if m < sv.size:
            raise ValueError(f"m={m} smaller than rank {sv.size}")
        self.rank = int(sv.size)
        self.m = int(m)
        self.lam = np.zeros(m)
        self.lam[: self.rank] = sv * sv
        self.lam_max = float(self.lam[0])
        self._mu = self.lam / self.lam_max
        self._level = -1
        self._prefix = None   # (m+1, L+1): e_a of the first i entries of mu
        self._suffix = None   # (m+1, L+1): e_a of entries i..m-1 of mu

    @classmethod
    def from_singular_values(cls, sv, m: int) -> "SpectralProfile":
        return cls(sv, m)

    @property
    def frob_sq(self) -> float:
        return float(self.lam.sum())

    @property
    def spectral_sq(self) -> float:
        return self.lam_max

    def _ensure(self, level: int) -> None:
        level = min(max(level, 1), self.m)
        if level <= self._level:
            return
        m, mu = self.m, self._mu
        pre = np.zeros((m + 1, level + 1))
        suf = np.zeros((m + 1, level + 1))
        pre[:, 0] = 1.0
        suf[:, 0] = 1.0
        for i in range(1, m + 1):
            x = mu[i - 1]
            top = min(i, level)
            pre[i, 1 : top + 1] = pre[i - 1, 1 : top + 1] + x * pre[i - 1, 0:top]
        for i in range(m - 1, -1, -1):
            x = mu[i]
            top = min(m - i, level)
            suf[i, 1 : top + 1] = suf[i + 1, 1 : top + 1] + x * suf[i + 1, 0:top]
        self._prefix, self._suffix, self._level = pre, suf, level

    def esp_scaled(self, l: int) -> float:
        """e_l(mu) where mu = lam / lam_max."""
        if l < 0:
            raise ValueError("negative esp order")
        if l > self.m:
            return 0.0
        self._ensure(l)
        return float(self._prefix[self.m, l])

    def esp(self, l: int) -> float:
        """Raw e_l(lam).  Overflows only for extreme scale*order combos."""
        return self.esp_scaled(l) * self.lam_max**l

    def esp_drop_scaled(self, l: int, i: int) -> float:
        """e_l(mu with 0-based entry i removed)."""
        if not 0 <= i < self.m:
            raise ValueError(f"drop index {i} outside [0, {self.m})")
        if l < 0:
            raise ValueError("negative esp order")
        if l > self.m - 1:
            return 0.0
        self._ensure(l)
        pre, suf = self._prefix, self._suffix
        total = 0.0
        for a in range(l + 1):
            total += pre[i, a] * suf[i + 1, l - a]
        return float(total)

    def esp_drop(self, l: int, i: int) -> float:
        return self.esp_drop_scaled(l, i) * self.lam_max**l

    def esp_drop_ratio(self, l: int, i: int, s: int) -> float:
        """e_l(lam_minus_i) / e_s(lam), scale-cancelled."""
        den = self.esp_scaled(s)
        if den == 0.0:
            raise ValueError(f"e_{s}(lam) is zero (s exceeds rank {self.rank})")
        return self.esp_drop_scaled(l, i) / den * self.lam_max ** (l - s)


def spectral_profile(a, tol: float = DEFAULT_RANK_TOL) -> SpectralProfile:
    """Profile of a matrix: singular values via one-sided Jacobi, zero-padded."""
    if isinstance(a, CsrMatrix):
        a = a.to_dense()
    a = check_dense(a)
    res = svd_jacobi(a, tol=tol)
    if res.rank == 0:
        raise ValueError("zero matrix has no spectral profile")
    return SpectralProfile(res.singular_values, a.shape[0])


def _require_s(profile: SpectralProfile, s: int) -> None:
    if not 1 <= s <= profile.rank:
        raise ValueError(f"block size s={s} outside [1, rank={profile.rank}]")


def convergence_rate(profile: SpectralProfile, s: int) -> float:
    """Expected per-step decay constant: smallest positive squared singular
    value over the tail energy sum(lam[s-1:rank]).  The squared error of
    the block method contracts in expectation by (1 - this) per step."""
    _require_s(profile, s)
    tail = float(profile.lam[s - 1 : profile.rank].sum())
    return float(profile.lam[profile.rank - 1]) / tail


def expectation_kernel(profile: SpectralProfile, left, s: int) -> np.ndarray:
    """The m x m kernel through which expected block projections factor.

    left: (m, rank) orthonormal columns from the thin SVD.  Directions
    orthogonal to them all carry the same leave-one-out esp weight (they
    correspond to zero-padded entries of lam), which is why no explicit
    basis completion is needed.
    """
    _require_s(profile, s)
    left = check_dense(left, name="left singular vectors")
    m, r = left.shape
    if m != profile.m or r != profile.rank:
        raise ValueError(f"left vectors {left.shape} do not match profile ({profile.m}, {profile.rank})")
    d = np.array([profile.esp_drop_ratio(s - 1, i, s) for i in range(r)])
    d_zero = profile.esp_drop_ratio(s - 1, m - 1, s)   # weight of any padded direction
    return (left * (d - d_zero)) @ left.T + d_zero * np.eye(m)


def esp_ratio_margin(profile: SpectralProfile, s: int) -> float:
    """Worst relative margin of the leave-one-out esp ratio lower bound.

    For every 1-based i the ratio e_{s-1}(lam_-i)/e_s(lam) must be at
    least 1/(lam[min(i,s)] + tail past s); returns min over i of
    ratio*denominator - 1, which is >= 0 up to rounding when the bound holds.
    """
    _require_s(profile, s)
    r = profile.rank
    tail = float(profile.lam[s : r].sum())   # 1-based j in [s+1, rank]
    worst = math.inf
    for i in range(1, profile.m + 1):
        ratio = profile.esp_drop_ratio(s - 1, i - 1, s)
        denom = float(profile.lam[min(i, s) - 1]) + tail
        worst = min(worst, ratio * denom - 1.0)
    return worst


def esp_ratio_lower_bound_check(profile: SpectralProfile, s: int) -> bool:
    """True iff the leave-one-out esp ratio lower bound holds for every
    index, to 1e-12 relative slack."""
    return esp_ratio_margin(profile, s) >= -1e-12


@dataclass
class MomentumConstants:
    """Constants of the two-step expected-error recurrence for the
    momentum solver: F_{k+1} <= coef1*F_k + coef2*F_{k-1}.

    rate is the dominant root (coef1 + sqrt(coef1^2 + 4 coef2))/2 and the
    bound prefactor is 1 + overshoot with overshoot = rate - coef1 >= 0.
    applicable is False when coef1 + coef2 >= 1 (recurrence not
    contracting; the bound says nothing there).
    """

    omega: float
    beta: float
    coef1: float
    coef2: float
    rate: float
    overshoot: float
    applicable: bool


def momentum_constants(profile: SpectralProfile, s: int, omega: float, beta: float) -> MomentumConstants:
    _require_s(profile, s)
    if not 0.0 < omega < 2.0:
        raise ValueError(f"relaxation omega={omega} outside (0, 2)")
    if beta < 0.0:
        raise ValueError(f"momentum beta={beta} must be nonnegative")
    rho = convergence_rate(profile, s)
    ratio_last = profile.esp_drop_ratio(s - 1, profile.m - 1, s)
    coef1 = 1.0 + 3.0 * beta + 2.0 * beta * beta - omega * (2.0 - omega + beta) * rho
    coef2 = beta + 2.0 * beta * beta + omega * beta * ratio_last * profile.spectral_sq
    rate = (coef1 + math.sqrt(coef1 * coef1 + 4.0 * coef2)) / 2.0
    return MomentumConstants(
        omega=omega,
        beta=beta,
        coef1=coef1,
        coef2=coef2,
        rate=rate,
        overshoot=rate - coef1,
        applicable=bool(coef1 + coef2 < 1.0),
    )


def momentum_step_cap(profile: SpectralProfile, s: int) -> float:
    """Largest relaxation omega for which the expected-iterate decay
    guarantee applies: e_s(lam) / (e_{s-1}(lam_minus_last) * ||A||_2^2)."""
    _require_s(profile, s)
    ratio_last = profile.esp_drop_ratio(s - 1, profile.m - 1, s)
    return 1.0 / (ratio_last * profile.spectral_sq)


def momentum_window(profile: SpectralProfile, s: int, omega: float) -> tuple[float, float]:
    """Open interval of momentum values beta with guaranteed decay of the
    expected iterate at rate beta per step, for the given omega."""
    _require_s(profile, s)
    cap = momentum_step_cap(profile, s)
    if not 0.0 < omega <= cap * (1.0 + 1e-12):
        raise ValueError(f"omega={omega} outside (0, {cap}] required for the expected-iterate guarantee")
    rho = convergence_rate(profile, s)
    lo = (1.0 - math.sqrt(omega * rho)) ** 2
    return (lo, 1.0)


# ---------------------------------------------------------------------------
# brute-force enumeration oracles (independent route; library pinv/eigh OK here)

def _subset_dets(a: np.ndarray, s: int):
    """All s-subsets with det(A_S A_S^T), negatives from rounding clipped to 0."""
    m = a.shape[0]
    ensure_enum_budget(m, s)
    subsets = list(combinations(range(m), s))
    dets = np.empty(len(subsets))
    for k, sub in enumerate(subsets):
        rows = a[list(sub)]
        g = rows @ rows.T
        d = float(np.linalg.det(g)) if s > 1 else float(g[0, 0])
        dets[k] = d if d > 0.0 else 0.0
    return subsets, dets


def expected_projector_bruteforce(a, s: int, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """E[A_S^+ A_S] by direct enumeration: sum of P(S) times the projector
    onto the row space of each block.  n x n."""
    a = check_dense(a)
    subsets, dets = _subset_dets(a, s)
    total = dets.sum()
    if total <= 0.0:
        raise ValueError(f"all {s}-subsets are singular; rank(A) < {s}")
    n = a.shape[1]
    out = np.zeros((n, n))
    for sub, d in zip(subsets, dets):
        if d == 0.0:
            continue
        rows = a[list(sub)]
        out += (d / total) * (np.linalg.pinv(rows, rcond=rank_tol) @ rows)
    return out


def expected_pinv_gram_bruteforce(a, s: int, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """E[I_S^T (A_S A_S^T)^+ I_S] by direct enumeration: the pinv of each
    block Gram embedded at rows/cols S.  m x m."""
    a = check_dense(a)
    subsets, dets = _subset_dets(a, s)
    total = dets.sum()
    if total <= 0.0:
        raise ValueError(f"all {s}-subsets are singular; rank(A) < {s}")
    m = a.shape[0]
    out = np.zeros((m, m))
    for sub, d in zip(subsets, dets):
        if d == 0.0:
            continue
        rows = a[list(sub)]
        g = rows @ rows.T
        gp = np.linalg.pinv(g, rcond=rank_tol, hermitian=True)
        idx = np.array(sub)
        out[np.ix_(idx, idx)] += (d / total) * gp
    return out


def adjugate(g) -> np.ndarray:
    """Adjugate by the cofactor definition (minor determinants).

    Deliberately direct: this is the oracle side, sized for small blocks.
    """
    g = check_dense(g, name="adjugate input")
    s = g.shape[0]
    if g.shape[1] != s:
        raise ValueError("adjugate needs a square matrix")
    if s == 1:
        return np.ones((1, 1))
    out = np.empty((s, s))
    for i in range(s):
        rows = [r for r in range(s) if r != i]
        for j in range(s):
            cols = [c for c in range(s) if c != j]
            minor = g[np.ix_(rows, cols)]
            # transposed cofactor: Adj[j, i] = (-1)^(i+j) det(minor_ij)
            out[j, i] = (-1.0) ** (i + j) * (float(np.linalg.det(minor)) if s > 2 else float(minor[0, 0]))
    return out


@dataclass
class AdjugateCheck:
    """Outcome of the subset-adjugate identity checks on one matrix."""

    embed_rel_err: float      # || sum_S embed(Adj(G_S)) - U diag(e_{s-1} drops) U^T ||_F relative
    det_sum_rel_err: float    # | sum_S det(G_S) - e_s(lam) | relative
    min_adjugate_eig: float   # most negative eigenvalue seen over all subset adjugates


def adjugate_identity_details(a, s: int, tol: float = DEFAULT_RANK_TOL) -> AdjugateCheck:
    """Verify the two enumeration identities behind the expectation kernel.

    The summed embedded adjugates must reproduce the leave-one-out esp
    diagonal in the left singular basis, the determinant total must equal
    e_s(lam), and every subset adjugate must be PSD up to rounding.
    """
    a = check_dense(a)
    m = a.shape[0]
    ensure_enum_budget(m, s)
    res = svd_jacobi(a, tol=tol)
    if not 1 <= s <= m:
        raise ValueError(f"s={s} outside [1, {m}]")
    profile = SpectralProfile(res.singular_values, m)
    lhs = np.zeros((m, m))
    det_sum = 0.0
    min_eig = math.inf
    for sub in combinations(range(m), s):
        rows = a[list(sub)]
        g = rows @ rows.T
        adj = adjugate(g)
        idx = np.array(sub)
        lhs[np.ix_(idx, idx)] += adj
        det_sum += float(np.linalg.det(g)) if s > 1 else float(g[0, 0])
        min_eig = min(min_eig, float(np.linalg.eigvalsh(adj).min()))
    u = res.left
    d = np.array([profile.esp_drop(s - 1, i) for i in range(res.rank)])
    d_zero = profile.esp_drop(s - 1, m - 1) if res.rank < m else 0.0
    rhs = (u * (d - d_zero)) @ u.T + d_zero * np.eye(m)
    scale = float(np.linalg.norm(rhs))
    embed_rel = float(np.linalg.norm(lhs - rhs)) / (scale if scale > 0.0 else 1.0)
    es = profile.esp(s)
    det_rel = abs(det_sum - es) / (abs(es) if es > 0.0 else 1.0)
    return AdjugateCheck(embed_rel_err=embed_rel, det_sum_rel_err=det_rel, min_adjugate_eig=min_eig)


def adjugate_identity_checks(a, s: int) -> bool:
    """True iff all three subset-adjugate identities hold: embedded-sum
    reconstruction to 1e-9 relative, determinant total to 1e-10 relative,
    and every subset adjugate PSD to -1e-10 eigenvalue slack."""
    res = adjugate_identity_details(a, s)
    return (
        res.embed_rel_err <= 1e-9
        and res.det_sum_rel_err <= 1e-10
        and res.min_adjugate_eig >= -1e-10
    )
