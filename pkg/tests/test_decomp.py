"""One-sided Jacobi SVD and Householder QR."""

from __future__ import annotations

import numpy as np
import pytest

from kaczvol import RankDeficiencyError, qr_householder, svd_jacobi


def test_svd_singular_values_match_numpy():
    rng = np.random.default_rng(21)
    for _ in range(25):
        m, n = rng.integers(1, 12, size=2)
        a = rng.standard_normal((m, n))
        res = svd_jacobi(a)
        ref = np.linalg.svd(a, compute_uv=False)
        ref = ref[ref > 1e-12 * ref[0]] if ref.size else ref
        assert res.rank == ref.size
        assert np.allclose(res.singular_values, ref, rtol=1e-10, atol=1e-12)


def test_svd_factors_orthonormal_and_reconstruct():
    rng = np.random.default_rng(22)
    for _ in range(15):
        m, n = rng.integers(2, 10, size=2)
        a = rng.standard_normal((m, n))
        res = svd_jacobi(a)
        r = res.rank
        u, sv, v = res.left, res.singular_values, res.right
        assert u.shape == (m, r) and v.shape == (n, r)
        assert np.allclose(u.T @ u, np.eye(r), atol=1e-10)
        assert np.allclose(v.T @ v, np.eye(r), atol=1e-10)
        assert np.allclose((u * sv) @ v.T, a, atol=1e-9 * max(1.0, sv[0]))
        # nonincreasing positive spectrum
        assert np.all(sv > 0.0)
        assert np.all(np.diff(sv) <= 0.0)


def test_svd_detects_rank():
    rng = np.random.default_rng(23)
    for r in (1, 2, 3):
        b = rng.standard_normal((8, r))
        c = rng.standard_normal((r, 5))
        res = svd_jacobi(b @ c)
        assert res.rank == r


def test_svd_zero_matrix():
    res = svd_jacobi(np.zeros((3, 2)))
    assert res.rank == 0
    assert res.singular_values.size == 0


def test_svd_deterministic_bitwise():
    rng = np.random.default_rng(24)
    a = rng.standard_normal((7, 4))
    r1 = svd_jacobi(a)
    r2 = svd_jacobi(a)
    assert np.array_equal(r1.singular_values, r2.singular_values)
    assert np.array_equal(r1.left, r2.left)
    assert np.array_equal(r1.right, r2.right)


def test_svd_rejects_nonfinite():
    a = np.ones((2, 2))
    a[0, 0] = np.inf
    with pytest.raises(ValueError):
        svd_jacobi(a)


def test_qr_properties():
    rng = np.random.default_rng(25)
    for _ in range(15):
        n = int(rng.integers(2, 8))
        m = int(rng.integers(n, 12))
        a = rng.standard_normal((m, n))
        q, r = qr_householder(a)
        assert q.shape == (m, n) and r.shape == (n, n)
        assert np.allclose(q.T @ q, np.eye(n), atol=1e-12)
        assert np.allclose(q @ r, a, atol=1e-12 * max(1.0, np.abs(a).max()))
        assert np.allclose(r, np.triu(r), atol=0)
        assert np.all(np.diag(r) > 0.0)


def test_qr_rank_deficiency_error():
    a = np.ones((5, 3))
    a[:, 1] = 2.0 * a[:, 0]
    a[:, 2] = np.arange(5.0)
    with pytest.raises(RankDeficiencyError):
        qr_householder(a)
