"""Exact pair sampling: tables, closed-form probabilities, draws, caching."""

from __future__ import annotations

import numpy as np
import pytest

from kaczvol import (
    CsrMatrix,
    EnumSampler,
    RngStream,
    content_hash,
    load_tables,
    pair_from_uniforms,
    save_tables,
    vs_enumerate,
    vs_preprocess_s2,
    vs_prob_s2_exact,
    vs_sample_s2,
)
from kaczvol.volume import linear_scan_pair


def _pair_probs_bruteforce(a):
    """det(Gram of rows {i,j}) / total over all pairs, via numpy."""
    m = a.shape[0]
    dets = {}
    for i in range(m):
        for j in range(i + 1, m):
            rows = a[[i, j]]
            g = rows @ rows.T
            d = float(g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0])
            dets[(i, j)] = max(d, 0.0)
    total = sum(dets.values())
    return {k: v / total for k, v in dets.items()}, total


def test_tables_hand_example():
    # orthogonal rows with norms 1, 2, 3: pair weights 4, 9, 36, total 49
    a = np.diag([1.0, 2.0, 3.0])
    t = vs_preprocess_s2(a)
    assert t.psi[-1] == pytest.approx(49.0, rel=1e-15)
    # row 1 carries only pair (1,2): its in-row factor is exactly 1.0
    assert vs_prob_s2_exact(t, 1, 2) == 36.0 / 49.0
    assert vs_prob_s2_exact(t, 0, 1) == pytest.approx(4.0 / 49.0, rel=1e-15)
    assert vs_prob_s2_exact(t, 0, 2) == pytest.approx(9.0 / 49.0, rel=1e-15)
    # argument order is a strict contract: i < j
    with pytest.raises(ValueError):
        vs_prob_s2_exact(t, 2, 1)


def test_draw_hand_example():
    a = np.diag([1.0, 2.0, 3.0])
    t = vs_preprocess_s2(a)
    assert pair_from_uniforms(t, 0.01, 0.9) == (0, 2)


def test_identity_rows_uniform():
    t = vs_preprocess_s2(np.eye(3))
    for i in range(3):
        for j in range(i + 1, 3):
            assert vs_prob_s2_exact(t, i, j) == pytest.approx(1.0 / 3.0, rel=1e-15)


def test_probs_match_enumeration():
    rng = np.random.default_rng(41)
    for _ in range(8):
        a = rng.standard_normal((8, 5))
        t = vs_preprocess_s2(a)
        ref, _ = _pair_probs_bruteforce(a)
        for (i, j), p in ref.items():
            assert abs(vs_prob_s2_exact(t, i, j) - p) <= 1e-12
        total = sum(vs_prob_s2_exact(t, i, j) for (i, j) in ref)
        assert total == pytest.approx(1.0, rel=1e-12)


def test_enum_sampler_matches_closed_form():
    rng = np.random.default_rng(42)
    a = rng.standard_normal((7, 4))
    t = vs_preprocess_s2(a)
    enum = EnumSampler(a, 2)
    assert enum.probs.sum() == pytest.approx(1.0, rel=1e-12)
    for subset, p in zip(enum.subsets, enum.probs):
        i, j = subset
        assert abs(vs_prob_s2_exact(t, i, j) - p) <= 1e-12


def test_binary_equals_linear_scan():
    rng = np.random.default_rng(43)
    for _ in range(4):
        a = rng.standard_normal((8, 5))
        t = vs_preprocess_s2(a)
        for _ in range(300):
            u1, u2 = rng.random(), rng.random()
            assert pair_from_uniforms(t, u1, u2) == linear_scan_pair(t, u1, u2)


def test_draw_edge_uniforms():
    rng = np.random.default_rng(44)
    a = rng.standard_normal((6, 4))
    t = vs_preprocess_s2(a)
    m = a.shape[0]
    total = t.psi[-1]
    edge_vals = [0.0, 1e-300, 2.0 ** -53, 1.0 - 2.0 ** -53]
    # knots of the first-stage cdf are the trickiest inputs
    edge_vals += [float(t.psi[k] / total) for k in range(m - 1)]
    for u1 in edge_vals:
        for u2 in (0.0, 0.5, 1.0 - 2.0 ** -53):
            i, j = pair_from_uniforms(t, u1, u2)
            assert 0 <= i < j < m
            assert pair_from_uniforms(t, u1, u2) == linear_scan_pair(t, u1, u2)


def test_parallel_rows_have_zero_mass():
    # integer entries keep the cancellation exact
    a = np.array([[1.0, 2.0, 0.0],
                  [2.0, 4.0, 0.0],    # parallel to row 0
                  [0.0, 1.0, 1.0],
                  [3.0, 0.0, 1.0]])
    t = vs_preprocess_s2(a)
    assert vs_prob_s2_exact(t, 0, 1) == 0.0
    rng = RngStream(5)
    for _ in range(20000):
        i, j = vs_sample_s2(t, rng)
        assert (i, j) != (0, 1)


def test_zero_row_never_sampled():
    a = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0], [3.0, 1.0]])
    t = vs_preprocess_s2(a)
    for j in range(4):
        if j == 1:
            continue
        lo, hi = min(1, j), max(1, j)
        assert vs_prob_s2_exact(t, lo, hi) == 0.0
    rng = RngStream(6)
    for _ in range(5000):
        i, j = vs_sample_s2(t, rng)
        assert 1 not in (i, j)


def test_empirical_distribution_close():
    rng_np = np.random.default_rng(45)
    a = rng_np.standard_normal((8, 5))
    t = vs_preprocess_s2(a)
    ref, _ = _pair_probs_bruteforce(a)
    draws = 20000
    counts: dict[tuple, int] = {}
    rng = RngStream(7)
    for _ in range(draws):
        p = vs_sample_s2(t, rng)
        counts[p] = counts.get(p, 0) + 1
    tv = 0.5 * sum(abs(counts.get(k, 0) / draws - p) for k, p in ref.items())
    assert tv < 0.05


def test_csr_and_dense_tables_identical():
    rng = np.random.default_rng(46)
    a = rng.standard_normal((7, 4))
    a[rng.random((7, 4)) > 0.6] = 0.0
    t_dense = vs_preprocess_s2(a)
    t_csr = vs_preprocess_s2(CsrMatrix.from_dense(a))
    # summation order differs between the routes, so agreement is to
    # rounding, not bitwise
    for name in ("psi", "zeta", "row_norms_sq", "alpha_row"):
        assert np.allclose(getattr(t_dense, name), getattr(t_csr, name),
                           rtol=1e-13, atol=1e-300)
    # draws agree bitwise across the two storage routes
    rng = np.random.default_rng(1)
    for _ in range(200):
        u1, u2 = rng.random(), rng.random()
        assert pair_from_uniforms(t_dense, u1, u2) == pair_from_uniforms(t_csr, u1, u2)


def test_rank_below_two_rejected():
    with pytest.raises(ValueError):
        vs_preprocess_s2(np.outer(np.arange(1.0, 5.0), np.array([1.0, 2.0])))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(47)
    a = rng.standard_normal((6, 3))
    t = vs_preprocess_s2(a)
    path = str(tmp_path / "tables.npz")
    save_tables(t, path)
    t2 = load_tables(path, expect_hash=content_hash(a))
    assert np.array_equal(t.psi, t2.psi)
    assert pair_from_uniforms(t, 0.37, 0.61) == pair_from_uniforms(t2, 0.37, 0.61)
    with pytest.raises(ValueError):
        load_tables(path, expect_hash="0" * 64)


def test_content_hash_distinguishes_matrices():
    a = np.eye(3)
    assert content_hash(a) == content_hash(np.eye(3))
    assert content_hash(a) != content_hash(2.0 * np.eye(3))
    # storage format is part of the identity: same numbers, different layout
    assert content_hash(a) != content_hash(CsrMatrix.from_dense(a))
    csr = CsrMatrix.from_dense(a)
    assert content_hash(csr) == content_hash(CsrMatrix.from_dense(np.eye(3)))


def test_vs_enumerate_agrees_with_probs():
    rng_np = np.random.default_rng(48)
    a = rng_np.standard_normal((6, 4))
    enum = EnumSampler(a, 2)
    catalog = {tuple(s) for s in enum.subsets}
    rng = RngStream(9)
    for _ in range(50):
        draw = vs_enumerate(a, 2, rng)
        assert draw.shape == (2,)
        assert tuple(draw) in catalog


def test_enum_sampler_three_row_blocks():
    rng_np = np.random.default_rng(49)
    a = rng_np.standard_normal((6, 4))
    enum = EnumSampler(a, 3)
    assert enum.probs.sum() == pytest.approx(1.0, rel=1e-12)
    # weights proportional to block Gram determinants
    k = 5
    rows = a[list(enum.subsets[k])]
    g = rows @ rows.T
    dets = []
    for sub in enum.subsets:
        r = a[list(sub)]
        dets.append(max(float(np.linalg.det(r @ r.T)), 0.0))
    dets = np.array(dets)
    assert enum.probs[k] == pytest.approx(float(np.linalg.det(g)) / dets.sum(), rel=1e-10)


def test_enum_sampler_budget_guard():
    a = np.ones((40, 2)) + np.arange(80.0).reshape(40, 2)
    with pytest.raises(ValueError):
        EnumSampler(a, 12)   # C(40, 12) far beyond the enumeration budget


def test_row_mass_matches_dense_det_oracle():
    # alpha_row[i] must equal the summed pair determinants over j > i
    rng = np.random.default_rng(50)
    a = rng.standard_normal((30, 10))
    a[rng.random((30, 10)) > 0.4] = 0.0
    t = vs_preprocess_s2(CsrMatrix.from_dense(a))
    for i in range(29):
        ref = 0.0
        for j in range(i + 1, 30):
            rows = a[[i, j]]
            g = rows @ rows.T
            ref += max(float(g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]), 0.0)
        got = float(t.alpha_row[i])
        assert got == pytest.approx(ref, rel=1e-10, abs=1e-12)
