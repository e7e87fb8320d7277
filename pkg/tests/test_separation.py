import itertools
import math

import numpy as np
import pytest

from msrb.separation import (eval_rep, load_rep, lsmos, omp, poly_basis,
                             save_rep, snapshot_kle, staomp)


# ---------------------------------------------------------------- poly basis

def test_basis_counts_exact():
    assert poly_basis("legendre", 6, 5).size == 462
    assert poly_basis("legendre", 12, 4).size == 1820
    assert poly_basis("hermite", 20, 3).size == 1771


def test_multi_index_ordering():
    b = poly_basis("legendre", 2, 2)
    assert b.indices == ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0))


def test_legendre_orthonormal_gauss():
    # 64-point Gauss-Legendre against the uniform density on (-1, 1)
    x, w = np.polynomial.legendre.leggauss(64)
    w = w / 2.0
    b = poly_basis("legendre", 1, 8)
    V = b.eval(x[:, None])
    G = V.T @ (w[:, None] * V)
    assert np.max(np.abs(G - np.eye(b.size))) < 1e-10


def test_hermite_orthonormal_gauss():
    # probabilists' weight via physicists' Gauss-Hermite nodes
    x, w = np.polynomial.hermite.hermgauss(64)
    nodes = np.sqrt(2.0) * x
    w = w / np.sqrt(np.pi)
    b = poly_basis("hermite", 1, 8)
    V = b.eval(nodes[:, None])
    G = V.T @ (w[:, None] * V)
    assert np.max(np.abs(G - np.eye(b.size))) < 1e-10


def test_multivariate_orthonormal_montecarlo_sanity():
    rng = np.random.default_rng(0)
    b = poly_basis("hermite", 3, 2)
    mus = rng.standard_normal((200000, 3))
    V = b.eval(mus)
    G = V.T @ V / mus.shape[0]
    assert np.max(np.abs(G - np.eye(b.size))) < 5e-2


# ---------------------------------------------------------------- snapshot KLE

def test_kle_identical_snapshots():
    snap = np.tile(np.array([1.0, 2.0, 3.0]), (5, 1))
    kle = snapshot_kle(snap)
    assert kle.n_modes == 0
    assert np.allclose(kle.mean, [1, 2, 3])


def test_kle_two_orthogonal_equal_norm():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    kle = snapshot_kle(np.vstack([a, b]), subtract_mean=False)
    lam = kle.eigenvalues
    assert abs(lam[0] - lam[1]) < 1e-12
    span = kle.modes
    # modes span the snapshot pair
    for v in (a, b):
        proj = span.T @ (span @ v)
        assert np.linalg.norm(proj - v) < 1e-10


def test_kle_full_rank_reconstruction():
    rng = np.random.default_rng(1)
    snap = rng.standard_normal((6, 20))
    kle = snapshot_kle(snap, n_modes=6)
    recon = kle.mean[None, :] + kle.proj_train @ kle.modes
    assert np.max(np.abs(recon - snap)) < 1e-8


def test_kle_modes_orthonormal_weighted():
    rng = np.random.default_rng(2)
    snap = rng.standard_normal((8, 30))
    w = 0.05
    kle = snapshot_kle(snap, weights=w)
    G = (kle.modes * w) @ kle.modes.T
    assert np.max(np.abs(G - np.eye(kle.n_modes))) < 1e-8


# ---------------------------------------------------------------- LSMOS

def test_lsmos_exact_linear_recovery():
    rng = np.random.default_rng(3)
    w = rng.standard_normal(40)
    mus = rng.uniform(-1, 1, size=(50, 1))
    snaps = mus * w[None, :]
    rep = lsmos(snaps, mus, poly_basis("legendre", 1, 1))
    test_mus = rng.uniform(-1, 1, size=(20, 1))
    approx = rep.eval(test_mus)
    exact = test_mus * w[None, :]
    assert np.max(np.abs(approx - exact)) < 1e-10


def test_lsmos_constant_field():
    mus = np.linspace(-1, 1, 9)[:, None]
    snaps = np.tile([2.0, -1.0], (9, 1))
    rep = lsmos(snaps, mus, poly_basis("legendre", 1, 3))
    assert np.max(np.abs(rep.eval(mus) - snaps)) < 1e-12


def test_lsmos_undersampled_warns():
    rng = np.random.default_rng(4)
    mus = rng.uniform(-1, 1, size=(5, 2))
    snaps = rng.standard_normal((5, 10))
    with pytest.warns(UserWarning, match="under-sampled"):
        lsmos(snaps, mus, poly_basis("legendre", 2, 3))


def test_lsmos_span_recovery_when_well_sampled():
    # any field in span{p_i(mu) g_j(x)} is reproduced once n_t >= M_g
    rng = np.random.default_rng(5)
    basis = poly_basis("legendre", 2, 2)
    mus = rng.uniform(-1, 1, size=(4 * basis.size, 2))
    g1, g2 = rng.standard_normal((2, 25))
    P = basis.eval(mus)
    snaps = np.outer(P[:, 1], g1) + np.outer(P[:, 4], g2)
    rep = lsmos(snaps, mus, basis)
    fresh = rng.uniform(-1, 1, size=(30, 2))
    Pf = basis.eval(fresh)
    exact = np.outer(Pf[:, 1], g1) + np.outer(Pf[:, 4], g2)
    assert np.max(np.abs(rep.eval(fresh) - exact)) < 1e-8


# ---------------------------------------------------------------- OMP

def test_omp_single_column():
    rng = np.random.default_rng(6)
    Pi = rng.standard_normal((20, 8))
    b = 3.0 * Pi[:, 5]
    res = omp(Pi, b, 1e-10)
    assert list(res.support) == [5]
    assert abs(res.coeffs[5] - 3.0) < 1e-12
    assert res.n_terms == 1


def _best_subset(Pi, b, max_size):
    best = (np.inf, None)
    for size in range(1, max_size + 1):
        for comb in itertools.combinations(range(Pi.shape[1]), size):
            sol, *_ = np.linalg.lstsq(Pi[:, comb], b, rcond=None)
            r = np.linalg.norm(b - Pi[:, comb] @ sol)
            if r < best[0] - 1e-12:
                best = (r, set(comb))
        if best[0] < 1e-10:
            break
    return best


def test_omp_matches_best_subset():
    rng = np.random.default_rng(7)
    for trial in range(10):
        Pi = rng.standard_normal((30, 10))
        Pi /= np.linalg.norm(Pi, axis=0)
        s = int(rng.integers(1, 3))
        support = rng.choice(10, size=s, replace=False)
        c = rng.uniform(1, 3, size=s) * rng.choice([-1, 1], size=s)
        b = Pi[:, support] @ c
        res = omp(Pi, b, 1e-8)
        r_best, s_best = _best_subset(Pi, b, s)
        assert set(res.support) == s_best
        resid = np.linalg.norm(b - Pi @ res.coeffs)
        assert abs(resid - r_best) < 1e-8


def test_omp_residual_orthogonality_and_monotone():
    rng = np.random.default_rng(8)
    Pi = rng.standard_normal((40, 15))
    b = rng.standard_normal(40)
    prev = np.linalg.norm(b)
    for k in range(1, 6):
        res = omp(Pi, b, 0.0, max_terms=k)
        r = b - Pi @ res.coeffs
        # residual orthogonal to every selected column
        assert np.max(np.abs(Pi[:, res.support].T @ r)) < 1e-10
        # support strictly grows, no repeats
        assert len(set(res.support)) == len(res.support) == k
        nrm = np.linalg.norm(r)
        assert nrm <= prev + 1e-12
        prev = nrm


def test_omp_unreachable_warns():
    rng = np.random.default_rng(9)
    Pi = rng.standard_normal((10, 3))
    b = rng.standard_normal(10)
    with pytest.warns(UserWarning, match="unreachable"):
        res = omp(Pi, b, 1e-14)
    assert res.n_terms == 3


def test_omp_zero_column_rejected():
    Pi = np.zeros((4, 2))
    Pi[:, 0] = 1.0
    with pytest.raises(ValueError):
        omp(Pi, np.ones(4), 1e-3)


# ---------------------------------------------------------------- STAOMP

def test_staomp_already_separated():
    rng = np.random.default_rng(10)
    basis = poly_basis("legendre", 2, 2)
    mus = rng.uniform(-1, 1, size=(40, 2))
    g = rng.standard_normal(30)
    g /= np.linalg.norm(g)
    P = basis.eval(mus)
    snaps = np.outer(P[:, 2], g)     # G = p_2(mu) g(x) exactly
    rep = staomp(snaps, mus, 1, basis, np.arange(30), np.arange(40), 1e-10)
    assert rep.n_terms == 1
    fresh = rng.uniform(-1, 1, size=(15, 2))
    exact = np.outer(basis.eval(fresh)[:, 2], g)
    assert np.max(np.abs(rep.eval(fresh) - exact)) < 1e-8


def test_staomp_two_term_recovery():
    rng = np.random.default_rng(11)
    basis = poly_basis("legendre", 3, 3)
    mus = rng.uniform(-1, 1, size=(60, 3))
    g1, g2 = rng.standard_normal((2, 50))
    P = basis.eval(mus)
    snaps = 2.0 * np.outer(P[:, 1], g1) - 0.5 * np.outer(P[:, 7], g2)
    rep = staomp(snaps, mus, 2, basis, np.arange(50), np.arange(60), 1e-9)
    fresh = rng.uniform(-1, 1, size=(10, 3))
    Pf = basis.eval(fresh)
    exact = 2.0 * np.outer(Pf[:, 1], g1) - 0.5 * np.outer(Pf[:, 7], g2)
    assert np.max(np.abs(rep.eval(fresh) - exact)) < 1e-7


def test_eval_rep_training_consistency():
    rng = np.random.default_rng(12)
    basis = poly_basis("legendre", 2, 3)
    mus = rng.uniform(-1, 1, size=(50, 2))
    snaps = np.column_stack([
        np.sin(mus[:, 0]) + x * np.cos(mus[:, 1]) for x in np.linspace(0, 1, 20)])
    rep = staomp(snaps, mus, 4, basis, np.arange(20), np.arange(50), 1e-3)
    approx = eval_rep(rep, mus)
    rel = (np.linalg.norm(approx - snaps, axis=1)
           / np.linalg.norm(snaps, axis=1))
    assert np.mean(rel) < 5e-3


# ---------------------------------------------------------------- files

def test_rep_file_roundtrip_sparse(tmp_path):
    rng = np.random.default_rng(13)
    basis = poly_basis("hermite", 2, 2)
    mus = rng.standard_normal((30, 2))
    g = rng.standard_normal(12)
    snaps = np.outer(basis.eval(mus)[:, 3], g)
    rep = staomp(snaps, mus, 1, basis, np.arange(12), np.arange(30), 1e-8)
    path = tmp_path / "rep.txt"
    save_rep(path, rep)
    back = load_rep(path)
    fresh = rng.standard_normal((5, 2))
    assert np.allclose(back.eval(fresh), rep.eval(fresh), atol=1e-12)


def test_rep_file_roundtrip_lsmos(tmp_path):
    rng = np.random.default_rng(14)
    basis = poly_basis("legendre", 1, 2)
    mus = rng.uniform(-1, 1, size=(20, 1))
    snaps = mus**2 @ np.ones((1, 7)) + np.linspace(0, 1, 7)[None, :]
    rep = lsmos(snaps, mus, basis)
    path = tmp_path / "rep.txt"
    save_rep(path, rep)
    back = load_rep(path)
    fresh = rng.uniform(-1, 1, size=(5, 1))
    assert np.allclose(back.eval(fresh), rep.eval(fresh), atol=1e-12)
