import numpy as np
import pytest

from msrb.errors import ConfigurationError, FormatError, ModelError
from msrb.fields import (affine_decompose, eval_k, example_source,
                         generate_channel_field, kle_build, load_raster,
                         make_coefficient, save_raster)
from msrb.grid import build_hierarchy


# ---------------------------------------------------------------- rasters

def test_load_raster_basic(tmp_path):
    p = tmp_path / "f.txt"
    p.write_text("2 2\n1 1\n1 1e4\n")
    f = load_raster(p)
    assert f.shape == (2, 2)
    assert f.values.max() / f.values.min() == 1e4


def test_load_raster_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_raster(tmp_path / "absent.txt")


def test_load_raster_malformed(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2\n1 1\n")
    with pytest.raises(FormatError):
        load_raster(p)
    p.write_text("2 2\n1 1\n1 -3\n")
    with pytest.raises(FormatError):
        load_raster(p)


def test_raster_roundtrip_bit_exact(tmp_path):
    f = generate_channel_field(24, 24, 1e4, seed=5)
    path = tmp_path / "chan.txt"
    save_raster(path, f)
    back = load_raster(path)
    assert np.array_equal(back.values, f.values)


def test_channel_field_contrast_and_determinism():
    a = generate_channel_field(80, 80, 1e4, seed=1)
    b = generate_channel_field(80, 80, 1e4, seed=1)
    assert np.array_equal(a.values, b.values)
    assert a.values.max() / a.values.min() == 1e4
    assert set(np.unique(a.values)) == {1.0, 1e4}
    uniform = generate_channel_field(16, 16, 1.0, seed=2)
    assert np.all(uniform.values == 1.0)


# ---------------------------------------------------------------- KLE

def test_kle_zero_variance():
    g = build_hierarchy(8, 8, 2, 2)
    kle = kle_build(g, 0.0, 0.2, 0.2, 4, mean=3.0)
    assert np.all(kle.eigenvalues == 0.0)
    a = kle.eval(np.zeros((1, 4)))
    assert np.allclose(a, 3.0)


def test_kle_long_correlation_rank_one():
    g = build_hierarchy(12, 12, 2, 2)
    kle = kle_build(g, 1.0, 1e3, 1e3, 6)
    lam = kle.eigenvalues
    assert lam[0] / lam.sum() >= 0.99
    # flat-covariance limit: leading eigenvalue -> sigma^2 * |D| = 1
    assert abs(lam[0] - 1.0) < 1e-3


def test_kle_orthonormal_eigenfunctions():
    g = build_hierarchy(16, 16, 4, 4)
    kle = kle_build(g, 1.0, 0.2, 0.3, 8)
    G = (kle.eigenfunctions * g.cell_area) @ kle.eigenfunctions.T
    assert np.max(np.abs(G - np.eye(8))) < 1e-8
    assert np.all(np.diff(kle.eigenvalues) <= 1e-12)


def test_kle_too_many_terms():
    g = build_hierarchy(4, 4, 2, 2)
    with pytest.raises(ConfigurationError):
        kle_build(g, 1.0, 0.2, 0.2, 17)


def test_kle_example2_config():
    g = build_hierarchy(60, 60, 10, 10)
    kle = kle_build(g, 1.0, 0.2, 0.2, 12, mean=6.0)
    assert kle.n_terms == 12
    assert np.all(kle.eigenvalues > 0)


# ---------------------------------------------------------------- eval_k

def _grid_and_raster(n=8, coarse=2):
    g = build_hierarchy(n, n, coarse, coarse)
    kappa = np.ones(g.n_cells)
    kappa[::3] = 1e4
    kappa[0] = 1.0
    return g, kappa


def test_eval_k_example1_hand_value():
    g, kappa = _grid_and_raster()
    c = make_coefficient("example1", g, raster=kappa)
    k = eval_k(c, np.array([[0.0]]))[0]
    x1, x2 = g.cell_centers[0]
    expected = 10000.0 / (10.0 * np.sin(x1 * x2) + 2.2 * 1.0 + 25.0)
    assert abs(k[0] - expected) < 1e-12


def test_eval_k_example2_zero_mu():
    g, kappa = _grid_and_raster()
    kle = kle_build(g, 1.0, 0.2, 0.2, 4, mean=6.0)
    c = make_coefficient("example2", g, raster=kappa, kle=kle)
    k = eval_k(c, np.zeros((1, 4)))[0]
    assert np.allclose(k, 6.0e4 / kappa)


def test_eval_k_twophase_zero_fluctuation():
    g, _ = _grid_and_raster()
    kappa2 = np.log(generate_channel_field(8, 8, 100.0, seed=3).cellwise)
    kle = kle_build(g, 0.0, 0.02, 0.02, 4, mean=0.0)
    kle.law = "normal"
    c = make_coefficient("twophase", g, raster=kappa2, kle=kle)
    k = eval_k(c, np.zeros((1, 4)))[0]
    assert np.allclose(k, np.exp(kappa2))


def test_eval_k_positivity_random_sweep():
    g, kappa = _grid_and_raster()
    kle = kle_build(g, 1.0, 0.2, 0.2, 4, mean=6.0)
    rng = np.random.default_rng(0)
    for tag, coeff in [
            ("example1", make_coefficient("example1", g, raster=kappa)),
            ("example2", make_coefficient("example2", g, raster=kappa,
                                          kle=kle))]:
        mus = coeff.draw_mu(rng, 1000)
        k = eval_k(coeff, mus)
        assert np.all(k > 0)


def test_eval_k_nonpositive_reports_cell():
    g = build_hierarchy(4, 4, 2, 2)
    fn = lambda centers, mus: np.tile(
        np.where(np.arange(16) == 5, -1.0, 1.0), (len(mus), 1))
    c = make_coefficient("custom", g, fn=fn, p=1)
    with pytest.raises(ModelError, match="cell 5"):
        eval_k(c, np.zeros((1, 1)))


# ---------------------------------------------------------------- affine

def test_affine_parameter_independent():
    g, kappa = _grid_and_raster()
    fn = lambda centers, mus: np.tile(kappa, (len(mus), 1))
    c = make_coefficient("custom", g, fn=fn, p=1)
    train = np.linspace(-1, 1, 7)[:, None]
    ad = affine_decompose(c, train, 1e-12, 4)
    assert ad.m_a == 1
    assert np.allclose(ad.coeffs(train), 1.0)
    assert ad.training_error <= 1e-12


def test_affine_exactly_separated_single_term():
    g, _ = _grid_and_raster()
    w = 0.5 + np.linspace(0, 1, g.n_cells)
    fn = lambda centers, mus: 1.0 / ((mus[:, :1] + 2.0) * w[None, :])
    c = make_coefficient("custom", g, fn=fn, p=1)
    train = np.linspace(-1, 1, 9)[:, None]
    ad = affine_decompose(c, train, 1e-10, 4, degree=2)
    assert ad.m_a == 1
    recon = ad.reconstruct(train)
    exact = (train + 2.0) * w[None, :]
    assert np.max(np.abs(recon - exact) / exact) < 1e-10


def test_affine_example1_heldout_generalization():
    g = build_hierarchy(20, 20, 4, 4)
    kappa = generate_channel_field(20, 20, 1e4, seed=7).cellwise
    c = make_coefficient("example1", g, raster=kappa)
    rng = np.random.default_rng(1)
    train = rng.uniform(-1, 1, size=(200, 1))
    ad = affine_decompose(c, train, 1e-4, 6)
    assert ad.training_error <= 1e-4
    held = rng.uniform(-1, 1, size=(100, 1))
    exact = 1.0 / eval_k(c, held)
    err = np.max(np.abs(ad.reconstruct(held) - exact) / exact)
    assert err <= 10 * 1e-4


def test_affine_unreachable_raises():
    g, kappa = _grid_and_raster()
    c = make_coefficient("example1", g, raster=kappa)
    train = np.linspace(-1, 1, 50)[:, None]
    with pytest.raises(ModelError, match="best achieved"):
        affine_decompose(c, train, 1e-14, 2, degree=3)


# ---------------------------------------------------------------- sources

def test_example_sources():
    g = build_hierarchy(4, 4, 2, 2)
    f1 = example_source("example1", g)
    x1, x2 = g.cell_centers[:, 0], g.cell_centers[:, 1]
    assert np.allclose(f1, (x2 - 0.5) * np.cos(np.pi * (x1 - 0.5)))
    f2 = example_source("example2", g)
    assert np.allclose(f2, (x1 + 1.0) * np.cos(np.pi * x2))
