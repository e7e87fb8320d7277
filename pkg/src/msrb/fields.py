"""Coefficient models: rasters, random fields, and affine splits of 1/k.

All spatial fields are cellwise-constant on the fine grid (row-major from
y = 0).  The affine decomposition approximates 1/k(x, mu) as
``sum_q kq(mu) * kappa_q(x)`` with spatial modes from a snapshot POD and
parametric factors fitted by OMP over a total-degree polynomial dictionary;
it backs every offline/online split downstream.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, FormatError, ModelError
from .separation import omp, poly_basis, snapshot_kle

# ---------------------------------------------------------------------------
# raster fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RasterField:
    """Positive cellwise values on an ny-by-nx grid."""

    values: np.ndarray   # shape (ny, nx), row-major from y=0

    @property
    def shape(self):
        return self.values.shape

    @property
    def cellwise(self):
        return self.values.ravel()


def load_raster(path):
    """Read the ASCII raster format: header "ny nx", then ny rows of nx reals."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f"raster header must be 'ny nx', got {header!r}")
        try:
            ny, nx = int(header[0]), int(header[1])
        except ValueError as exc:
            raise FormatError(f"non-integer raster header: {header!r}") from exc
        rows = []
        for i in range(ny):
            row = fh.readline().split()
            if len(row) != nx:
                raise FormatError(
                    f"raster row {i} has {len(row)} values, expected {nx}")
            rows.append([float(v) for v in row])
    vals = np.array(rows)
    if np.any(vals <= 0):
        bad = np.argwhere(vals <= 0)[0]
        raise FormatError(f"non-positive raster value at row {bad[0]}, "
                          f"col {bad[1]}")
    return RasterField(vals)


def save_raster(path, field):
    vals = field.values if isinstance(field, RasterField) else np.asarray(field)
    with open(path, "w") as fh:
        fh.write(f"{vals.shape[0]} {vals.shape[1]}\n")
        for row in vals:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def generate_channel_field(nx, ny, contrast, seed=0):
    """Seeded high-contrast field: background 1, sinuous channels at `contrast`.

    Stand-in for unpublished benchmark permeability rasters; deterministic
    per seed, values are exactly {1, contrast}.
    """
    if contrast < 1:
        raise ConfigurationError("contrast must be >= 1")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    vals = np.ones((ny, nx))
    n_channels = max(2, ny // 16)
    thickness = max(1, ny // 40)
    for _ in range(n_channels):
        row = int(rng.integers(0, ny))
        for col in range(nx):
            lo = max(0, row)
            hi = min(ny, row + thickness)
            vals[lo:hi, col] = contrast
            row += int(rng.integers(-1, 2))
            row = min(max(row, 0), ny - 1)
    for _ in range(max(1, nx // 20)):
        cx = int(rng.integers(0, nx))
        cy = int(rng.integers(0, ny))
        w = int(rng.integers(1, max(2, nx // 10)))
        h = int(rng.integers(1, max(2, ny // 10)))
        vals[cy:cy + h, cx:cx + w] = contrast
    if contrast > 1 and vals.min() == vals.max():
        vals[0, 0] = 1.0   # keep the stated max/min ratio on tiny grids
    return RasterField(vals)


# ---------------------------------------------------------------------------
# Karhunen-Loeve random fields
# ---------------------------------------------------------------------------


@dataclass
class KLEField:
    """Truncated KLE of a Gaussian-covariance random field on fine cells."""

    mean: float
    eigenvalues: np.ndarray     # descending, >= 0
    eigenfunctions: np.ndarray  # (N, n_cells), L2-orthonormal on D
    sigma2: float
    lx: float
    ly: float
    law: str                    # "uniform": mu_i ~ U(-1,1); "normal": N(0,1)

    @property
    def n_terms(self):
        return len(self.eigenvalues)

    @property
    def scaled_modes(self):
        return np.sqrt(self.eigenvalues)[:, None] * self.eigenfunctions

    def eval(self, mus):
        """Field realizations a(x, mu); rows are samples."""
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        return self.mean + mus @ self.scaled_modes

    def draw(self, rng, n):
        if self.law == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, self.n_terms))
        return rng.standard_normal((n, self.n_terms))


def kle_build(grid, sigma2, lx, ly, n_terms, mean=0.0, law="uniform"):
    """Discretized covariance eigensolve (cell-midpoint collocation).

    cov(z, z') = sigma2 * exp(-dx^2/(2 lx^2) - dy^2/(2 ly^2)); the operator
    is scaled by cell areas so eigenfunctions come out L2-orthonormal.
    """
    pts = grid.cell_centers
    n = pts.shape[0]
    if n_terms > n:
        raise ConfigurationError(
            f"requested {n_terms} KLE terms but only {n} cells")
    if sigma2 == 0.0:
        return KLEField(mean, np.zeros(n_terms), np.zeros((n_terms, n)),
                        sigma2, lx, ly, law)
    dx = pts[:, 0][:, None] - pts[:, 0][None, :]
    dy = pts[:, 1][:, None] - pts[:, 1][None, :]
    C = sigma2 * np.exp(-dx**2 / (2 * lx**2) - dy**2 / (2 * ly**2))
    C *= grid.cell_area   # symmetric sqrt(W) C sqrt(W) on a uniform grid
    lam, Z = scipy.linalg.eigh(C, subset_by_index=(n - n_terms, n - 1))
    lam, Z = lam[::-1].copy(), Z[:, ::-1]
    lam[lam < 0] = 0.0
    funcs = (Z / np.sqrt(grid.cell_area)).T
    return KLEField(mean, lam, funcs, sigma2, lx, ly, law)


# ---------------------------------------------------------------------------
# parametric coefficient models
# ---------------------------------------------------------------------------


@dataclass
class ParametricCoefficient:
    """Permeability model k(x, mu) evaluated at fine-cell midpoints."""

    tag: str                      # example1 | example2 | twophase | custom
    grid: object
    raster: np.ndarray            # cellwise kappa field (or None)
    kle: KLEField | None
    p: int                        # parameter dimension
    law: str
    fn: object = None             # custom: fn(centers, mus) -> (n, n_cells)

    def draw_mu(self, rng, n):
        if self.law == "uniform":
            return rng.uniform(-1.0, 1.0, size=(n, self.p))
        return rng.standard_normal((n, self.p))


def make_coefficient(tag, grid, raster=None, kle=None, fn=None, p=None):
    """Assemble one of the built-in coefficient models on a fine grid."""
    if tag == "example1":
        if raster is None:
            raise ConfigurationError("example1 requires a raster field")
        return ParametricCoefficient(tag, grid, np.asarray(raster, dtype=float),
                                     None, 1, "uniform")
    if tag == "example2":
        if raster is None or kle is None:
            raise ConfigurationError("example2 requires a raster and a KLE")
        return ParametricCoefficient(tag, grid, np.asarray(raster, dtype=float),
                                     kle, kle.n_terms, kle.law)
    if tag == "twophase":
        if raster is None or kle is None:
            raise ConfigurationError("twophase requires a raster and a KLE")
        return ParametricCoefficient(tag, grid, np.asarray(raster, dtype=float),
                                     kle, kle.n_terms, kle.law)
    if tag == "custom":
        if fn is None or p is None:
            raise ConfigurationError("custom coefficient needs fn and p")
        return ParametricCoefficient(tag, grid, None, None, p, "uniform", fn)
    raise ConfigurationError(f"unknown coefficient tag {tag!r}")


def eval_k(coeff, mus):
    """Cellwise permeability k(x, mu); rows are parameter samples."""
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    if mus.shape[1] != coeff.p:
        raise ModelError(
            f"parameter dimension {mus.shape[1]} != model dimension {coeff.p}")
    centers = coeff.grid.cell_centers
    if coeff.tag == "example1":
        x1x2 = centers[:, 0] * centers[:, 1]
        mu = mus[:, 0][:, None]
        denom = (10.0 * np.sin(20.0 * mu + x1x2[None, :])
                 + (np.cos(mu) + 1.2) * coeff.raster[None, :] + 25.0)
        k = 10000.0 / denom
    elif coeff.tag == "example2":
        a = coeff.kle.eval(mus)
        k = a * (1.0e4 / coeff.raster[None, :])
    elif coeff.tag == "twophase":
        # raster holds the log-scale field, k = exp(kappa2 + a)
        a = coeff.kle.eval(mus)
        k = np.exp(coeff.raster[None, :] + a)
    else:
        k = np.atleast_2d(coeff.fn(centers, mus))
    if np.any(k <= 0) or not np.all(np.isfinite(k)):
        row, cell = np.argwhere(~(k > 0) | ~np.isfinite(k))[0]
        raise ModelError(
            f"non-positive permeability at sample {row}, cell {cell}: "
            f"k = {k[row, cell]!r}")
    return k


# ---------------------------------------------------------------------------
# affine decomposition of 1/k
# ---------------------------------------------------------------------------


@dataclass
class AffineDecomposition:
    """1/k(x, mu) ~= sum_q kq(mu) kappa_q(x) with polynomial factors."""

    fields: np.ndarray            # (m_a, n_cells) spatial factors kappa_q
    poly_coeffs: np.ndarray       # (m_a, M_g) in the stored basis
    basis: object                 # PolynomialBasis
    training_error: float         # max cellwise relative error on trainset

    @property
    def m_a(self):
        return self.fields.shape[0]

    def coeffs(self, mus):
        """Scalar factors kq(mu); shape (n_samples, m_a)."""
        return self.basis.eval(mus) @ self.poly_coeffs.T

    def reconstruct(self, mus):
        """Approximate cellwise 1/k; rows are samples."""
        return self.coeffs(mus) @ self.fields


def _max_rel_error(approx, exact):
    return float(np.max(np.abs(approx - exact) / np.abs(exact)))


def affine_decompose(coeff, trainset, tol, max_terms, degree=None,
                     eps_mode=None):
    """Separate 1/k over a training set into an affine decomposition.

    Spatial modes come from a snapshot POD of the 1/k realizations; each
    parametric factor is an OMP-sparse polynomial fit of the corresponding
    projection coefficients.  Raises :class:`ModelError` if the cellwise
    relative training error cannot be brought to ``tol`` within
    ``max_terms`` terms.
    """
    trainset = np.atleast_2d(np.asarray(trainset, dtype=float))
    if trainset.size == 0:
        raise ConfigurationError("empty affine training set")
    if degree is None:
        degree = 40 if coeff.p == 1 else (4 if coeff.p <= 12 else 3)
    family = "legendre" if coeff.law == "uniform" else "hermite"
    basis = poly_basis(family, coeff.p, degree)
    if eps_mode is None:
        eps_mode = max(tol / 10.0, 1e-13)

    snaps = 1.0 / eval_k(coeff, trainset)
    kle = snapshot_kle(snaps, weights=coeff.grid.cell_area,
                       n_modes=max_terms - 1, subtract_mean=True)
    A = basis.eval(trainset)

    mean_in_span = False
    mean_fit = None
    if kle.n_modes and np.linalg.norm(kle.mean):
        # fold the mean into the modes when it is (numerically) in their span
        proj = kle.modes @ (kle.mean * coeff.grid.cell_area)
        resid = kle.mean - proj @ kle.modes
        if np.linalg.norm(resid) < 1e-12 * np.linalg.norm(kle.mean):
            mean_in_span, mean_fit = True, proj

    terms_fields, terms_polys = [], []
    if not mean_in_span:
        row = np.zeros(basis.size)
        row[0] = 1.0    # constant polynomial is the first basis member
        terms_fields.append(kle.mean)
        terms_polys.append(row)

    def candidate():
        return AffineDecomposition(np.array(terms_fields),
                                   np.array(terms_polys), basis, np.nan)

    best_err, best = np.inf, None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i in range(-1, kle.n_modes):
            if i >= 0:
                target = kle.proj_train[:, i].copy()
                if mean_in_span:
                    target += mean_fit[i]
                if np.linalg.norm(target) == 0.0:
                    continue
                res = omp(A, target, eps_mode)
                terms_fields.append(kle.modes[i])
                terms_polys.append(res.coeffs)
            if not terms_fields:
                continue
            ad = candidate()
            err = _max_rel_error(ad.reconstruct(trainset), snaps)
            if err < best_err:
                best_err, best = err, ad
            if err <= tol:
                ad.training_error = err
                return ad
    raise ModelError(
        f"affine tolerance {tol:.2e} unreachable within {max_terms} terms; "
        f"best achieved {best_err:.2e}")


def constant_decomposition(grid, value=1.0):
    """m_a = 1 decomposition for a constant 1/k (test and reference hook)."""
    basis = poly_basis("legendre", 1, 0)
    fields = np.full((1, grid.n_cells), value)
    return AffineDecomposition(fields, np.ones((1, 1)), basis, 0.0)


def decomposition_from_fields(grid, fields, coeff_fn, basis=None):
    """Wrap explicit (kq(mu), kappa_q(x)) pairs as an AffineDecomposition.

    ``coeff_fn(mus) -> (n, m_a)`` is kept as a callable; used where an exact
    affine structure is known (tests, mobility rescaling fallback).
    """

    class _CallableAD(AffineDecomposition):
        def coeffs(self, mus):
            return np.atleast_2d(coeff_fn(np.atleast_2d(mus)))

    fields = np.atleast_2d(np.asarray(fields, dtype=float))
    return _CallableAD(fields, np.zeros((fields.shape[0], 1)),
                       basis or poly_basis("legendre", 1, 0), 0.0)


# ---------------------------------------------------------------------------
# experiment source terms
# ---------------------------------------------------------------------------


def example_source(tag, grid):
    """Cellwise source values at cell midpoints for the built-in studies."""
    x1 = grid.cell_centers[:, 0]
    x2 = grid.cell_centers[:, 1]
    if tag == "example1":
        return (x2 - 0.5) * np.cos(np.pi * (x1 - 0.5))
    if tag == "example2":
        return (x1 + 1.0) * np.cos(np.pi * x2)
    raise ConfigurationError(f"no built-in source for {tag!r}")
