"""Variable-separation engines for sampled parameterized fields.

A field G(x, mu) sampled over a training set is compressed either into
``mean + sum_i sqrt(lam_i) zeta_i(mu) g_i(x)`` with polynomial-regressed
coefficient functions (least-squares method of snapshots), or into a sparse
subset of the tensor dictionary {poly_i1(mu) * mode_i2(x)} selected by
orthogonal matching pursuit.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .linalg import least_squares

# ---------------------------------------------------------------------------
# total-degree orthogonal polynomial bases
# ---------------------------------------------------------------------------


def _total_degree_indices(p, degree):
    """Multi-indices with |alpha| <= degree, by total degree then lexicographic."""
    out = []

    def rec(prefix, remaining, dims):
        if dims == 1:
            out.append(prefix + (remaining,))
            return
        for k in range(remaining + 1):
            rec(prefix + (k,), remaining - k, dims - 1)

    for d in range(degree + 1):
        block = []

        def rec2(prefix, left, dims):
            if dims == 0:
                if left == 0:
                    block.append(prefix)
                return
            for k in range(left + 1):
                rec2(prefix + (k,), left - k, dims - 1)

        rec2(tuple(), d, p)
        block.sort()
        out.extend(block)
    return out


def _eval_1d(family, x, degree):
    """Table of orthonormal 1-D polynomial values, shape (len(x), degree+1).

    Legendre is orthonormal w.r.t. the uniform density on (-1, 1); Hermite is
    the probabilists' family orthonormal w.r.t. the standard normal density.
    """
    x = np.asarray(x, dtype=float)
    vals = np.empty((x.size, degree + 1))
    vals[:, 0] = 1.0
    if degree >= 1:
        vals[:, 1] = x
    if family == "legendre":
        for n in range(1, degree):
            vals[:, n + 1] = ((2 * n + 1) * x * vals[:, n]
                              - n * vals[:, n - 1]) / (n + 1)
        scale = np.sqrt(2.0 * np.arange(degree + 1) + 1.0)
    elif family == "hermite":
        for n in range(1, degree):
            vals[:, n + 1] = x * vals[:, n] - n * vals[:, n - 1]
        scale = np.array([1.0 / math.sqrt(math.factorial(n))
                          for n in range(degree + 1)])
    else:
        raise ValueError(f"unknown polynomial family {family!r}")
    return vals * scale


@dataclass(frozen=True)
class PolynomialBasis:
    """Total-degree tensor basis of 1-D orthonormal polynomials."""

    family: str
    p: int
    degree: int
    indices: tuple = field(repr=False)

    @property
    def size(self):
        return len(self.indices)

    def eval(self, mus):
        """Design matrix of basis values, shape (n_samples, size)."""
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        if mus.shape[1] != self.p:
            raise ValueError(
                f"expected parameter dimension {self.p}, got {mus.shape[1]}")
        tables = [_eval_1d(self.family, mus[:, d], self.degree)
                  for d in range(self.p)]
        idx = np.asarray(self.indices)
        out = np.ones((mus.shape[0], self.size))
        for d in range(self.p):
            out *= tables[d][:, idx[:, d]]
        return out


def poly_basis(family, p, degree):
    """Total-degree basis; size = binom(degree + p, degree)."""
    if p < 1 or degree < 0:
        raise ValueError("need p >= 1 and degree >= 0")
    idx = _total_degree_indices(p, degree)
    basis = PolynomialBasis(family, p, degree, tuple(idx))
    assert basis.size == math.comb(degree + p, degree)
    return basis


# ---------------------------------------------------------------------------
# snapshot KLE (method of snapshots)
# ---------------------------------------------------------------------------


def _weighted(snap, weights):
    """Apply the spatial inner-product weight to snapshot rows."""
    if weights is None:
        return snap
    w = weights
    if np.ndim(w) == 0:
        return snap * w
    if np.ndim(w) == 1:
        return snap * np.asarray(w)[None, :]
    return snap @ w


@dataclass
class SnapshotKLE:
    """Mean field plus orthonormal spatial modes from snapshot correlations."""

    mean: np.ndarray
    eigenvalues: np.ndarray        # all n_t values, descending
    modes: np.ndarray              # (n_modes, n_dof), H-orthonormal
    n_modes: int
    proj_train: np.ndarray         # (n_t, n_modes): sqrt(lam_i) zeta_i(mu_j)


def snapshot_kle(snapshots, weights=None, eps_on=None, n_modes=None,
                 subtract_mean=True):
    """Spatial modes of a snapshot set via the correlation-matrix eigensolve.

    ``eps_on`` picks the smallest mode count whose tail-energy ratio
    sum_{i>M} lam_i / sum_i lam_i drops to ``eps_on`` or below; ``n_modes``
    overrides it.  With ``subtract_mean`` the decomposition is of the
    fluctuation around the sample mean.
    """
    G = np.atleast_2d(np.asarray(snapshots, dtype=float))
    n_t = G.shape[0]
    mean = G.mean(axis=0) if subtract_mean else np.zeros(G.shape[1])
    F = G - mean[None, :]
    C = (F @ _weighted(F, weights).T) / n_t
    C = 0.5 * (C + C.T)
    lam, E = np.linalg.eigh(C)
    lam, E = lam[::-1].copy(), E[:, ::-1].copy()
    lam[lam < 0] = 0.0

    total = lam.sum()
    if total == 0.0:
        return SnapshotKLE(mean, lam, np.zeros((0, G.shape[1])), 0,
                           np.zeros((n_t, 0)))
    rank = int(np.sum(lam > 1e-14 * lam[0]))
    if n_modes is not None:
        M = min(n_modes, rank)
    elif eps_on is not None:
        tail = 1.0 - np.cumsum(lam) / total
        M = min(int(np.searchsorted(-tail, -eps_on) + 1), rank)
    else:
        M = rank
    # g_k = (lam_k n_t)^{-1/2} sum_j e_k^j fluctuation_j
    modes = (E[:, :M] / np.sqrt(lam[:M] * n_t)[None, :]).T @ F
    proj = _weighted(F, weights) @ modes.T   # = sqrt(lam_i) zeta_i(mu_j)
    return SnapshotKLE(mean, lam, modes, M, proj)


# ---------------------------------------------------------------------------
# LSMOS
# ---------------------------------------------------------------------------


@dataclass
class SeparatedRep:
    """mean + sum_i (polynomial in mu) * mode_i(x) from least-squares fits."""

    mean: np.ndarray
    modes: np.ndarray              # (M, n_dof)
    coeffs: np.ndarray             # (M, M_g): regression of sqrt(lam) zeta_i
    basis: PolynomialBasis
    eigenvalues: np.ndarray
    n_train: int

    @property
    def n_terms(self):
        return self.modes.shape[0]

    def eval(self, mus, dof_indices=None):
        """Field values at parameter samples; rows are samples."""
        P = self.basis.eval(mus)
        zeta = P @ self.coeffs.T
        if dof_indices is None:
            return self.mean[None, :] + zeta @ self.modes
        return (self.mean[dof_indices][None, :]
                + zeta @ self.modes[:, dof_indices])


def lsmos(snapshots, mus, basis, eps_on=None, n_modes=None, weights=None):
    """Least-squares method of snapshots over a polynomial basis."""
    G = np.atleast_2d(np.asarray(snapshots, dtype=float))
    n_t = G.shape[0]
    if n_t < basis.size:
        warnings.warn(
            f"under-sampled regression: {n_t} snapshots for {basis.size} "
            "polynomial coefficients; falling back to minimum-norm solve",
            stacklevel=2)
    kle = snapshot_kle(G, weights=weights, eps_on=eps_on, n_modes=n_modes)
    A = basis.eval(mus)
    if kle.n_modes:
        coeffs = np.column_stack(
            [least_squares(A, kle.proj_train[:, i])
             for i in range(kle.n_modes)]).T
    else:
        coeffs = np.zeros((0, basis.size))
    return SeparatedRep(kle.mean, kle.modes, coeffs, basis,
                        kle.eigenvalues[:kle.n_modes], n_t)


# ---------------------------------------------------------------------------
# orthogonal matching pursuit
# ---------------------------------------------------------------------------


@dataclass
class OMPResult:
    coeffs: np.ndarray             # full-length, zero off the support
    support: np.ndarray            # selected columns in selection order
    n_terms: int
    rel_residual: float


def omp(Pi, b, eps, max_terms=None):
    """Greedy sparse solve of min ||c||_0 s.t. ||b - Pi c|| <= eps*||b||.

    Columns are normalized to unit length for the correlation step only; the
    returned coefficients refer to the original columns.  The selected
    columns are kept in an incremental QR so each iteration costs O(n*k).
    """
    Pi = np.asarray(Pi, dtype=float)
    b = np.asarray(b, dtype=float).ravel()
    n, K = Pi.shape
    col_norms = np.linalg.norm(Pi, axis=0)
    if np.any(col_norms == 0.0):
        raise ValueError("dictionary contains zero columns")
    Pn = Pi / col_norms[None, :]

    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return OMPResult(np.zeros(K), np.array([], dtype=int), 0, 0.0)
    limit = min(n, K) if max_terms is None else min(max_terms, n, K)

    Q = np.zeros((n, limit))
    R = np.zeros((limit, limit))
    support = []
    usable = np.ones(K, dtype=bool)
    r = b.copy()
    while np.linalg.norm(r) / bnorm >= eps and len(support) < limit:
        corr = np.abs(Pn.T @ r)
        corr[~usable] = -1.0
        j0 = int(np.argmax(corr))
        if corr[j0] <= 0.0:
            break
        k = len(support)
        w = Pi[:, j0].copy()
        for _ in range(2):
            proj = Q[:, :k].T @ w
            R[:k, k] += proj
            w -= Q[:, :k] @ proj
        wn = np.linalg.norm(w)
        if wn <= 1e-12 * col_norms[j0]:
            usable[j0] = False     # dependent on current span; never helps
            R[:k, k] = 0.0
            continue
        R[k, k] = wn
        Q[:, k] = w / wn
        support.append(j0)
        usable[j0] = False
        r -= Q[:, k] * (Q[:, k] @ r)

    k = len(support)
    rel = np.linalg.norm(r) / bnorm
    if rel >= eps and k:
        warnings.warn(
            f"omp: tolerance {eps:.2e} unreachable; achieved {rel:.2e} "
            f"with {k} terms", stacklevel=2)
    coeffs = np.zeros(K)
    if k:
        c = scipy_solve_triangular(R[:k, :k], Q[:, :k].T @ b)
        coeffs[np.array(support)] = c
    return OMPResult(coeffs, np.array(support, dtype=int), k, rel)


def scipy_solve_triangular(R, y):
    import scipy.linalg
    return scipy.linalg.solve_triangular(R, y, lower=False)


# ---------------------------------------------------------------------------
# sparse tensor approximation
# ---------------------------------------------------------------------------


@dataclass
class SparseTensorRep:
    """Sparse combination of {poly_i1(mu) * mode_i2(x)} dictionary atoms."""

    mean: np.ndarray
    modes: np.ndarray              # (N, n_dof)
    basis: PolynomialBasis
    poly_idx: np.ndarray           # i1 per retained term
    mode_idx: np.ndarray           # i2 per retained term
    values: np.ndarray             # c per retained term
    rel_residual: float

    @property
    def n_terms(self):
        return len(self.values)

    def eval(self, mus, dof_indices=None):
        """Field values at parameter samples; rows are samples."""
        mus = np.atleast_2d(np.asarray(mus, dtype=float))
        modes = (self.modes if dof_indices is None
                 else self.modes[:, dof_indices])
        mean = self.mean if dof_indices is None else self.mean[dof_indices]
        out = np.tile(mean, (mus.shape[0], 1))
        if self.n_terms:
            P = self.basis.eval(mus)[:, self.poly_idx] * self.values[None, :]
            out += P @ modes[self.mode_idx, :]
        return out


def tensor_dictionary(P, modes_at_x):
    """Dictionary matrix Pi with rows (mu_j, x_i) and columns (i1, i2).

    ``P``: (n_mu, M_g) polynomial design matrix; ``modes_at_x``: (N, n_x)
    mode values at the sampled spatial points.  Column (i1, i2) maps to flat
    index i1 * N + i2.
    """
    n_mu, Mg = P.shape
    N, n_x = modes_at_x.shape
    Pi = np.einsum("ja,bi->jiab", P, modes_at_x)
    return Pi.reshape(n_mu * n_x, Mg * N)


def staomp(snapshots, mus, n_modes, basis, x_indices, mu_indices, eps_on,
           weights=None, subtract_mean=False, max_terms=None):
    """Sparse tensor approximation of sampled G(x, mu) via OMP.

    Step 1 extracts ``n_modes`` spatial modes from the snapshots by the
    method of snapshots; step 2 forms the tensor dictionary with the given
    polynomial basis; step 3 fits the snapshot values at the sample design
    (x_indices x mu_indices) with OMP to relative tolerance ``eps_on``.
    """
    G = np.atleast_2d(np.asarray(snapshots, dtype=float))
    kle = snapshot_kle(G, weights=weights, n_modes=n_modes,
                       subtract_mean=subtract_mean)
    modes = kle.modes
    N = modes.shape[0]
    x_indices = np.asarray(x_indices, dtype=int)
    mu_indices = np.asarray(mu_indices, dtype=int)
    P = basis.eval(np.atleast_2d(mus)[mu_indices])
    Pi = tensor_dictionary(P, modes[:, x_indices])
    b = (G[np.ix_(mu_indices, x_indices)] - kle.mean[x_indices][None, :]).ravel()
    res = omp(Pi, b, eps_on, max_terms=max_terms)
    return SparseTensorRep(kle.mean, modes, basis,
                           res.support // N, res.support % N,
                           res.coeffs[res.support], res.rel_residual)


def eval_rep(rep, mus, dof_indices=None):
    """Evaluate a separated representation at parameter samples."""
    return rep.eval(mus, dof_indices=dof_indices)


# ---------------------------------------------------------------------------
# representation file format
# ---------------------------------------------------------------------------

_REP_HEADER = "msrb-rep 1"


def save_rep(path, rep):
    """Write a separated representation as structured text."""
    kind = "sparse" if isinstance(rep, SparseTensorRep) else "lsmos"
    with open(path, "w") as fh:
        fh.write(f"{_REP_HEADER}\n{kind}\n")
        fh.write(f"{rep.basis.family} {rep.basis.p} {rep.basis.degree}\n")
        fh.write(f"{rep.mean.size} {rep.modes.shape[0]}\n")
        np.savetxt(fh, rep.mean[None, :])
        np.savetxt(fh, rep.modes.reshape(rep.modes.shape[0], -1))
        if kind == "sparse":
            fh.write(f"{rep.n_terms}\n")
            for i1, i2, c in zip(rep.poly_idx, rep.mode_idx, rep.values):
                fh.write(f"{i1} {i2} {float(c)!r}\n")
        else:
            fh.write(f"{rep.coeffs.shape[1]}\n")
            np.savetxt(fh, rep.coeffs.reshape(rep.coeffs.shape[0], -1))
            np.savetxt(fh, rep.eigenvalues[None, :])


def load_rep(path):
    """Read back a representation written by :func:`save_rep`."""
    with open(path) as fh:
        header = fh.readline().strip()
        if header != _REP_HEADER:
            raise FormatError(f"unrecognized representation header {header!r}")
        kind = fh.readline().strip()
        family, p, degree = fh.readline().split()
        basis = poly_basis(family, int(p), int(degree))
        n_dof, n_modes = map(int, fh.readline().split())
        mean = np.array([float(v) for v in fh.readline().split()])
        modes = np.array([[float(v) for v in fh.readline().split()]
                          for _ in range(n_modes)]).reshape(n_modes, n_dof)
        if kind == "sparse":
            mt = int(fh.readline())
            i1, i2, vals = [], [], []
            for _ in range(mt):
                a, b_, c = fh.readline().split()
                i1.append(int(a)), i2.append(int(b_)), vals.append(float(c))
            return SparseTensorRep(mean, modes, basis, np.array(i1, dtype=int),
                                   np.array(i2, dtype=int), np.array(vals), 0.0)
        mg = int(fh.readline())
        coeffs = np.array([[float(v) for v in fh.readline().split()]
                           for _ in range(n_modes)]).reshape(n_modes, mg)
        lams = np.array([float(v) for v in fh.readline().split()])
        return SeparatedRep(mean, modes, coeffs, basis, lams, 0)
