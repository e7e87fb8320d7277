"""Shared numerical kernels.

Saddle-point systems are solved by a direct sparse factorization of the full
indefinite block matrix; the pure-Neumann pressure nullspace is removed by a
zero-mean Lagrange constraint row.  Eigenproblems are dense (the local
spectral problems are small).  Inner products throughout the package are
given either as a Gram matrix or as a callable ``ip(u, v)``.
"""

import warnings

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError


def solve_saddle(A, B, f1, f2, pressure_nullspace=False, pressure_weights=None,
                 tol=1e-10):
    """Solve  A v + B^T p = f1,  B v = f2  with SPD A-block.

    When ``pressure_nullspace`` is set, constants are assumed to span
    ker(B^T) and p is pinned to zero (weighted) mean; f2 must then satisfy
    the compatibility condition sum(f2) = 0 up to tolerance.
    Returns ``(v, p)``; raises :class:`NumericalError` if the block residuals
    exceed ``tol * (1 + ||rhs||)``.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    n_v, n_p = A.shape[0], B.shape[0]
    f1 = np.asarray(f1, dtype=float).ravel()
    f2 = np.asarray(f2, dtype=float).ravel()
    scale = 1.0 + np.linalg.norm(np.concatenate([f1, f2]))

    if pressure_nullspace:
        w = (np.ones(n_p) if pressure_weights is None
             else np.asarray(pressure_weights, dtype=float))
        if abs(f2.sum()) > tol * scale:
            raise NumericalError(
                f"incompatible data: sum(f2) = {f2.sum():.3e} with pressure "
                "nullspace present")
        K = sp.bmat([[A, B.T, None],
                     [B, None, w[:, None]],
                     [None, w[None, :], None]], format="csc")
        rhs = np.concatenate([f1, f2, [0.0]])
    else:
        K = sp.bmat([[A, B.T], [B, None]], format="csc")
        rhs = np.concatenate([f1, f2])

    try:
        lu = spla.splu(K)
        x = lu.solve(rhs)
    except RuntimeError as exc:  # singular factorization
        raise NumericalError(f"saddle factorization failed: {exc}") from exc

    v, p = x[:n_v], x[n_v:n_v + n_p]
    r1 = np.linalg.norm(A @ v + B.T @ p - f1)
    r2 = np.linalg.norm(B @ v - f2)
    if pressure_nullspace:
        # the multiplier column perturbs B v = f2 for incompatible data only
        r2 = np.linalg.norm(B @ v + w * x[-1] - f2)
    if max(r1, r2) > tol * scale:
        raise NumericalError(
            f"saddle solve residuals ({r1:.3e}, {r2:.3e}) exceed "
            f"{tol:.1e} * {scale:.3e}")
    return v, p


def sym_eig(M, S=None):
    """Generalized symmetric eigenproblem M z = lambda S z, ascending.

    Eigenvectors are S-orthonormal (Euclidean-orthonormal for S=None).
    """
    M = np.asarray(M, dtype=float)
    if S is not None:
        S = np.asarray(S, dtype=float)
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise NumericalError("mass matrix S is not SPD")
    w, V = scipy.linalg.eigh(M, S)
    return w, V


def least_squares(A, F):
    """Minimum-norm least squares solution of A d ~= F."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        raise ValueError("empty least-squares matrix")
    d, *_ = np.linalg.lstsq(A, np.asarray(F, dtype=float), rcond=None)
    return d


def _as_ip(inner_product):
    if inner_product is None:
        return lambda u, v: float(u @ v)
    if callable(inner_product):
        return inner_product
    G = inner_product
    return lambda u, v: float(u @ (G @ v))


def gram_schmidt(vectors, inner_product=None, drop_tol=1e-10):
    """Orthonormalize ``vectors`` in the given inner product.

    Modified Gram-Schmidt with one reorthogonalization pass.  Vectors whose
    norm after projection falls below ``drop_tol`` times their original norm
    are dropped.  Returns ``(basis, n_dropped)``.
    """
    ip = _as_ip(inner_product)
    basis = []
    n_dropped = 0
    for v in vectors:
        v = np.array(v, dtype=float)
        orig = np.sqrt(max(ip(v, v), 0.0))
        if orig == 0.0:
            n_dropped += 1
            continue
        for _ in range(2):
            for b in basis:
                v = v - ip(b, v) * b
        nrm = np.sqrt(max(ip(v, v), 0.0))
        if nrm < drop_tol * orig:
            n_dropped += 1
            continue
        basis.append(v / nrm)
    return basis, n_dropped


def gram_schmidt_columns(V, gram, drop_tol=1e-10, warn=True):
    """Column-wise Gram-Schmidt against a sparse/dense Gram matrix.

    Same semantics as :func:`gram_schmidt` but operates on a 2-D array of
    column vectors and exploits matrix products.
    """
    V = np.asarray(V, dtype=float)
    cols = []
    n_dropped = 0
    for j in range(V.shape[1]):
        v = V[:, j].copy()
        gv = gram @ v
        orig = np.sqrt(max(float(v @ gv), 0.0))
        if orig == 0.0:
            n_dropped += 1
            continue
        for _ in range(2):
            if cols:
                Q = np.column_stack(cols)
                v = v - Q @ (Q.T @ (gram @ v))
        nrm = np.sqrt(max(float(v @ (gram @ v)), 0.0))
        if nrm < drop_tol * orig:
            n_dropped += 1
            continue
        cols.append(v / nrm)
    if n_dropped and warn:
        warnings.warn(f"dropped {n_dropped} dependent vectors", stacklevel=2)
    return (np.column_stack(cols) if cols else np.zeros((V.shape[0], 0)),
            n_dropped)
