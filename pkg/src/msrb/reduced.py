"""Reduced mixed multiscale basis engine.

The snapshot library collects per-edge spectral bases over an optimal
parameter set.  Two constructions compress it: groupwise cross-validation
(pick the group of one-vector-per-edge minimizing mean validation error) and
per-edge POD.  The reduced space stores the fine-DOF expansion Z, per-term
projected blocks, and the Riesz tables of the residual error estimator, so
online solves and estimates never touch fine-dimensional objects beyond
matrix-vector products done offline.
"""

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigurationError, FormatError, NumericalError
from .fields import AffineDecomposition
from .gmsfem import (SnapshotWorkspace, coarse_pressure_injection,
                     edge_snapshots, spectral_reduce, stack_local_columns)
from .linalg import gram_schmidt_columns, solve_saddle
from .mixedfem import assemble_affine
from .separation import poly_basis


@dataclass
class OfflineContext:
    """Everything the offline stage needs besides parameter samples."""

    grid: object
    spaces: object
    ad: AffineDecomposition
    f_cells: np.ndarray
    l: int                      # spectral modes kept per coarse edge
    solver_tol: float = 1e-9


# ---------------------------------------------------------------------------
# snapshot library
# ---------------------------------------------------------------------------


class SnapshotLibrary:
    """Per-edge collections of multiscale basis vectors over chosen samples."""

    def __init__(self, ctx):
        self.ctx = ctx
        grid = ctx.grid
        self.edge_dofs = [None] * grid.n_coarse_edges
        self.edge_cols = [[] for _ in range(grid.n_coarse_edges)]
        self.mus = []
        self._gram_cache = {}

    def extend(self, mu):
        """Append the spectral basis of every coarse edge at one sample."""
        ctx = self.ctx
        ws = SnapshotWorkspace(ctx.grid, ctx.spaces, ctx.ad, mu)
        for ce in ctx.grid._coarse_edges:
            snap = edge_snapshots(ws, ce)
            basis = spectral_reduce(ws, snap, min(ctx.l, ce.n_fine))
            if self.edge_dofs[ce.index] is None:
                self.edge_dofs[ce.index] = basis.dofs
            self.edge_cols[ce.index].append(basis.vectors)
        self.mus.append(np.atleast_1d(np.asarray(mu, dtype=float)))

    def vectors(self, i):
        return np.column_stack(self.edge_cols[i])

    def n_snap(self, i):
        return sum(m.shape[1] for m in self.edge_cols[i])

    @property
    def n_groups(self):
        counts = {self.n_snap(i) for i in range(len(self.edge_cols))}
        if len(counts) != 1:
            raise NumericalError(
                f"uneven per-edge snapshot counts {sorted(counts)}; "
                "cross-edge groups are undefined")
        return counts.pop()

    def group_columns(self, i, n):
        return self.vectors(i)[:, n]

    def _edge_gv(self, i):
        if i not in self._gram_cache:
            dofs = self.edge_dofs[i]
            self._gram_cache[i] = self.ctx.spaces.GV[np.ix_(dofs, dofs)]
        return self._gram_cache[i]

    def edge_gram(self, i):
        """V-inner products of the edge's snapshots (cached GV slice)."""
        Y = self.vectors(i)
        return Y.T @ (self._edge_gv(i) @ Y)


def build_library(ctx, mus):
    lib = SnapshotLibrary(ctx)
    for mu in np.atleast_2d(np.asarray(mus, dtype=float)):
        lib.extend(mu)
    return lib


# ---------------------------------------------------------------------------
# reduced space
# ---------------------------------------------------------------------------


@dataclass
class ReducedSolution:
    v_N: np.ndarray
    p_N: np.ndarray
    mu: np.ndarray


@dataclass
class ReducedSpace:
    """Orthonormal reduced velocity basis with projected online blocks."""

    grid: object
    Z: np.ndarray                  # (n_fine_edges, n_rb), V-orthonormal
    M_N: list                      # per affine term, (n_rb, n_rb)
    B_N: np.ndarray                # (N_el, n_rb)
    Qc: sp.spmatrix                # coarse-pressure injection to fine cells
    p_weights: np.ndarray
    label: str                     # "BOCV" or "POD"
    n_per_edge: int
    boundary_bases: list = field(default_factory=list)
    history: dict = field(default_factory=dict)

    @property
    def n_rb(self):
        return self.Z.shape[1]

    def galerkin_parts(self, spaces):
        from .gmsfem import _moment_lift

        def lift(g_out):
            return _moment_lift(spaces, self.boundary_bases, g_out)

        return sp.csc_matrix(self.Z), lift, self.Qc, self.p_weights


def _finalize_space(ctx, interior_cols, boundary_items, label, n_per_edge,
                    history=None):
    spaces = ctx.spaces
    Z, dropped = gram_schmidt_columns(interior_cols, spaces.GV, warn=False)
    if dropped:
        warnings.warn(f"{label}: dropped {dropped} V-dependent basis vectors",
                      stacklevel=2)
    M_terms, B, _ = assemble_affine(spaces, ctx.ad)
    M_N = [Z.T @ (Mq @ Z) for Mq in M_terms]
    Qc = coarse_pressure_injection(ctx.grid)
    B_N = np.asarray((Qc.T @ (B @ sp.csc_matrix(Z))).todense())
    p_w = ctx.grid.Hx * ctx.grid.Hy * np.ones(ctx.grid.n_coarse_cells)
    return ReducedSpace(ctx.grid, Z, M_N, B_N, Qc, p_w, label, n_per_edge,
                        boundary_items, history or {})


def _interior_edge_ids(grid):
    return [ce.index for ce in grid._coarse_edges if not ce.is_boundary]


def _boundary_edge_ids(grid):
    return [ce.index for ce in grid._coarse_edges if ce.is_boundary]


@dataclass
class _LocalBasis:
    edge_index: int
    dofs: np.ndarray
    vectors: np.ndarray


def pod_build(ctx, lib, n_modes):
    """Per-edge POD of the snapshot library, then global orthonormalization.

    Keeps the ``n_modes`` leading energy modes of every edge (truncated with
    a warning where the snapshot rank is lower).
    """
    grid = ctx.grid
    if n_modes > lib.n_groups:
        raise ConfigurationError(
            f"n_modes = {n_modes} exceeds library size {lib.n_groups}")
    per_edge = {}
    energies = {}
    for i in range(grid.n_coarse_edges):
        Y = lib.vectors(i)
        # bitwise-duplicate snapshots only rescale mode energies; dropping
        # them keeps the eigensolve deterministic across library growth
        _, first = np.unique(
            np.array([c.tobytes() for c in Y.T]), return_index=True)
        keep = np.sort(first)
        Y = Y[:, keep]
        G = Y.T @ (lib._edge_gv(i) @ Y)
        G = 0.5 * (G + G.T)
        lam, E = np.linalg.eigh(G)
        lam, E = lam[::-1].copy(), E[:, ::-1]
        lam[lam < 0] = 0.0
        rank = int(np.sum(lam > 1e-12 * max(lam[0], 1e-300)))
        take = min(n_modes, rank)
        if take < n_modes:
            warnings.warn(
                f"edge {i}: snapshot rank {rank} < requested {n_modes} POD "
                "modes; basis truncated", stacklevel=2)
        per_edge[i] = Y @ (E[:, :take] / np.sqrt(lam[:take])[None, :])
        energies[i] = lam
    # mode-major ordering so truncating trailing modes keeps nested prefixes
    cols = []
    for j in range(n_modes):
        for i in _interior_edge_ids(grid):
            if j < per_edge[i].shape[1]:
                v = np.zeros(grid.n_edges)
                v[lib.edge_dofs[i]] = per_edge[i][:, j]
                cols.append(v)
    boundary = [_LocalBasis(i, lib.edge_dofs[i], per_edge[i])
                for i in _boundary_edge_ids(grid)]
    Zraw = np.column_stack(cols) if cols else np.zeros((grid.n_edges, 0))
    return _finalize_space(ctx, Zraw, boundary, "POD", n_modes,
                           history={"pod_energies": energies})


def bocv_build(ctx, lib, validate_mus, eps_star, max_rounds=None,
               reference_solutions=None):
    """Groupwise greedy selection against a validation set.

    Each round solves the candidate reduced problem (current space plus one
    snapshot group) for every validation sample, keeps the group with the
    smallest mean fine-vs-reduced velocity error, and repeats while the
    round's worst group error exceeds ``eps_star``.
    """
    from .mixedfem import solve_fine

    grid, spaces, ad = ctx.grid, ctx.spaces, ctx.ad
    validate_mus = np.atleast_2d(np.asarray(validate_mus, dtype=float))
    if validate_mus.size == 0:
        raise ConfigurationError("empty validation set")
    n_groups = lib.n_groups
    interior = _interior_edge_ids(grid)
    M_terms, B, rhs_fn = assemble_affine(spaces, ad)
    F = rhs_fn(ctx.f_cells)
    Qc = coarse_pressure_injection(grid)
    p_w = grid.Hx * grid.Hy * np.ones(grid.n_coarse_cells)

    if reference_solutions is None:
        reference_solutions = [
            solve_fine(spaces, ad, mu, f_cells=ctx.f_cells)
            for mu in validate_mus]
    ref_v = np.column_stack([s.v for s in reference_solutions])
    kq_all = ad.coeffs(validate_mus)
    # selection norm: mu-weighted mass plus divergence Gram; in this norm
    # nested candidate spaces give non-increasing validation errors
    err_grams = [sum(c * Mq for c, Mq in zip(kq_all[s], M_terms))
                 + spaces.DIV for s in range(len(validate_mus))]

    def group_matrix(n):
        cols = []
        for i in interior:
            v = np.zeros(grid.n_edges)
            v[lib.edge_dofs[i]] = lib.group_columns(i, n)
            cols.append(v)
        return np.column_stack(cols)

    Q = np.zeros((grid.n_edges, 0))
    MQ = [np.zeros((grid.n_edges, 0)) for _ in M_terms]
    QMQ = [np.zeros((0, 0)) for _ in M_terms]
    BQ = np.zeros((grid.n_coarse_cells, 0))
    F_N = Qc.T @ F
    chosen = []
    remaining = list(range(n_groups))
    mean_history = []
    rounds = 0
    while remaining:
        cand_err = np.full(n_groups, np.inf)
        cand_data = {}
        for n in remaining:
            stacked = (np.column_stack([Q, group_matrix(n)]) if Q.size
                       else group_matrix(n))
            D, _ = gram_schmidt_columns(stacked, spaces.GV, warn=False)
            d_new = D[:, Q.shape[1]:]
            # candidate blocks extend the cached projections of Q
            MD_new = [Mq @ d_new for Mq in M_terms]
            MN = []
            for q in range(len(M_terms)):
                cross = MQ[q].T @ d_new
                MN.append(np.block(
                    [[QMQ[q], cross],
                     [cross.T, d_new.T @ MD_new[q]]]))
            BD = np.column_stack(
                [BQ, np.asarray((Qc.T @ (B @ sp.csc_matrix(d_new))).todense())])
            errs = []
            for s, mu in enumerate(validate_mus):
                K = sum(c * m for c, m in zip(kq_all[s], MN))
                try:
                    u, _ = solve_saddle(K, BD, np.zeros(D.shape[1]), F_N,
                                        pressure_nullspace=True,
                                        pressure_weights=p_w,
                                        tol=ctx.solver_tol)
                except NumericalError:
                    errs = None
                    break
                diff = D @ u - ref_v[:, s]
                errs.append(np.sqrt(max(diff @ (err_grams[s] @ diff), 0.0)))
            if errs is None:
                warnings.warn(f"bocv: validation solve failed for group {n}; "
                              "group skipped", stacklevel=2)
                continue
            cand_err[n] = np.mean(errs)
            cand_data[n] = (D, MD_new, MN, BD)
        if not cand_data:
            break
        finite = cand_err[np.isfinite(cand_err)]
        winner = int(np.argmin(cand_err))
        eps_round = float(np.max(finite))
        mean_history.append(float(cand_err[winner]))
        Q, MD_new, QMQ, BQ = cand_data[winner]
        MQ = [np.column_stack([mq, md]) for mq, md in zip(MQ, MD_new)]
        chosen.append(winner)
        remaining.remove(winner)
        rounds += 1
        if eps_round <= eps_star:
            break
        if max_rounds is not None and rounds >= max_rounds:
            break

    boundary = [_LocalBasis(i, lib.edge_dofs[i],
                            lib.vectors(i)[:, chosen])
                for i in _boundary_edge_ids(grid)]
    rs = ReducedSpace(ctx.grid, Q, QMQ, BQ, Qc, p_w, "BOCV", len(chosen),
                      boundary, {"groups": chosen,
                                 "mean_errors": mean_history})
    return rs


# ---------------------------------------------------------------------------
# online solves
# ---------------------------------------------------------------------------


def reduced_solve(rs, ad, mu, f_cells=None, g_out=None, tol=1e-9):
    """Online saddle solve in the reduced blocks; cost independent of
    fine-grid dimension."""
    if g_out is not None and np.any(np.asarray(g_out)):
        raise ConfigurationError(
            "reduced_solve supports homogeneous flux data only; lift the "
            "boundary data through coarse_solve instead")
    kq = ad.coeffs(np.atleast_2d(mu))[0]
    K = sum(c * m for c, m in zip(kq, rs.M_N))
    if f_cells is None:
        F_N = np.zeros(rs.B_N.shape[0])
    else:
        areas = rs.grid.cell_area * np.asarray(f_cells, dtype=float)
        F_N = rs.Qc.T @ areas
    try:
        v_N, p_N = solve_saddle(K, rs.B_N, np.zeros(rs.n_rb), F_N,
                                pressure_nullspace=True,
                                pressure_weights=rs.p_weights, tol=tol)
    except NumericalError as exc:
        cond = np.linalg.cond(K) if rs.n_rb else np.inf
        raise NumericalError(
            f"reduced solve failed (velocity block condition {cond:.3e}): "
            f"{exc}") from exc
    # store the physical pressure (negative of the saddle multiplier)
    return ReducedSolution(v_N, -p_N, np.atleast_1d(np.asarray(mu, float)))


def reconstruct(rs, sol):
    """Fine-grid velocity and pressure fields of a reduced solution."""
    v = rs.Z @ sol.v_N
    p = rs.Qc @ sol.p_N
    return v, np.asarray(p).ravel()


def relative_errors(spaces, references, reduceds):
    """Mean relative L2 errors (velocity, pressure) over matched samples."""
    if len(references) != len(reduceds):
        raise ValueError("sample lists differ in length")
    ev, ep = [], []
    for ref, red in zip(references, reduceds):
        v_ref, p_ref = ref if isinstance(ref, tuple) else (ref.v, ref.p)
        v_red, p_red = red if isinstance(red, tuple) else (red.v, red.p)
        dv = np.sqrt(max((v_red - v_ref) @ (spaces.M1 @ (v_red - v_ref)), 0))
        nv = np.sqrt(max(v_ref @ (spaces.M1 @ v_ref), 0))
        dp = np.sqrt(np.sum(spaces.cell_areas * (p_red - p_ref) ** 2))
        npn = np.sqrt(np.sum(spaces.cell_areas * p_ref ** 2))
        if nv == 0 or npn == 0:
            warnings.warn("zero-norm reference sample skipped", stacklevel=2)
            continue
        ev.append(dv / nv)
        ep.append(dp / npn)
    return float(np.mean(ev)), float(np.mean(ep))


# ---------------------------------------------------------------------------
# a posteriori error estimator (offline/online)
# ---------------------------------------------------------------------------


@dataclass
class EstimatorOffline:
    """Riesz-representer tables and stability constants for the estimator."""

    ad: AffineDecomposition
    T_LL: np.ndarray
    T_LX: np.ndarray
    T_XX: np.ndarray
    q_CC: float
    q_CX: np.ndarray
    T_PP: np.ndarray
    c_V: float
    C_V: float
    beta_LB: float
    n_rb: int

    def alpha_lb(self, mu):
        return float(self.ad.reconstruct(np.atleast_2d(mu))[0].min()) * self.c_V

    def gamma_ub(self, mu):
        return float(self.ad.reconstruct(np.atleast_2d(mu))[0].max()) * self.C_V

    def residual_norms(self, sol):
        """(||e_v_hat||_V, ||e_p_hat||_Q) from the cached tables."""
        kq = self.ad.coeffs(np.atleast_2d(sol.mu))[0]
        w = (kq[:, None] * sol.v_N[None, :]).ravel()
        ev2 = (w @ (self.T_LL @ w) + 2.0 * w @ (self.T_LX @ sol.p_N)
               + sol.p_N @ (self.T_XX @ sol.p_N))
        ep2 = (self.q_CC + 2.0 * sol.v_N @ self.q_CX
               + sol.v_N @ (self.T_PP @ sol.v_N))
        return np.sqrt(max(ev2, 0.0)), np.sqrt(max(ep2, 0.0))


def _interior_gram_solver(spaces):
    """Factorized V-Gram on the no-flow subspace (interior fine edges)."""
    if getattr(spaces, "_gv_interior", None) is None:
        idx = spaces.grid.interior_edges
        spaces._gv_interior = spla.splu(
            spaces.GV[np.ix_(idx, idx)].tocsc())
    return spaces._gv_interior


def _grid_constants(spaces):
    """Stability constants of the discrete norms; cached per fine space.

    All constants refer to the no-flow velocity subspace, where the
    reduced-basis error lives: c_V / C_V are the extreme eigenvalues of
    (L2 mass, V-Gram) and beta is the smallest nonzero singular value of
    the divergence pairing in the (V, Q) norm pair.
    """
    if getattr(spaces, "_stab_constants", None) is not None:
        return spaces._stab_constants
    idx = spaces.grid.interior_edges
    sub = np.ix_(idx, idx)
    n = len(idx)
    if n <= 2200:
        M1 = spaces.M1[sub].toarray()
        GV = spaces.GV[sub].toarray()
        lam = scipy.linalg.eigh(M1, GV, eigvals_only=True)
        c_V, C_V = float(lam[0]), float(lam[-1])
    else:
        # largest eigenvalue of (div-Gram, mass) by Lanczos; the kernel of
        # the divergence is nontrivial by dimension count, so C_V = 1
        lam_max = float(spla.eigsh(spaces.DIV[sub], k=1, M=spaces.M1[sub],
                                   which="LA", return_eigenvectors=False)[0])
        c_V = 1.0 / (1.0 + lam_max)
        C_V = 1.0
    gv = _interior_gram_solver(spaces)
    B_i = spaces.B[:, idx]
    X = gv.solve(B_i.T.toarray())
    S = B_i @ X
    sq = 1.0 / np.sqrt(spaces.cell_areas)
    S = sq[:, None] * S * sq[None, :]
    lam_p = scipy.linalg.eigh(0.5 * (S + S.T), eigvals_only=True)
    beta = float(np.sqrt(max(lam_p[1], 0.0)))   # skip the constant nullspace
    spaces._stab_constants = (c_V, C_V, beta)
    return spaces._stab_constants


def estimator_offline(ctx, rs):
    """Solve all Riesz representers and cache their inner-product tables.

    The velocity residual is tested against the no-flow subspace only,
    matching where the reduced-basis velocity error lives.
    """
    spaces = ctx.spaces
    grid = ctx.grid
    idx = grid.interior_edges
    M_terms, B, rhs_fn = assemble_affine(spaces, ctx.ad)
    F = rhs_fn(ctx.f_cells)
    gv = _interior_gram_solver(spaces)

    n_rb = rs.n_rb
    # velocity-residual representers: G_V L_(q,i) = -M^q Z_i on V^0
    RHS_L = np.hstack([-(Mq @ rs.Z)[idx] for Mq in M_terms]) \
        if n_rb else np.zeros((len(idx), 0))
    L = gv.solve(RHS_L) if RHS_L.size else RHS_L
    R_X = (B.T @ rs.Qc).toarray()[idx]
    X = gv.solve(R_X)
    # (u, w)_V tables via G_V L = RHS_L and G_V X = R_X
    T_LL = L.T @ RHS_L
    T_LX = L.T @ R_X
    T_XX = X.T @ R_X

    # pressure-residual representers in the diagonal Q norm
    areas = spaces.cell_areas
    C = F / areas
    XP = -np.asarray((B @ sp.csc_matrix(rs.Z)).todense()) / areas[:, None] \
        if n_rb else np.zeros((grid.n_cells, 0))
    q_CC = float(np.sum(areas * C * C))
    q_CX = XP.T @ (areas * C)
    T_PP = XP.T @ (areas[:, None] * XP)

    c_V, C_V, beta = _grid_constants(spaces)
    if beta <= 0:
        raise ConfigurationError("inf-sup constant must be positive")
    return EstimatorOffline(ctx.ad, T_LL, T_LX, T_XX, q_CC, q_CX, T_PP,
                            c_V, C_V, beta, n_rb)


def error_estimator(eo, sol):
    """Velocity and pressure error bounds for one reduced solution."""
    if eo.beta_LB <= 0:
        raise ConfigurationError("inf-sup lower bound must be positive")
    ev, ep = eo.residual_norms(sol)
    alpha = eo.alpha_lb(sol.mu)
    gamma = eo.gamma_ub(sol.mu)
    delta_v = ev / alpha + (1.0 + gamma / alpha) * ep / eo.beta_LB
    delta_p = ev / eo.beta_LB + (gamma / eo.beta_LB) * delta_v
    return float(delta_v), float(delta_p)


def brute_force_residual_norms(ctx, rs, sol):
    """Direct Riesz solves of the residual at one mu (estimator oracle)."""
    spaces = ctx.spaces
    idx = ctx.grid.interior_edges
    M_terms, B, rhs_fn = assemble_affine(spaces, ctx.ad)
    F = rhs_fn(ctx.f_cells)
    kq = ctx.ad.coeffs(np.atleast_2d(sol.mu))[0]
    M = sum(c * Mq for c, Mq in zip(kq, M_terms))
    v = rs.Z @ sol.v_N
    p_fine = np.asarray(rs.Qc @ sol.p_N).ravel()
    r1 = (-(M @ v) + B.T @ p_fine)[idx]
    gv = _interior_gram_solver(spaces)
    e_v = gv.solve(r1)
    ev = np.sqrt(max(r1 @ e_v, 0.0))
    r2 = F - B @ v
    ep = np.sqrt(float(np.sum(r2 * r2 / spaces.cell_areas)))
    return ev, ep


# ---------------------------------------------------------------------------
# greedy sampling
# ---------------------------------------------------------------------------


def greedy_select(ctx, xi_train, mu1=None, n_pod=3, max_size=10,
                  return_library=False):
    """Pick the optimal sample set by the residual-estimator greedy loop.

    Builds a POD space of ``n_pod`` modes per edge over the current set,
    estimates the velocity error for every remaining training sample, adds
    the argmax, and continues while the worst estimate does not increase
    (with a hard cap ``max_size``).
    """
    xi_train = np.atleast_2d(np.asarray(xi_train, dtype=float))
    if xi_train.size == 0:
        raise ConfigurationError("empty training set")
    if mu1 is None:
        mu1 = xi_train[0]
    chosen = [np.atleast_1d(np.asarray(mu1, dtype=float))]
    remaining = [mu for mu in xi_train
                 if not np.array_equal(mu, chosen[0])]
    lib = build_library(ctx, [chosen[0]])
    eps_prev = None
    while remaining and len(chosen) < max_size:
        rs = pod_build(ctx, lib, min(n_pod, lib.n_groups))
        eo = estimator_offline(ctx, rs)
        deltas = np.empty(len(remaining))
        for idx, mu in enumerate(remaining):
            sol = reduced_solve(rs, ctx.ad, mu, f_cells=ctx.f_cells,
                                tol=ctx.solver_tol)
            deltas[idx], _ = error_estimator(eo, sol)
        pick = int(np.argmax(deltas))
        eps_n = float(deltas[pick])
        # terminate once the worst estimate stops decreasing (with a small
        # relative tolerance so stagnation counts as termination)
        if eps_prev is not None and eps_n >= eps_prev * (1.0 - 1e-10):
            break
        mu_next = remaining.pop(pick)
        chosen.append(mu_next)
        lib.extend(mu_next)
        eps_prev = eps_n
    xi_op = np.vstack(chosen)
    return (xi_op, lib) if return_library else xi_op


# ---------------------------------------------------------------------------
# offline artifact bundle
# ---------------------------------------------------------------------------

_BUNDLE_VERSION = 1


def save_bundle(path, rs, eo, ctx, seed=None, config_hash=None):
    """Serialize the reduced space, estimator tables, and provenance."""
    ad = ctx.ad
    meta = {
        "version": _BUNDLE_VERSION,
        "label": rs.label,
        "n_per_edge": rs.n_per_edge,
        "basis_family": ad.basis.family,
        "basis_p": ad.basis.p,
        "basis_degree": ad.basis.degree,
        "grid": [ctx.grid.nx_f, ctx.grid.ny_f, ctx.grid.nx_c, ctx.grid.ny_c],
        "seed": seed,
        "config_hash": config_hash,
        "constants": [eo.c_V, eo.C_V, eo.beta_LB],
    }
    np.savez_compressed(
        path,
        meta=json.dumps(meta),
        Z=rs.Z, B_N=rs.B_N, M_N=np.stack(rs.M_N) if rs.M_N else np.zeros(0),
        ad_fields=ad.fields, ad_polys=ad.poly_coeffs,
        f_cells=ctx.f_cells,
        T_LL=eo.T_LL, T_LX=eo.T_LX, T_XX=eo.T_XX,
        q_CC=eo.q_CC, q_CX=eo.q_CX, T_PP=eo.T_PP)


def load_bundle(path):
    """Restore (ReducedSpace, EstimatorOffline, AffineDecomposition, meta)."""
    from .grid import build_hierarchy

    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["meta"]))
    if meta.get("version") != _BUNDLE_VERSION:
        raise FormatError(
            f"bundle version {meta.get('version')} unsupported")
    grid = build_hierarchy(*meta["grid"])
    basis = poly_basis(meta["basis_family"], meta["basis_p"],
                       meta["basis_degree"])
    ad = AffineDecomposition(data["ad_fields"], data["ad_polys"], basis, 0.0)
    Qc = coarse_pressure_injection(grid)
    p_w = grid.Hx * grid.Hy * np.ones(grid.n_coarse_cells)
    rs = ReducedSpace(grid, data["Z"], list(data["M_N"]), data["B_N"], Qc,
                      p_w, meta["label"], meta["n_per_edge"])
    c_V, C_V, beta = meta["constants"]
    eo = EstimatorOffline(ad, data["T_LL"], data["T_LX"], data["T_XX"],
                          float(data["q_CC"]), data["q_CX"], data["T_PP"],
                          c_V, C_V, beta, rs.n_rb)
    return rs, eo, ad, meta
