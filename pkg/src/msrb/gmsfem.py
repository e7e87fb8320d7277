"""Mixed multiscale basis functions per coarse edge.

For a coarse edge E_i, snapshots solve local Neumann problems on each block
of the neighborhood w_i separately: unit normal flux on one fine edge of
E_i, no flow on the rest of dw_i, and the matching constant source (sign
fixed per block by the divergence theorem).  A local spectral problem
a_i(v, w) = lambda s_i(v, w) on the snapshot span is then truncated to the
eigenfunctions of the smallest eigenvalues.  All basis vectors live on fine
RT0 DOFs restricted to their neighborhood.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NumericalError
from .linalg import sym_eig
from .mixedfem import assemble_affine, boundary_dof_values, mass_matrix


@dataclass
class EdgeSnapshotSet:
    edge_index: int
    mu: np.ndarray
    dofs: np.ndarray        # global fine-edge ids carrying the snapshots
    vectors: np.ndarray     # (len(dofs), J) columns v_1 .. v_J
    trace_rows: np.ndarray  # positions of the E_i fine edges inside `dofs`


@dataclass
class LocalSpectralBasis:
    edge_index: int
    mu: np.ndarray
    dofs: np.ndarray
    vectors: np.ndarray     # (len(dofs), l_i)
    eigenvalues: np.ndarray  # ascending


@dataclass
class OfflineSpace:
    grid: object
    bases: list             # LocalSpectralBasis per coarse edge (all edges)
    mu: np.ndarray

    @property
    def n_off(self):
        return sum(b.vectors.shape[1] for b in self.bases)

    def truncated(self, l):
        """Offline space with at most l leading modes per edge (nested)."""
        bases = [LocalSpectralBasis(b.edge_index, b.mu, b.dofs,
                                    b.vectors[:, :l], b.eigenvalues[:l])
                 for b in self.bases]
        return OfflineSpace(self.grid, bases, self.mu)

    def galerkin_parts(self, spaces):
        grid = self.grid
        interior = [b for b in self.bases
                    if not grid._coarse_edges[b.edge_index].is_boundary]
        Z = stack_local_columns(grid.n_edges,
                                [(b.dofs, b.vectors) for b in interior])
        boundary = [b for b in self.bases
                    if grid._coarse_edges[b.edge_index].is_boundary]

        def lift(g_out):
            return _moment_lift(spaces, boundary, g_out)

        Qc = coarse_pressure_injection(grid)
        p_w = grid.Hx * grid.Hy * np.ones(grid.n_coarse_cells)
        return Z, lift, Qc, p_w


def stack_local_columns(n_rows, items):
    """Sparse matrix whose columns are locally supported vectors."""
    rows, cols, data = [], [], []
    j = 0
    for dofs, mat in items:
        mat = np.atleast_2d(mat)
        for c in range(mat.shape[1]):
            rows.append(dofs)
            cols.append(np.full(len(dofs), j))
            data.append(mat[:, c])
            j += 1
    if not rows:
        return sp.csc_matrix((n_rows, 0))
    return sp.csc_matrix(
        (np.concatenate(data),
         (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_rows, j))


def coarse_pressure_injection(grid):
    """Indicator matrix from coarse piecewise constants to fine cells."""
    return sp.csc_matrix(
        (np.ones(grid.n_cells),
         (np.arange(grid.n_cells), grid.fine_cell_to_coarse)),
        shape=(grid.n_cells, grid.n_coarse_cells))


def _moment_lift(spaces, boundary_bases, g_out):
    """Boundary lift matching edge-averaged flux data against the edge bases.

    For each boundary coarse edge, the own-basis moments of (g_H - g) vanish,
    which fixes the basis coefficients through the trace Gram system.
    """
    grid = spaces.grid
    v = np.zeros(grid.n_edges)
    if g_out is None:
        return v
    vb = boundary_dof_values(spaces, g_out)
    if not np.any(vb):
        return v
    for b in boundary_bases:
        ce = grid._coarse_edges[b.edge_index]
        rows = np.searchsorted(b.dofs, ce.fine_edges)
        T = b.vectors[rows, :]              # E_i traces of the basis
        w = grid.edge_length[ce.fine_edges]
        target = vb[ce.fine_edges]
        G = T.T @ (w[:, None] * T)
        rhs = T.T @ (w * target)
        try:
            c = np.linalg.solve(G, rhs)
        except np.linalg.LinAlgError:
            c, *_ = np.linalg.lstsq(G, rhs, rcond=None)
        v[b.dofs] += b.vectors @ c
    return v


# ---------------------------------------------------------------------------
# snapshot workspace: per-mu assembled operators and block factorizations
# ---------------------------------------------------------------------------


class SnapshotWorkspace:
    """Per-mu assembly state reused across coarse edges and blocks."""

    def __init__(self, grid, spaces, ad, mu):
        self.grid = grid
        self.spaces = spaces
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        self.k_inv = ad.reconstruct(self.mu)[0]
        if np.any(self.k_inv <= 0):
            raise NumericalError(
                "affine reconstruction of 1/k is not positive at this mu")
        self.M = mass_matrix(grid, self.k_inv)
        self._blocks = {}

    def block(self, c):
        if c not in self._blocks:
            self._blocks[c] = _BlockSolver(self, c)
        return self._blocks[c]


class _BlockSolver:
    """Factorized interior saddle system of one coarse block."""

    def __init__(self, ws, block_id):
        grid = ws.grid
        self.cells = grid.coarse_cell_fine_cells(block_id)
        in_block = np.zeros(grid.n_cells + 1, dtype=bool)
        in_block[self.cells] = True
        edges = np.unique(grid.cell_edges[self.cells])
        nb = grid.edge_cells[edges]
        both = in_block[nb[:, 0]] & in_block[nb[:, 1]] & (nb >= 0).all(axis=1)
        self.interior = edges[both]
        self.boundary = edges[~both]
        A = ws.M[np.ix_(self.interior, self.interior)]
        B = ws.spaces.B[self.cells][:, self.interior]
        n_p = len(self.cells)
        w = grid.cell_area * np.ones(n_p)
        K = sp.bmat([[A, B.T, None],
                     [B, None, w[:, None]],
                     [None, w[None, :], None]], format="csc")
        self.lu = spla.splu(K)
        self.M_ib = ws.M[np.ix_(self.interior, self.boundary)]
        self.B_b = ws.spaces.B[self.cells][:, self.boundary]
        self.area = grid.cell_area

    def solve(self, vb_boundary, source_per_cell):
        """Interior fluxes for prescribed boundary DOFs and constant source."""
        f1 = -self.M_ib @ vb_boundary
        f2 = source_per_cell * self.area - self.B_b @ vb_boundary
        rhs = np.concatenate([f1, f2, [0.0]])
        x = self.lu.solve(rhs)
        return x[:len(self.interior)]


def edge_snapshots(ws, edge):
    """Snapshot set of a coarse edge: one local solve per fine edge of E_i."""
    grid = ws.grid
    ce = grid._coarse_edges[edge] if isinstance(edge, int) else edge
    ei = ce.fine_edges
    lengths = grid.edge_length[ei]
    block_area = grid.Hx * grid.Hy

    support = [ei]
    solvers = []
    for b in ce.blocks:
        bs = ws.block(b)
        support.append(bs.interior)
        solvers.append(bs)
    dofs = np.unique(np.concatenate(support))
    vectors = np.zeros((len(dofs), ce.n_fine))
    ei_pos = np.searchsorted(dofs, ei)

    # source sign per block: positive where E_i is an outflow boundary,
    # i.e. on the block the edge normal points out of
    signs = []
    for b in ce.blocks:
        bx, by = b % grid.nx_c, b // grid.nx_c
        on_negative_side = (bx, by) != ce.pos
        signs.append(1.0 if on_negative_side else -1.0)

    for j in range(ce.n_fine):
        vectors[ei_pos[j], j] = 1.0
        for bs, sgn in zip(solvers, signs):
            vb = np.zeros(len(bs.boundary))
            hit = np.searchsorted(bs.boundary, ei[j])
            vb[hit] = 1.0
            alpha = sgn * lengths[j] / block_area
            v_int = bs.solve(vb, alpha)
            vectors[np.searchsorted(dofs, bs.interior), j] = v_int
    return EdgeSnapshotSet(ce.index, ws.mu, dofs, vectors, ei_pos)


def _edge_weights(grid, k_inv, fine_edges):
    """Harmonic-mean 1/k trace weight per fine edge of a coarse edge."""
    nb = grid.edge_cells[fine_edges]
    w = np.empty(len(fine_edges))
    for i, (c0, c1) in enumerate(nb):
        if c0 < 0:
            w[i] = k_inv[c1]
        elif c1 < 0:
            w[i] = k_inv[c0]
        else:
            w[i] = 2.0 / (1.0 / k_inv[c0] + 1.0 / k_inv[c1])
    return w


def spectral_reduce(ws, snap, l_i):
    """Keep the l_i smallest-eigenvalue modes of the local spectral problem."""
    grid = ws.grid
    ce = grid._coarse_edges[snap.edge_index]
    V = snap.vectors
    J = V.shape[1]
    if l_i > J:
        raise ValueError(f"l_i = {l_i} exceeds {J} snapshots on edge "
                         f"{snap.edge_index}")
    w_edge = _edge_weights(grid, ws.k_inv, ce.fine_edges)
    traces = V[snap.trace_rows, :]
    A_t = traces.T @ ((w_edge * grid.edge_length[ce.fine_edges])[:, None]
                      * traces)

    sub = np.ix_(snap.dofs, snap.dofs)
    S_op = ws.M[sub] + ws.spaces.DIV[sub]
    S_t = V.T @ (S_op @ V)
    S_t = 0.5 * (S_t + S_t.T)

    # drop numerically dependent snapshots before the generalized solve
    lam_s, U = np.linalg.eigh(S_t)
    keep = lam_s > 1e-12 * max(lam_s.max(), 1e-300)
    if not np.all(keep):
        warnings.warn(
            f"edge {snap.edge_index}: dropped {np.sum(~keep)} dependent "
            "snapshots in the spectral problem", stacklevel=2)
    U = U[:, keep] / np.sqrt(lam_s[keep])
    lam, Y = sym_eig(U.T @ A_t @ U)
    take = min(l_i, Y.shape[1])
    Z = U @ Y[:, :take]
    return LocalSpectralBasis(snap.edge_index, ws.mu, snap.dofs,
                              V @ Z, lam[:take])


def offline_space(grid, spaces, ad, mu, l):
    """Spectral bases of every coarse edge concatenated."""
    ws = SnapshotWorkspace(grid, spaces, ad, mu)
    bases = []
    for ce in grid._coarse_edges:
        snap = edge_snapshots(ws, ce)
        bases.append(spectral_reduce(ws, snap, min(l, ce.n_fine)))
    return OfflineSpace(grid, bases, ws.mu)


@dataclass
class CoarseSolution:
    v: np.ndarray            # fine-DOF velocity
    p: np.ndarray            # pressure DOFs of the space's pressure block
    coeffs: np.ndarray       # velocity basis coefficients


def coarse_solve(space, spaces, ad, mu, f_cells=None, g_out=None, tol=1e-9):
    """Galerkin mixed solve in span{basis} x piecewise constants.

    The trial space is the no-flow part of the basis; boundary data enters
    through an edge-averaged lift.  ``space`` must provide
    ``galerkin_parts(spaces) -> (Z, lift, Qc, pressure_weights)``.
    """
    from .linalg import solve_saddle

    Z, lift, Qc, p_w = space.galerkin_parts(spaces)
    M_terms, B, rhs_fn = assemble_affine(spaces, ad)
    kq = ad.coeffs(np.atleast_2d(mu))[0]
    M = sum(c * Mq for c, Mq in zip(kq, M_terms))
    F = rhs_fn(f_cells)

    v_lift = lift(g_out)
    MZ = M @ Z
    M_H = np.asarray((Z.T @ MZ).todense()) if sp.issparse(MZ) else Z.T @ MZ
    BZ = Qc.T @ (B @ Z)
    B_H = np.asarray(BZ.todense()) if sp.issparse(BZ) else BZ
    f1 = -(Z.T @ (M @ v_lift))
    f2 = Qc.T @ (F - B @ v_lift)
    u, p = solve_saddle(M_H, B_H, np.asarray(f1).ravel(),
                        np.asarray(f2).ravel(), pressure_nullspace=True,
                        pressure_weights=p_w, tol=tol)
    v = Z @ u + v_lift
    # report the physical pressure (negative of the saddle multiplier)
    return CoarseSolution(np.asarray(v).ravel(), -p, u)


class FineHookSpace:
    """Degenerate space equal to the full fine RT0 pair (testing hook)."""

    def __init__(self, spaces):
        self.spaces = spaces

    def galerkin_parts(self, spaces):
        grid = spaces.grid
        n = grid.n_edges
        Z = sp.csc_matrix(
            (np.ones(len(grid.interior_edges)),
             (grid.interior_edges, np.arange(len(grid.interior_edges)))),
            shape=(n, len(grid.interior_edges)))
        Qc = sp.identity(grid.n_cells, format="csc")

        def lift(g_out):
            return boundary_dof_values(spaces, g_out)

        return Z, lift, Qc, spaces.cell_areas
