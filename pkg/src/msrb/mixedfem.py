"""Lowest-order Raviart-Thomas mixed FEM on the fine grid.

Sign conventions: velocity DOFs are normal components along the fixed
positive-axis orientation; prescribed boundary data g is the outward flux
v.n, so DOF = -g on the left/bottom boundary and +g on the right/top.
Coefficient integrals use midpoint quadrature (cellwise-constant 1/k), which
gives the closed-form 2x2 edge-pair mass pattern (1/3, 1/6) * hx * hy per
direction.  The pure-Neumann pressure nullspace is pinned to zero mean.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NumericalError
from .linalg import solve_saddle


def mass_matrix(grid, cell_weights):
    """RT0 velocity mass matrix with cellwise-constant weights."""
    w = np.broadcast_to(np.asarray(cell_weights, dtype=float), (grid.n_cells,))
    area = grid.cell_area
    local = area / 6.0 * np.array([
        [2.0, 1.0, 0.0, 0.0],
        [1.0, 2.0, 0.0, 0.0],
        [0.0, 0.0, 2.0, 1.0],
        [0.0, 0.0, 1.0, 2.0]])
    data = w[:, None, None] * local[None, :, :]
    rows = np.repeat(grid.cell_edges[:, :, None], 4, axis=2)
    cols = np.repeat(grid.cell_edges[:, None, :], 4, axis=1)
    M = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                      shape=(grid.n_edges, grid.n_edges))
    return M.tocsr()


def divergence_matrix(grid):
    """Pairing b(v, q) = int div(v) q for piecewise-constant fine pressures."""
    vals = grid.cell_edge_signs * grid.cell_edge_lengths
    rows = np.repeat(np.arange(grid.n_cells), 4)
    B = sp.coo_matrix((vals.ravel(), (rows, grid.cell_edges.ravel())),
                      shape=(grid.n_cells, grid.n_edges))
    return B.tocsr()


@dataclass
class FineSpaces:
    """Fine RT0 x P0 pair with Gram matrices and boundary bookkeeping."""

    grid: object
    B: sp.csr_matrix = field(init=False)
    M1: sp.csr_matrix = field(init=False)        # L2 velocity Gram (k = 1)
    DIV: sp.csr_matrix = field(init=False)       # divergence Gram
    GV: sp.csr_matrix = field(init=False)        # H(div) Gram
    cell_areas: np.ndarray = field(init=False)
    boundary_sign: np.ndarray = field(init=False)  # DOF = sign * (v . n_out)

    def __post_init__(self):
        g = self.grid
        self.B = divergence_matrix(g)
        self.M1 = mass_matrix(g, 1.0)
        Winv = sp.diags(1.0 / (g.cell_area * np.ones(g.n_cells)))
        self.DIV = (self.B.T @ Winv @ self.B).tocsr()
        self.GV = (self.M1 + self.DIV).tocsr()
        self.cell_areas = g.cell_area * np.ones(g.n_cells)
        sign = np.zeros(g.n_edges)
        for e in g.boundary_edges:
            mid = g.edge_midpoints[e]
            if e < g.n_vert:
                sign[e] = -1.0 if mid[0] < 0.5 else 1.0
            else:
                sign[e] = -1.0 if mid[1] < 0.5 else 1.0
        self.boundary_sign = sign
        self._affine_cache = {}

    @property
    def n_velocity(self):
        return self.grid.n_edges

    @property
    def n_pressure(self):
        return self.grid.n_cells


@dataclass
class FineSolution:
    v: np.ndarray
    p: np.ndarray
    mu: np.ndarray


def assemble_affine(spaces, ad):
    """Per-term mass blocks, divergence pairing, and a source functional hook.

    Returns ``(M_terms, B, rhs_fn)`` where ``rhs_fn(f_cells)`` integrates a
    cellwise source against the pressure basis.  Blocks are cached per
    decomposition.
    """
    key = id(ad)
    if key not in spaces._affine_cache:
        terms = [mass_matrix(spaces.grid, ad.fields[q])
                 for q in range(ad.m_a)]
        spaces._affine_cache[key] = terms
    M_terms = spaces._affine_cache[key]

    def rhs_fn(f_cells):
        if f_cells is None:
            return np.zeros(spaces.n_pressure)
        return spaces.cell_areas * np.asarray(f_cells, dtype=float)

    return M_terms, spaces.B, rhs_fn


def boundary_dof_values(spaces, g_out):
    """Boundary DOF values from outward-flux data on grid.boundary_edges."""
    grid = spaces.grid
    vb = np.zeros(grid.n_edges)
    if g_out is not None:
        vb[grid.boundary_edges] = (
            spaces.boundary_sign[grid.boundary_edges]
            * np.asarray(g_out, dtype=float))
    return vb


def solve_fine(spaces, ad, mu, f_cells=None, g_out=None, tol=1e-10):
    """Reference mixed solve at one parameter value.

    ``f_cells``: source at cell midpoints; ``g_out``: outward flux per
    boundary edge (edge averages), default 0.  Raises on incompatible data.
    """
    grid = spaces.grid
    M_terms, B, rhs_fn = assemble_affine(spaces, ad)
    kq = ad.coeffs(np.atleast_2d(mu))[0]
    M = sum(c * Mq for c, Mq in zip(kq, M_terms))
    F = rhs_fn(f_cells)

    vb = boundary_dof_values(spaces, g_out)
    idx = grid.interior_edges
    A_ii = M[idx][:, idx]
    B_i = B[:, idx]
    f1 = -(M @ vb)[idx]
    f2 = F - B @ vb
    v_i, p = solve_saddle(A_ii, B_i, f1, f2, pressure_nullspace=True,
                          pressure_weights=spaces.cell_areas, tol=tol)
    v = vb.copy()
    v[idx] = v_i
    # the saddle multiplier is the negative of the physical pressure
    return FineSolution(v, -p, np.atleast_1d(np.asarray(mu, dtype=float)))


def local_conservation_residual(spaces, sol, f_cells=None):
    """max over cells of | sum_edges (v . n_out)|e|  -  int_K f |."""
    grid = spaces.grid
    v = sol.v if isinstance(sol, FineSolution) else np.asarray(sol)
    flux = spaces.B @ v
    F = (np.zeros(grid.n_cells) if f_cells is None
         else spaces.cell_areas * np.asarray(f_cells, dtype=float))
    return float(np.max(np.abs(flux - F)))


def norms(spaces, v):
    """(L2 norm, H(div) norm) of a velocity DOF vector."""
    v = np.asarray(v, dtype=float)
    l2 = float(np.sqrt(max(v @ (spaces.M1 @ v), 0.0)))
    hdiv = float(np.sqrt(max(v @ (spaces.GV @ v), 0.0)))
    return l2, hdiv


def pressure_norm(spaces, p):
    p = np.asarray(p, dtype=float)
    return float(np.sqrt(np.sum(spaces.cell_areas * p * p)))


def velocity_at_points(grid, v, local_pts):
    """Velocity field values at reference points inside every cell.

    ``local_pts``: (m, 2) points in [0,1]^2; returns (n_cells, m, 2).
    RT0 on rectangles: v_x is linear in x, v_y linear in y.
    """
    e = grid.cell_edges
    vL, vR, vB, vT = v[e[:, 0]], v[e[:, 1]], v[e[:, 2]], v[e[:, 3]]
    xi = np.asarray(local_pts)[:, 0][None, :]
    eta = np.asarray(local_pts)[:, 1][None, :]
    vx = vL[:, None] * (1 - xi) + vR[:, None] * xi
    vy = vB[:, None] * (1 - eta) + vT[:, None] * eta
    return np.stack([vx, vy], axis=-1)


def velocity_l2_error(spaces, v, exact_fn, n_gauss=2):
    """L2 distance between a DOF field and an analytic velocity."""
    grid = spaces.grid
    gp, gw = np.polynomial.legendre.leggauss(n_gauss)
    gp = 0.5 * (gp + 1.0)
    gw = 0.5 * gw
    pts = np.array([[a, b] for a in gp for b in gp])
    wts = np.array([wa * wb for wa in gw for wb in gw])
    vals = velocity_at_points(grid, v, pts)
    origins = grid.cell_centers - 0.5 * np.array([grid.hx, grid.hy])
    phys = origins[:, None, :] + pts[None, :, :] * np.array([grid.hx, grid.hy])
    exact = exact_fn(phys.reshape(-1, 2)).reshape(vals.shape)
    diff2 = np.sum((vals - exact) ** 2, axis=-1)
    return float(np.sqrt(np.sum(diff2 @ wts) * grid.cell_area))
