"""Nested structured rectangular meshes on D = (0,1)^2.

Fine cells are indexed row-major from y=0: ``cell = iy*nx + ix``.  Velocity
degrees of freedom sit on fine edges with a fixed positive-axis orientation:
vertical edges (normal +x) come first, then horizontal edges (normal +y),

    vertical   edge (ix, iy), ix in 0..nx,   iy in 0..ny-1  ->  iy*(nx+1) + ix
    horizontal edge (ix, iy), ix in 0..nx-1, iy in 0..ny    ->  n_vert + iy*nx + ix

The same conventions apply to the coarse mesh.  All containment maps are
precomputed so that downstream assembly is pure array indexing.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class CoarseEdge:
    """One coarse mesh edge with its fine-edge and neighborhood structure."""

    index: int            # position in the deterministic edge ordering
    axis: int             # 0: normal +x (vertical edge), 1: normal +y
    pos: tuple            # (ix, iy) lattice position on the coarse grid
    fine_edges: np.ndarray  # global fine-edge DOF ids on this edge
    blocks: tuple         # coarse cell ids of the neighborhood (1 or 2)
    is_boundary: bool

    @property
    def normal(self):
        """Fixed unit normal m_i (positive axis direction)."""
        return (1.0, 0.0) if self.axis == 0 else (0.0, 1.0)

    @property
    def n_fine(self):
        return len(self.fine_edges)


def _edge_ids(nx, ny):
    """Vertical/horizontal edge id grids for an nx-by-ny cell mesh."""
    n_vert = (nx + 1) * ny
    vert = np.arange(n_vert).reshape(ny, nx + 1)          # [iy, ix]
    horz = n_vert + np.arange(nx * (ny + 1)).reshape(ny + 1, nx)  # [iy, ix]
    return vert, horz


@dataclass
class GridHierarchy:
    """Uniform fine mesh nested in a uniform coarse mesh."""

    nx_f: int
    ny_f: int
    nx_c: int
    ny_c: int
    hx: float = field(init=False)
    hy: float = field(init=False)
    Hx: float = field(init=False)
    Hy: float = field(init=False)

    def __post_init__(self):
        if min(self.nx_f, self.ny_f, self.nx_c, self.ny_c) < 1:
            raise ConfigurationError("cell counts must be positive")
        if self.nx_f % self.nx_c or self.ny_f % self.ny_c:
            raise ConfigurationError(
                f"fine grid {self.nx_f}x{self.ny_f} not divisible by "
                f"coarse grid {self.nx_c}x{self.ny_c}")
        self.hx, self.hy = 1.0 / self.nx_f, 1.0 / self.ny_f
        self.Hx, self.Hy = 1.0 / self.nx_c, 1.0 / self.ny_c
        self._build_fine()
        self._build_maps()

    # ---- fine mesh combinatorics -------------------------------------
    def _build_fine(self):
        nx, ny = self.nx_f, self.ny_f
        self.n_cells = nx * ny
        self.n_vert = (nx + 1) * ny
        self.n_horz = nx * (ny + 1)
        self.n_edges = self.n_vert + self.n_horz
        vert, horz = _edge_ids(nx, ny)

        # cell -> its four edges (left, right, bottom, top)
        ix = np.tile(np.arange(nx), ny)
        iy = np.repeat(np.arange(ny), nx)
        self.cell_edges = np.column_stack([
            vert[iy, ix], vert[iy, ix + 1], horz[iy, ix], horz[iy + 1, ix]])
        # outward-flux signs matching the DOF orientation (+x, +y)
        self.cell_edge_signs = np.tile(
            np.array([-1.0, 1.0, -1.0, 1.0]), (self.n_cells, 1))
        self.cell_edge_lengths = np.tile(
            np.array([self.hy, self.hy, self.hx, self.hx]), (self.n_cells, 1))

        self.edge_length = np.empty(self.n_edges)
        self.edge_length[:self.n_vert] = self.hy
        self.edge_length[self.n_vert:] = self.hx

        bdry = np.zeros(self.n_edges, dtype=bool)
        bdry[vert[:, 0]] = bdry[vert[:, -1]] = True
        bdry[horz[0, :]] = bdry[horz[-1, :]] = True
        self.boundary_edges = np.flatnonzero(bdry)
        self.is_boundary_edge = bdry
        self.interior_edges = np.flatnonzero(~bdry)

        # edge -> (cell on negative side, cell on positive side); -1 outside
        left = np.full((ny, nx + 1), -1, dtype=int)
        right = np.full((ny, nx + 1), -1, dtype=int)
        cells = np.arange(self.n_cells).reshape(ny, nx)
        left[:, 1:] = cells
        right[:, :-1] = cells
        below = np.full((ny + 1, nx), -1, dtype=int)
        above = np.full((ny + 1, nx), -1, dtype=int)
        below[1:, :] = cells
        above[:-1, :] = cells
        self.edge_cells = np.vstack([
            np.column_stack([left.ravel(), right.ravel()]),
            np.column_stack([below.ravel(), above.ravel()])])

        xm = (np.tile(np.arange(nx), ny) + 0.5) * self.hx
        ym = (np.repeat(np.arange(ny), nx) + 0.5) * self.hy
        self.cell_centers = np.column_stack([xm, ym])
        self.cell_area = self.hx * self.hy

        # edge midpoints, used for boundary data and plotting
        vx = np.tile(np.arange(nx + 1), ny) * self.hx
        vy = (np.repeat(np.arange(ny), nx + 1) + 0.5) * self.hy
        hx_ = (np.tile(np.arange(nx), ny + 1) + 0.5) * self.hx
        hy_ = np.repeat(np.arange(ny + 1), nx) * self.hy
        self.edge_midpoints = np.vstack([
            np.column_stack([vx, vy]), np.column_stack([hx_, hy_])])

    # ---- fine/coarse containment -------------------------------------
    def _build_maps(self):
        rx = self.nx_f // self.nx_c
        ry = self.ny_f // self.ny_c
        self.rx, self.ry = rx, ry
        self.n_coarse_cells = self.nx_c * self.ny_c

        ix = np.tile(np.arange(self.nx_f), self.ny_f)
        iy = np.repeat(np.arange(self.ny_f), self.nx_f)
        self.fine_cell_to_coarse = (iy // ry) * self.nx_c + (ix // rx)

        vert, horz = _edge_ids(self.nx_f, self.ny_f)
        edges = []
        # x-normal coarse edges live on fine lines ix = Ix*rx
        for interior in (True, False):
            for Iy in range(self.ny_c):
                for Ix in range(self.nx_c + 1):
                    if (0 < Ix < self.nx_c) != interior:
                        continue
                    fine = vert[Iy * ry:(Iy + 1) * ry, Ix * rx].copy()
                    blocks = tuple(
                        Iy * self.nx_c + b
                        for b in (Ix - 1, Ix) if 0 <= b < self.nx_c)
                    edges.append((0, (Ix, Iy), fine, blocks, not interior))
            for Iy in range(self.ny_c + 1):
                for Ix in range(self.nx_c):
                    if (0 < Iy < self.ny_c) != interior:
                        continue
                    fine = horz[Iy * ry, Ix * rx:(Ix + 1) * rx].copy()
                    blocks = tuple(
                        b * self.nx_c + Ix
                        for b in (Iy - 1, Iy) if 0 <= b < self.ny_c)
                    edges.append((1, (Ix, Iy), fine, blocks, not interior))
        self._coarse_edges = [
            CoarseEdge(i, axis, pos, fine, blocks, bdry)
            for i, (axis, pos, fine, blocks, bdry) in enumerate(edges)]
        self.n_coarse_edges = len(self._coarse_edges)

        self.fine_edge_to_coarse_edge = np.full(self.n_edges, -1, dtype=int)
        for ce in self._coarse_edges:
            self.fine_edge_to_coarse_edge[ce.fine_edges] = ce.index

    # ---- queries ------------------------------------------------------
    def coarse_cell_fine_cells(self, c):
        """Fine cell ids tiling coarse cell c."""
        return np.flatnonzero(self.fine_cell_to_coarse == c)

    def block_origin(self, c):
        """Lower-left corner of coarse cell c."""
        Ix, Iy = c % self.nx_c, c // self.nx_c
        return Ix * self.Hx, Iy * self.Hy


def build_hierarchy(nx_f, ny_f, nx_c, ny_c):
    """Build the nested fine/coarse mesh with all containment maps."""
    return GridHierarchy(nx_f, ny_f, nx_c, ny_c)


def coarse_edges(g: GridHierarchy):
    """All coarse edges, interior first, each axis ordered row-major."""
    return list(g._coarse_edges)
