import numpy as np
import pytest

from msrb.errors import ConfigurationError
from msrb.grid import build_hierarchy, coarse_edges


def test_smallest_hierarchy():
    g = build_hierarchy(2, 2, 1, 1)
    assert g.n_coarse_cells == 1
    assert g.n_coarse_edges == 4
    for ce in coarse_edges(g):
        assert ce.n_fine == 2
        assert ce.is_boundary


def test_paper_grids():
    g = build_hierarchy(80, 80, 8, 8)
    assert g.n_coarse_cells == 64
    # N_e = nx_c*(ny_c+1) + ny_c*(nx_c+1)
    assert g.n_coarse_edges == 8 * 9 + 8 * 9
    g2 = build_hierarchy(56, 56, 7, 7)
    assert all(ce.n_fine == 8 for ce in coarse_edges(g2))


def test_divisibility_error():
    with pytest.raises(ConfigurationError):
        build_hierarchy(10, 10, 3, 3)


def test_edge_count_by_enumeration():
    # independent count: enumerate lattice positions
    for nx_c, ny_c in [(1, 1), (2, 1), (8, 8), (3, 5)]:
        g = build_hierarchy(2 * nx_c, 2 * ny_c, nx_c, ny_c)
        expected = (nx_c + 1) * ny_c + nx_c * (ny_c + 1)
        assert g.n_coarse_edges == expected


def test_interior_before_boundary_and_axis_order():
    g = build_hierarchy(8, 8, 2, 2)
    edges = coarse_edges(g)
    flags = [ce.is_boundary for ce in edges]
    first_boundary = flags.index(True)
    assert not any(flags[:first_boundary])
    assert all(flags[first_boundary:])
    interior = edges[:first_boundary]
    axes = [ce.axis for ce in interior]
    assert axes == sorted(axes)  # x-normal edges first


def test_two_by_one_interior_edge():
    g = build_hierarchy(4, 2, 2, 1)
    edges = coarse_edges(g)
    interior = [ce for ce in edges if not ce.is_boundary]
    assert len(interior) == 1
    assert len(interior[0].blocks) == 2
    b0, b1 = interior[0].blocks
    assert b0 != b1


def test_coarse_block_tiling():
    g = build_hierarchy(12, 8, 3, 2)
    for c in range(g.n_coarse_cells):
        cells = g.coarse_cell_fine_cells(c)
        area = len(cells) * g.cell_area
        assert abs(area - g.Hx * g.Hy) < 1e-12


def test_neighborhood_blocks_adjacent():
    g = build_hierarchy(8, 8, 4, 4)
    for ce in coarse_edges(g):
        if ce.is_boundary:
            assert len(ce.blocks) == 1
        else:
            assert len(ce.blocks) == 2
            b0, b1 = ce.blocks
            x0, y0 = b0 % g.nx_c, b0 // g.nx_c
            x1, y1 = b1 % g.nx_c, b1 // g.nx_c
            assert abs(x0 - x1) + abs(y0 - y1) == 1


def test_fine_edge_containment_unique():
    g = build_hierarchy(8, 8, 4, 4)
    seen = {}
    for ce in coarse_edges(g):
        for e in ce.fine_edges:
            assert e not in seen
            seen[e] = ce.index
    # map matches the per-edge lists
    for e, i in seen.items():
        assert g.fine_edge_to_coarse_edge[e] == i
    # fine edges off the coarse lattice belong to no coarse edge
    off = np.flatnonzero(g.fine_edge_to_coarse_edge < 0)
    assert len(off) == g.n_edges - len(seen)


def test_snapshot_edges_per_coarse_edge_paper_scale():
    g = build_hierarchy(80, 80, 8, 8)
    assert all(ce.n_fine == 10 for ce in coarse_edges(g))
