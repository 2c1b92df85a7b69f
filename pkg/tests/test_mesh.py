import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdefem.errors import ConfigError, ConstructionError
from spdefem.mesh import BoundarySpec, Tag, boundary_edges, build_rectangle_mesh, classify_boundary, dump_mesh_csv


def test_smallest_mesh():
    m = build_rectangle_mesh(1, 1, 1, 1)
    assert m.n_nodes == 4 and m.n_triangles == 2
    assert np.all(m.on_boundary())


def test_two_by_two():
    m = build_rectangle_mesh(1, 1, 2, 2)
    assert m.n_nodes == 9 and m.n_triangles == 8
    interior = np.flatnonzero(m.boundary_tag == Tag.INTERIOR)
    assert len(interior) == 1
    np.testing.assert_array_equal(m.nodes[interior[0]], [0.5, 0.5])


def test_mesh_size():
    assert build_rectangle_mesh(2, 1, 2, 1).h == pytest.approx(math.sqrt(2), abs=1e-15)


def test_node_numbering():
    m = build_rectangle_mesh(2, 1, 4, 2)
    k = m.node_index(3, 1)
    assert k == 1 * 5 + 3
    np.testing.assert_allclose(m.nodes[k], [1.5, 0.5])


@pytest.mark.parametrize("args", [(0, 1, 1, 1), (1, -1, 1, 1), (1, 1, 0, 1), (1, 1, 1, -2)])
def test_bad_sizes(args):
    with pytest.raises(ConstructionError):
        build_rectangle_mesh(*args)


def _longest_edge(m):
    P = m.nodes[m.triangles]
    e = np.linalg.norm(P - np.roll(P, 1, axis=1), axis=2)
    return e.max()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 5), st.floats(0.1, 5), st.integers(1, 12), st.integers(1, 12))
def test_mesh_invariants(L1, L2, nx, ny):
    m = build_rectangle_mesh(L1, L2, nx, ny)
    assert m.n_nodes == (nx + 1) * (ny + 1)
    assert m.n_triangles == 2 * nx * ny
    areas = m.signed_areas()
    assert np.all(areas > 0)
    assert areas.sum() == pytest.approx(L1 * L2, rel=1e-12)
    assert m.h == pytest.approx(_longest_edge(m), rel=1e-12)
    assert m.h == pytest.approx(math.hypot(L1 / nx, L2 / ny), rel=1e-12)
    x, y = m.x, m.y
    on_b = (x == 0) | (x == L1) | (y == 0) | (y == L2)
    np.testing.assert_array_equal(m.boundary_tag != Tag.INTERIOR, on_b)
    # every edge shared by two triangles or on the boundary
    edges = Counter()
    for t in m.triangles:
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            edges[(min(a, b), max(a, b))] += 1
    for (a, b), c in edges.items():
        assert c == 2 or (c == 1 and on_b[a] and on_b[b]
                          and (x[a] == x[b] and x[a] in (0, L1) or y[a] == y[b] and y[a] in (0, L2)))
    assert sum(c == 1 for c in edges.values()) == 2 * (nx + ny)
    assert len(boundary_edges(m)) == 2 * (nx + ny)


@pytest.mark.parametrize("nx,ny", [(1, 1), (2, 3), (4, 4), (8, 5)])
def test_nested_refinement(nx, ny):
    coarse = build_rectangle_mesh(1.0, 0.7, nx, ny)
    fine = build_rectangle_mesh(1.0, 0.7, 2 * nx, 2 * ny)
    idx = fine.coarsening_map(coarse)
    np.testing.assert_array_equal(fine.nodes[idx], coarse.nodes)


def test_non_nested_rejected():
    with pytest.raises(ConfigError):
        build_rectangle_mesh(1, 1, 3, 3).coarsening_map(build_rectangle_mesh(1, 1, 2, 2))


def test_classify_left_edge():
    m = classify_boundary(build_rectangle_mesh(1, 1, 2, 2), BoundarySpec(("left",)))
    d = m.nodes[m.boundary_tag == Tag.DIRICHLET]
    np.testing.assert_array_equal(d, [[0, 0], [0, 0.5], [0, 1]])
    assert np.sum(m.boundary_tag == Tag.NEUMANN) == 5


def test_classify_nothing_is_neumann():
    m = classify_boundary(build_rectangle_mesh(1, 1, 2, 2), BoundarySpec())
    assert np.sum(m.boundary_tag == Tag.NEUMANN) == 8
    assert np.sum(m.boundary_tag == Tag.INTERIOR) == 1


def test_classify_robin():
    m = classify_boundary(build_rectangle_mesh(1, 1, 2, 2), BoundarySpec(("left",), robin_alpha0=2.0))
    assert np.sum(m.boundary_tag == Tag.ROBIN) == 5


def test_classify_all_edges():
    m = classify_boundary(build_rectangle_mesh(1, 1, 2, 2), BoundarySpec(("left", "right", "bottom", "top")))
    b = m.on_boundary()
    assert np.all(m.boundary_tag[b] == Tag.DIRICHLET)


def test_dirichlet_required_but_missing():
    with pytest.raises(ConfigError):
        classify_boundary(build_rectangle_mesh(1, 1, 2, 2), BoundarySpec(), require_dirichlet=True)


def test_unknown_edge():
    with pytest.raises(ConfigError):
        BoundarySpec(("diagonal",))


def test_dump(tmp_path):
    m = build_rectangle_mesh(1, 1, 2, 1)
    p_nodes, p_tri = dump_mesh_csv(m, tmp_path)
    assert len(p_nodes.read_text().splitlines()) == 1 + m.n_nodes
    assert len(p_tri.read_text().splitlines()) == 1 + m.n_triangles
