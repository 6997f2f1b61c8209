import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fbsurf.errors import DegenerateMesh
from fbsurf.moduli import ModuliPoint, build_planar_model
from fbsurf.surface import (boundary_vertex_sets, fundamental_mesh, hausdorff, read_ply_header,
                            reflect_mesh, topology, write_obj, write_ply)


@settings(max_examples=6, deadline=None)
@given(st.floats(0.1, 0.6), st.floats(0.1, 0.6), st.floats(0.1, 0.6))
def test_full_mesh_is_six_holed_sphere(r1, r2, r3):
    if max(r1 + r2, r1 + r3, r2 + r3) > 1.45:
        return
    m = build_planar_model(ModuliPoint(r1, r2, r3))
    z, tri = fundamental_mesh(m, 0.08)
    Z, T, _, _ = reflect_mesh(z, tri)
    top = topology(T)
    assert top.boundary_loops == 6 and top.genus == 0 and top.euler == -4


def test_boundary_vertices_on_circles():
    m = build_planar_model(ModuliPoint(0.3, 0.4, 0.5))
    z, tri = fundamental_mesh(m, 0.08)
    Z, T, _, _ = reflect_mesh(z, tri)
    sets = boundary_vertex_sets(m, Z)
    assert len(sets) == len(m) - 1
    for k, idx in sets.items():
        c = m.circles[k]
        assert idx.size > 0
        assert np.allclose(np.abs(Z[idx] - c.center), c.radius, atol=1e-10)


def test_topology_of_single_triangle_and_nonmanifold():
    top = topology(np.array([[0, 1, 2]]))
    assert top.euler == 1 and top.boundary_loops == 1 and top.genus == 0
    with pytest.raises(DegenerateMesh):
        topology(np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]]))


def test_hausdorff():
    a = np.array([[0.0, 0, 0], [1, 0, 0]])
    b = np.array([[0.0, 0, 0], [1, 0.5, 0]])
    assert hausdorff(a, b) == pytest.approx(0.5)
    assert hausdorff(a, a) == 0


def test_writers(tmp_path):
    pts = np.eye(3)
    tri = np.array([[0, 1, 2]])
    write_obj(tmp_path / "t.obj", pts, tri)
    assert (tmp_path / "t.obj").read_text().splitlines()[-1] == "f 1 2 3"
    write_ply(tmp_path / "t.ply", pts, tri, {"w": np.array([1.0, 2.0, 3.0])})
    info = read_ply_header(tmp_path / "t.ply")
    assert info == {"properties": ["x", "y", "z", "w"], "vertices": 3, "faces": 1}
