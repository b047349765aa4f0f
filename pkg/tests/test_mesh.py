import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tractionfem import mesh as M
from oracles import count_boundary_faces


def test_single_hex_cell():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (1, 1, 1))
    assert (m.n_nodes, m.n_elements, len(m.boundary)) == (8, 1, 6)


def test_box_hex_counts():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (3, 3, 3))
    assert m.n_elements == 27
    assert m.n_nodes == 64


@pytest.mark.parametrize("gen", [M.generate_box_hex, M.generate_box_tet])
@pytest.mark.parametrize("div", [(1, 1, 1), (2, 3, 1), (3, 2, 2)])
def test_boundary_faces_match_brute_force_audit(gen, div):
    m = gen((0, 0, 0), (1, 2, 3), div)
    audit = count_boundary_faces(m.kind, m.elements)
    got = {frozenset(f.tolist()) for f in m.boundary.nodes}
    assert got == audit
    assert len(m.boundary) == len(audit)


def test_boundary_faces_are_outward():
    m = M.generate_box_tet((0, 0, 0), (1, 1, 1), (2, 2, 2))
    x = m.nodes[m.boundary.nodes]
    n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    outward = x.mean(axis=1) - 0.5
    assert np.all(np.einsum("fi,fi->f", n, outward) > 0)


def test_parallelepiped_box():
    m = M.generate_box_hex((-2, -0.5, -0.5), (4, 1, 1), (16, 4, 4))
    assert np.allclose(m.nodes.min(axis=0), (-2, -0.5, -0.5))
    assert np.allclose(m.nodes.max(axis=0), (2, 0.5, 0.5))
    assert m.n_elements == 256


@pytest.mark.parametrize("gen", [M.generate_box_hex, M.generate_box_tet])
@pytest.mark.parametrize("lengths, div", [((0, 1, 1), (1, 1, 1)), ((1, -1, 1), (1, 1, 1)),
                                          ((1, 1, 1), (0, 1, 1)), ((1, 1, 1), (1.5, 1, 1))])
def test_box_rejects_bad_arguments(gen, lengths, div):
    with pytest.raises(ValueError):
        gen((0, 0, 0), lengths, div)


def test_box_tet_volumes():
    m = M.generate_box_tet((0, 0, 0), (1, 1, 1), (1, 1, 1))
    assert m.n_elements == 6
    assert np.all(M.signed_tet_volumes(m.element_coords()) > 0)
    m = M.generate_box_tet((0, 0, 0), (2, 1, 3), (2, 2, 2))
    assert m.n_elements == 48
    assert m.element_volumes().sum() == pytest.approx(6.0, rel=1e-12)


def test_symmetry_audit():
    hexm = M.generate_box_hex((-1, -1, -1), (2, 2, 2), (2, 3, 2))
    tetm = M.generate_box_tet((-1, -1, -1), (2, 2, 2), (2, 2, 2))
    for axis in range(3):
        assert M.is_reflection_symmetric(hexm, axis)
        assert not M.is_reflection_symmetric(tetm, axis)


@pytest.mark.parametrize("j, count", [(0, 96), (1, 768), (2, 6144)])
def test_sphere_counts_and_axis_nodes(j, count):
    R = 0.5
    m = M.generate_sphere_tet(R, j)
    assert m.n_elements == count
    for p in [(0, 0, 0)] + [tuple(s * R * e) for e in np.eye(3) for s in (1, -1)]:
        assert np.any(np.all(m.nodes == np.array(p), axis=1)), p
    b = np.unique(m.boundary.nodes)
    assert np.max(np.abs(np.linalg.norm(m.nodes[b], axis=1) - R)) <= 1e-12 * R
    assert np.all(M.signed_tet_volumes(m.element_coords()) > 0)


def test_sphere_volume_error_decreases():
    R = 1.3
    exact = 4 / 3 * np.pi * R ** 3
    errors = [abs(M.generate_sphere_tet(R, j).element_volumes().sum() - exact) / exact
              for j in range(3)]
    assert errors[0] > errors[1] > errors[2]
    # second order in h (h halves per level)
    assert errors[2] < errors[0] / 8


def test_sphere_is_cube_symmetric():
    m = M.generate_sphere_tet(1.0, 1)
    assert all(M.is_reflection_symmetric(m, a, 0.0) for a in range(3))


@pytest.mark.parametrize("radius, level", [(0, 0), (-1, 1), (1, -1), (1, 0.5)])
def test_sphere_rejects_bad_arguments(radius, level):
    with pytest.raises(ValueError):
        M.generate_sphere_tet(radius, level)


def _inclusion_count_oracle(a, k, r):
    n = 3 * k
    c = (np.arange(n) + 0.5) * a / n
    return sum(np.linalg.norm(np.array(p) - a / 2) < r for p in itertools.product(c, c, c))


def test_voxel_rve_tagging():
    m = M.generate_voxel_rve(1.0, 1, 0.2)
    assert m.n_elements == 27
    assert np.sum(m.tags == M.INCLUSION_TAG) == 1
    m2 = M.generate_voxel_rve(1.0, 2, 0.2)
    assert m2.n_elements == 216
    assert np.sum(m2.tags == M.INCLUSION_TAG) == _inclusion_count_oracle(1.0, 2, 0.2)
    assert np.sum(M.generate_voxel_rve(1.0, 2, 1e-6).tags == M.INCLUSION_TAG) == 0


def test_voxel_inclusion_volume_tends_to_ball():
    ball = 4 / 3 * np.pi * 0.2 ** 3
    errs = []
    for k in (2, 4, 8):
        m = M.generate_voxel_rve(1.0, k, 0.2)
        errs.append(abs(np.sum(m.tags == M.INCLUSION_TAG) / (3 * k) ** 3 - ball))
    assert errs[-1] < errs[0]
    assert errs[-1] < 0.1 * ball


@pytest.mark.parametrize("k, r", [(0, 0.2), (1, 0.0), (1, 0.5), (1.5, 0.2)])
def test_voxel_rejects_bad_arguments(k, r):
    with pytest.raises(ValueError):
        M.generate_voxel_rve(1.0, k, r)


@pytest.mark.parametrize("gen, div", [(M.generate_box_hex, (1, 1, 1)), (M.generate_box_hex, (3, 2, 2)),
                                      (M.generate_box_tet, (2, 2, 2))])
def test_unit_cube_moments(gen, div):
    g = M.compute_geometry_moments(gen((0, 0, 0), (1, 1, 1), div))
    assert g.volume == pytest.approx(1.0, rel=1e-12)
    assert np.allclose(g.centroid, 0.5, atol=1e-13)
    assert np.allclose(g.second_moment, np.eye(3) / 12, atol=1e-13)
    assert np.allclose(g.inertia, np.eye(3) / 6, atol=1e-13)


def test_parallelepiped_moments():
    g = M.compute_geometry_moments(M.generate_box_tet((-2, -0.5, -0.5), (4, 1, 1), (8, 2, 2)))
    assert g.volume == pytest.approx(4.0, rel=1e-12)
    assert np.allclose(g.centroid, 0, atol=1e-13)
    # J = diag(Lx^3 Ly Lz, Lx Ly^3 Lz, Lx Ly Lz^3) / 12
    assert np.allclose(g.second_moment, np.diag([64, 4, 4]) / 12, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(g.inertia) > 0)


@settings(max_examples=25, deadline=None)
@given(st.tuples(*[st.floats(-10, 10, allow_nan=False)] * 3))
def test_moments_translation_invariant(shift):
    base = M.generate_sphere_tet(1.0, 0)
    moved = M.Mesh(base.nodes + np.array(shift), base.kind, base.elements)
    g0, g1 = M.compute_geometry_moments(base), M.compute_geometry_moments(moved)
    assert np.allclose(g1.second_moment, g0.second_moment, atol=1e-9)
    assert np.allclose(g1.centroid, g0.centroid + np.array(shift), atol=1e-9)


def test_volume_partition():
    m = M.generate_sphere_tet(1.0, 1)
    assert m.element_volumes().sum() == pytest.approx(
        M.compute_geometry_moments(m).volume, rel=1e-12)
    assert M.signed_tet_volumes(m.element_coords()).sum() == pytest.approx(
        m.element_volumes().sum(), rel=1e-12)


def test_mesh_is_immutable():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (1, 1, 1))
    with pytest.raises(ValueError):
        m.nodes[0, 0] = 5.0


def test_invalid_meshes_rejected():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    with pytest.raises(M.MeshError, match="non-positive volume"):
        M.Mesh(nodes, "tet4", [[0, 2, 1, 3]])
    with pytest.raises(M.MeshError, match="out of range"):
        M.Mesh(nodes, "tet4", [[0, 1, 2, 4]])
    with pytest.raises(M.MeshError, match="repeated"):
        M.Mesh(nodes, "tet4", [[0, 1, 1, 3]])
    with pytest.raises(M.MeshError):
        M.Mesh(nodes, "wedge6", [[0, 1, 2, 3]])


def test_inverted_hex_rejected():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (1, 1, 1))
    flipped = m.elements[:, [4, 5, 6, 7, 0, 1, 2, 3]]
    with pytest.raises(M.MeshError, match="Jacobian"):
        M.Mesh(m.nodes, "hex8", flipped)


@pytest.mark.parametrize("gen", [lambda: M.generate_box_hex((0, 0, 0), (1, 1, 1), (1, 1, 1)),
                                 lambda: M.generate_sphere_tet(0.7, 1),
                                 lambda: M.generate_voxel_rve(1.0, 1, 0.2)])
def test_io_round_trip(tmp_path, gen):
    m = gen()
    path = tmp_path / "m.txt"
    M.write_mesh(m, path)
    r = M.read_mesh(path)
    assert r.kind == m.kind
    assert np.array_equal(r.nodes, m.nodes)
    assert np.array_equal(r.elements, m.elements)
    assert np.array_equal(r.tags, m.tags)


def _write(tmp_path, text):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    return p


GOOD_NODES = "$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n$End\n"


def test_io_out_of_range_node(tmp_path):
    p = _write(tmp_path, GOOD_NODES + "$Elements\n1\n1 tet4 1 1 2 3 5\n$End\n")
    with pytest.raises(M.MeshFormatError) as exc:
        M.read_mesh(p)
    assert exc.value.lineno == 10
    assert "line 10" in str(exc.value)


def test_io_negative_volume(tmp_path):
    p = _write(tmp_path, GOOD_NODES + "$Elements\n1\n1 tet4 1 1 3 2 4\n$End\n")
    with pytest.raises(M.MeshError, match="non-positive volume"):
        M.read_mesh(p)


@pytest.mark.parametrize("text, line", [
    ("$Nodes\nx\n", 2),
    ("$Nodes\n1\n1 0 0\n", 3),
    ("$Nodes\n1\n2 0 0 0\n$End\n", 3),
    (GOOD_NODES + "$Elements\n2\n1 tet4 1 1 2 3 4\n2 hex8 1 1 2 3 4 1 2 3 4\n$End\n", 11),
    (GOOD_NODES + "$Elements\n1\n1 tet4 1 1 2 3\n$End\n", 10),
    (GOOD_NODES + "$Elements\n1\n", 9),
])
def test_io_parse_errors_carry_line(tmp_path, text, line):
    with pytest.raises(M.MeshFormatError) as exc:
        M.read_mesh(_write(tmp_path, text))
    assert exc.value.lineno == line


def test_find_node():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (2, 2, 2))
    assert np.allclose(m.nodes[m.find_node((0.5, 0.5, 0.5))], 0.5)
    with pytest.raises(M.MeshError):
        m.find_node((0.25, 0.5, 0.5))
