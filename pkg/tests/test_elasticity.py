import warnings

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from tractionfem import elasticity as E, mesh as M, quadrature, rigidbody
from oracles import dense_stiffness, fd_symmetric_gradient, hex_stiffness, rigid_field, tet_stiffness

MAT = E.Material.from_young(1.0, 0.3)
REF_TET = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])


def _rigid_columns(x):
    return rigidbody.rigid_modes(x, x.mean(axis=0))


coords = st.lists(st.floats(-1, 1, allow_nan=False), min_size=12, max_size=12)


def _random_tet(values):
    x = REF_TET + 0.3 * np.array(values).reshape(4, 3)
    if np.linalg.det(x[1:] - x[0]) < 0:
        x[[2, 3]] = x[[3, 2]]
    return x


@settings(max_examples=40, deadline=None)
@given(coords, st.floats(0.0, 5.0), st.floats(0.1, 5.0))
def test_tet_stiffness_properties(values, lam, mu):
    x = _random_tet(values)
    if abs(np.linalg.det(x[1:] - x[0])) < 1e-3:
        return
    k = E.element_stiffness("tet4", x, E.Material(lam, mu))
    scale = np.abs(k).max()
    assert np.allclose(k, k.T, atol=1e-12 * scale)
    assert np.linalg.eigvalsh(k).min() > -1e-10 * scale
    assert np.abs(k @ _rigid_columns(x)).max() <= 1e-10 * scale
    assert np.allclose(k, tet_stiffness(x, lam, mu), atol=1e-10 * scale)


def test_reference_tet_shear_only_matches_oracle():
    k = E.element_stiffness("tet4", REF_TET, E.Material(0.0, 1.0))
    assert np.allclose(k, tet_stiffness(REF_TET, 0.0, 1.0), atol=1e-14)
    # translation rows sum to zero
    assert np.allclose(k.reshape(12, 4, 3).sum(axis=1), 0, atol=1e-14)


def test_hex_stiffness_matches_oracle():
    rng = np.random.default_rng(3)
    x = M.HEX_REF * 0.5 + 0.05 * rng.standard_normal((8, 3))
    k = E.element_stiffness("hex8", x, MAT)
    assert np.allclose(k, hex_stiffness(x, MAT.lam, MAT.mu), atol=1e-12)


@pytest.mark.parametrize("s", [0.1, 2.0, 7.5])
def test_stiffness_scales_linearly(s):
    k1 = E.element_stiffness("tet4", REF_TET, MAT)
    ks = E.element_stiffness("tet4", s * REF_TET, MAT)
    assert np.allclose(ks, s * k1, rtol=1e-12, atol=1e-14)


def test_tet_mass_pattern():
    x = REF_TET * 6 ** (1 / 3)  # unit volume
    m = E.element_mass("tet4", x)
    V = 1.0
    pattern = V / 20 * (np.ones((4, 4)) + np.eye(4))
    assert np.allclose(m.reshape(4, 3, 4, 3)[:, 0, :, 0], pattern, atol=1e-14)
    assert np.allclose(m.reshape(4, 3, 4, 3)[:, 0, :, 1], 0)
    assert m.reshape(4, 3, 4, 3)[:, 2, :, 2].sum() == pytest.approx(1.0, rel=1e-13)
    assert np.linalg.eigvalsh(m).min() > 0


def test_hex_mass_unit_cube():
    x = (M.HEX_REF + 1) / 2
    m = E.element_mass("hex8", x).reshape(8, 3, 8, 3)
    for d in range(3):
        assert np.allclose(m[:, d, :, d].sum(axis=1), 1 / 8, atol=1e-15)
    # exact tensor-product mass: (1/6)(2 on diagonal, 1 off) per axis
    one = np.array([[2, 1], [1, 2]]) / 6
    signs = ((M.HEX_REF + 1) / 2).astype(int)
    exact = np.array([[np.prod([one[a[k], b[k]] for k in range(3)]) for b in signs] for a in signs])
    assert np.allclose(m[:, 0, :, 0], exact, atol=1e-15)


def test_degenerate_element():
    flat = REF_TET.copy()
    flat[3] = [0.5, 0.5, 0]
    with pytest.raises(quadrature.DegenerateElementError):
        E.element_stiffness("tet4", flat, MAT)


def test_single_hex_six_zero_modes():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (1, 1, 1))
    K = E.assemble_system(m, MAT).K.toarray()
    w = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(w) <= 1e-9 * w.max()) == 6


@pytest.mark.parametrize("gen, div", [(M.generate_box_tet, (1, 1, 1)), (M.generate_box_hex, (2, 2, 2)),
                                      (M.generate_box_tet, (2, 2, 2))])
def test_assembly_matches_dense_oracle(gen, div):
    m = gen((0, 0, 0), (1.0, 0.7, 1.3), div)
    assert m.n_elements <= 50
    K = E.assemble_system(m, MAT).K.toarray()
    Kd = dense_stiffness(m.nodes, m.kind, m.elements, MAT.lam, MAT.mu)
    assert np.allclose(K, Kd, atol=1e-12 * np.abs(Kd).max())


def test_two_tet_mesh_matches_dense_oracle():
    nodes = np.vstack([REF_TET, [[1, 1, 1.0]]])
    m = M.Mesh(nodes, "tet4", [[0, 1, 2, 3], [1, 2, 3, 4]])
    K = E.assemble_system(m, MAT).K.toarray()
    assert np.allclose(K, dense_stiffness(m.nodes, m.kind, m.elements, MAT.lam, MAT.mu), atol=1e-13)


def test_global_invariants_sphere():
    m = M.generate_sphere_tet(0.5, 1)
    S = E.assemble_system(m, MAT)
    K, Mm = S.K, S.M
    assert abs(K - K.T).max() <= 1e-12 * abs(K).max()
    R = rigidbody.rigid_modes(m.nodes, m.nodes.mean(axis=0))
    assert np.abs(K @ R).max() <= 1e-10 * abs(K).max()
    w = np.linalg.eigvalsh(Mm.toarray())
    assert w.min() > 0
    rng = np.random.default_rng(0)
    U = rng.standard_normal(m.n_dofs)
    KU = K @ U
    assert np.abs(KU.reshape(-1, 3).sum(axis=0)).max() <= 1e-10 * np.linalg.norm(KU)


def test_sparsity_pattern_of_regularized_matrix():
    m = M.generate_box_tet((0, 0, 0), (1, 1, 1), (2, 2, 2))
    S = E.assemble_system(m, MAT)
    A = (S.K + 0.3 * S.M).tocsr()
    union = (abs(S.K).sign() + abs(S.M).sign()).tocsr()
    union.eliminate_zeros()
    A.eliminate_zeros()
    assert (abs(A).sign() != union.sign()).nnz == 0


def test_assembly_is_deterministic():
    m = M.generate_sphere_tet(0.5, 1)
    a, b = E.assemble_system(m, MAT), E.assemble_system(m, MAT)
    assert np.array_equal(a.K.indptr, b.K.indptr)
    assert np.array_equal(a.K.indices, b.K.indices)
    assert np.array_equal(a.K.data, b.K.data)


def test_missing_material_tag():
    m = M.generate_voxel_rve(1.0, 1, 0.2)
    with pytest.raises(E.MissingMaterialError):
        E.assemble_system(m, {M.MATRIX_TAG: MAT})


def test_material_validation():
    with pytest.raises(ValueError):
        E.Material(1.0, 0.0)
    with pytest.raises(ValueError):
        E.Material.from_young(1.0, 0.5)
    m = E.Material.from_young(2.0, 0.25)
    assert m.young == pytest.approx(2.0)
    assert m.poisson == pytest.approx(0.25)


def test_body_load_resultants():
    cube = M.generate_box_hex((0, 0, 0), (1, 1, 1), (2, 2, 2))
    F = E.assemble_body_load(cube, lambda x: np.tile([1.0, 0, 0], (len(x), 1)))
    assert np.allclose(F.reshape(-1, 3).sum(axis=0), [1, 0, 0], atol=1e-14)


def test_wavy_brick_load_is_nearly_equilibrated():
    Lx = 4.0
    f = lambda x: np.column_stack([np.sin(3 * np.pi * x[:, 0] / Lx), 0 * x[:, 0], 0 * x[:, 0]])
    res = []
    for n in (1, 2, 4):
        m = M.generate_box_tet((-2, -0.5, -0.5), (4, 1, 1), (8 * n, 2 * n, 2 * n))
        F = E.assemble_body_load(m, f).reshape(-1, 3)
        res.append(abs(F[:, 0].sum()))
    assert res[-1] < 1e-12


def test_sphere_central_load_equilibrated():
    m = M.generate_sphere_tet(0.5, 1)
    F = E.assemble_body_load(m, lambda x: -4.0 * x).reshape(-1, 3)
    assert np.abs(F.sum(axis=0)).max() < 1e-14
    assert np.abs(np.cross(m.nodes, F).sum(axis=0)).max() < 1e-14


def test_traction_top_face():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (3, 3, 3))
    top = lambda c: np.isclose(c[:, 2], 1.0)
    F = E.assemble_traction_load(m, [(top, lambda x, n: np.tile([0, 0, 1.0], (len(x), 1)))])
    assert np.allclose(F.reshape(-1, 3).sum(axis=0), [0, 0, 1], atol=1e-14)


def test_opposite_tractions_make_a_couple():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (2, 2, 2))
    t_up = lambda x, n: np.tile([0, 0, 1.0], (len(x), 1))
    t_dn = lambda x, n: np.tile([0, 0, -1.0], (len(x), 1))
    F = E.assemble_traction_load(m, [(lambda c: np.isclose(c[:, 0], 1.0), t_up),
                                     (lambda c: np.isclose(c[:, 0], 0.0), t_dn)]).reshape(-1, 3)
    assert np.allclose(F.sum(axis=0), 0, atol=1e-14)
    moment = np.cross(m.nodes, F).sum(axis=0)
    assert moment[1] == pytest.approx(-1.0)


@pytest.mark.parametrize("m", [M.generate_sphere_tet(0.8, 1),
                               M.generate_box_tet((0, 0, 0), (1, 2, 1), (2, 2, 2)),
                               M.generate_box_hex((0, 0, 0), (1, 2, 1), (2, 3, 2))])
def test_closed_surface_pressure_has_no_resultant(m):
    F = E.assemble_traction_load(m, [(None, lambda x, n: -2.5 * n)]).reshape(-1, 3)
    # divergence theorem on the discrete (flat-faceted) surface
    assert np.abs(F.sum(axis=0)).max() < 1e-13


def test_empty_traction_selector_warns():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (1, 1, 1))
    with pytest.warns(E.EmptyTractionWarning):
        F = E.assemble_traction_load(m, [(lambda c: c[:, 0] > 5, lambda x, n: n)])
    assert not F.any()


def test_thermal_zero_temperature():
    m = M.generate_box_tet((0, 0, 0), (1, 1, 1), (2, 2, 2))
    mat = E.Material.from_young(1, 0.3, alpha=1.0)
    assert not E.assemble_thermal_load(m, mat, lambda x: 0 * x[:, 0]).any()
    assert E.thermal_reference_energy(m, mat, lambda x: 0 * x[:, 0]) == 0.0


def test_uniform_heating_is_stress_free():
    m = M.generate_box_tet((0, 0, 0), (1, 1, 1), (2, 2, 2))
    mat = E.Material.from_young(1, 0.3, alpha=0.5)
    theta = lambda x: np.full(len(x), 2.0)
    S = E.assemble_system(m, mat)
    F = E.assemble_thermal_load(m, mat, theta)
    # uniform dilatation u = alpha theta (x - c) solves K U = F exactly
    U = (0.5 * 2.0 * (m.nodes - 0.5)).ravel()
    assert np.allclose(S.K @ U, F, atol=1e-13)
    eps, sig = E.strain_stress(m, mat, U, theta)
    assert np.allclose(eps, np.eye(3), atol=1e-13)
    assert np.abs(sig).max() < 1e-13


def test_thermal_energy_identity():
    m = M.generate_box_tet((0, 0, 0), (1, 1, 1), (2, 2, 2))
    mat = E.Material.from_young(1, 0.3, alpha=1.0)
    theta = lambda x: x.sum(axis=1)
    S = E.assemble_system(m, mat)
    F = E.assemble_thermal_load(m, mat, theta)
    U = np.random.default_rng(1).standard_normal(m.n_dofs)
    ref = E.thermal_reference_energy(m, mat, theta)
    direct = E.thermal_stored_energy(m, mat, U, theta)
    assert direct == pytest.approx(0.5 * U @ S.K @ U - F @ U + ref, rel=1e-12)


def test_strain_of_rigid_and_linear_fields():
    m = M.generate_sphere_tet(1.0, 0)
    U = rigid_field(m.nodes, [0.1, -0.3, 2.0], [0.5, -1.0, 0.7], np.zeros(3))
    eps, _ = E.strain_stress(m, MAT, U)
    assert np.abs(eps).max() < 1e-10
    U = np.column_stack([m.nodes[:, 0], 0 * m.nodes[:, 0], 0 * m.nodes[:, 0]]).ravel()
    eps, sig = E.strain_stress(m, MAT, U)
    assert np.allclose(eps, np.diag([1.0, 0, 0]), atol=1e-13)
    assert np.allclose(sig, MAT.lam * np.eye(3) + 2 * MAT.mu * np.diag([1.0, 0, 0]), atol=1e-13)


def test_strain_matches_finite_differences_for_quadratic_field():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (1, 1, 1))
    A = np.random.default_rng(2).standard_normal((3, 3))
    u = lambda x: x @ A.T  # linear, reproduced exactly by hex8
    eps, _ = E.strain_stress(m, MAT, u(m.nodes).ravel())
    xq = quadrature.physical_points("hex8", m.element_coords()).reshape(-1, 3)
    assert np.allclose(eps.reshape(-1, 3, 3), fd_symmetric_gradient(u, xq), atol=1e-8)


def test_energies():
    m = M.generate_box_hex((0, 0, 0), (1, 1, 1), (2, 2, 2))
    S = E.assemble_system(m, MAT)
    F = E.assemble_body_load(m, lambda x: np.column_stack([x[:, 1], -x[:, 0], 0 * x[:, 0]]))
    zero = E.energies(S.K, S.M, F, np.zeros(m.n_dofs), 0.1)
    assert zero == (0.0, 0.0, 0.0)
    eta = 0.1
    U = np.linalg.solve((S.K + eta * S.M).toarray(), F)
    best = E.energies(S.K, S.M, F, U, eta).regularized
    rng = np.random.default_rng(5)
    for _ in range(20):
        W = U + 0.1 * rng.standard_normal(U.size)
        e = E.energies(S.K, S.M, F, W, eta)
        assert e.regularized >= best
        assert e.regularized > e.potential
    assert E.energies(S.K, S.M, F, U, 0.0).regularized == E.energies(S.K, S.M, F, U, 0.0).potential
    with pytest.raises(ValueError):
        E.energies(S.K, S.M, F, U[:-1], eta)


def test_write_triplets(tmp_path):
    A = sp.csr_matrix(np.array([[2.0, 0, 1], [0, 0, 0], [1, 0, 0.5]]))
    p = tmp_path / "t.txt"
    E.write_triplets(A, p)
    assert p.read_text().split("\n")[:4] == ["0 0 2", "0 2 1", "2 0 1", "2 2 0.5"]
