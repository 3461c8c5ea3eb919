import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gkdv import mesh
from conftest import make_ops


def test_build_mesh_small_p1():
    m = mesh.build_mesh(0.0, 2.0, 4, 1)
    assert m.num_dofs == 4
    assert m.h == 0.5
    np.testing.assert_array_equal(m.dof_coords, [0.0, 0.5, 1.0, 1.5])


def test_reported_dofs_counts_periodic_endpoint():
    m = mesh.build_mesh(-10.0, 10.0, 512, 1)
    assert m.num_dofs == 512
    assert m.reported_dofs == 513


def test_build_mesh_p2_counts():
    m = mesh.build_mesh(-10.0, 10.0, 16, 2)
    assert m.num_dofs == 32
    assert m.h == 1.25
    assert m.cell_to_dofs.shape == (16, 3)
    # last cell wraps onto the first node
    assert m.cell_to_dofs[-1, -1] == 0


@pytest.mark.parametrize("args", [(0, 1, 2, 1), (0, 1, 8, 4), (1, 0, 8, 1), (0, np.inf, 8, 1), (0, 1, 7.5, 1)])
def test_build_mesh_rejects_bad_input(args):
    with pytest.raises(ValueError):
        mesh.build_mesh(*args)


def test_p1_operators_by_hand():
    ops = make_ops(0.0, 2.0, 4, 1)
    h = 0.5
    np.testing.assert_allclose(ops.lumped_mass, 0.5)
    M = ops.mass.toarray()
    C = ops.coupling.toarray()
    for i in range(4):
        nxt, prv = (i + 1) % 4, (i - 1) % 4
        assert M[i, i] == pytest.approx(2 * h / 3, rel=1e-14)
        assert M[i, nxt] == pytest.approx(h / 6, rel=1e-14)
        assert M[i, prv] == pytest.approx(h / 6, rel=1e-14)
        assert C[i, nxt] == pytest.approx(0.5, rel=1e-14)
        assert C[i, prv] == pytest.approx(-0.5, rel=1e-14)
        assert C[i, i] == 0.0


def test_p1_stiffness_by_hand():
    ops = make_ops(0.0, 2.0, 4, 1)
    K = ops.stiffness.toarray()
    for i in range(4):
        assert K[i, i] == pytest.approx(2 / 0.5)
        assert K[i, (i + 1) % 4] == pytest.approx(-1 / 0.5)


def test_shared_pattern_and_transpose_map():
    ops = make_ops(-1.0, 3.0, 7, 3)
    for A in (ops.mass, ops.coupling, ops.stiffness):
        np.testing.assert_array_equal(A.indices, ops.cols)
        np.testing.assert_array_equal(A.indptr, ops.indptr)
    np.testing.assert_array_equal(ops.rows[ops.transpose], ops.cols)
    np.testing.assert_array_equal(ops.cols[ops.transpose], ops.rows)
    assert ops.rows[ops.diagonal_entries].tolist() == list(range(ops.mesh.num_dofs))


@settings(max_examples=30, deadline=None)
@given(
    a=st.floats(-50, 50),
    length=st.floats(0.1, 100),
    cells=st.integers(3, 40),
    degree=st.sampled_from([1, 2, 3]),
)
def test_operator_identities(a, length, cells, degree):
    ops = make_ops(a, a + length, cells, degree)
    M, C, K = ops.mass.toarray(), ops.coupling.toarray(), ops.stiffness.toarray()
    scale_c = np.abs(C).max()
    np.testing.assert_allclose(C.sum(axis=1), 0.0, atol=1e-14 * scale_c * 4)
    np.testing.assert_allclose(M.sum(axis=1), ops.lumped_mass, rtol=1e-14 * 4)
    np.testing.assert_array_equal(C, -C.T)
    np.testing.assert_array_equal(M, M.T)
    assert ops.lumped_mass.sum() == pytest.approx(length, rel=1e-13)
    np.testing.assert_allclose(K @ np.ones(K.shape[0]), 0.0, atol=1e-13 * np.abs(K).max())
    assert np.all(ops.lumped_mass > 0)


def test_p3_mass_is_consistent_with_exact_integrals():
    # int phi_i phi_j over the whole domain, with an independent fine quadrature
    m = mesh.build_mesh(0.0, 1.0, 3, 3)
    ops = mesh.assemble_operators(m)
    xq, wq = np.polynomial.legendre.leggauss(12)
    xq, wq = 0.5 * (xq + 1), 0.5 * wq
    phi, _ = mesh.lagrange_basis(3, xq)
    M = np.zeros((9, 9))
    for cell in range(3):
        dofs = m.cell_to_dofs[cell]
        M[np.ix_(dofs, dofs)] += m.h * (phi * wq) @ phi.T
    np.testing.assert_allclose(ops.mass.toarray(), M, atol=1e-15)


def test_interpolate_constant_and_cosine():
    m = mesh.build_mesh(0.0, 2.0, 8, 1)
    np.testing.assert_array_equal(mesh.interpolate(lambda x: 1.0, m), np.ones(8))
    np.testing.assert_array_equal(mesh.interpolate(lambda x: np.cos(np.pi * x), m), np.cos(np.pi * m.dof_coords))


def test_interpolate_rejects_non_finite():
    m = mesh.build_mesh(0.0, 2.0, 8, 1)
    with pytest.raises(ValueError), np.errstate(divide="ignore"):
        mesh.interpolate(lambda x: 1.0 / x, m)


def test_lumped_integral_of_soliton():
    target = 4.0 * np.tanh(10.0)
    errs = []
    for cells in (32, 64, 128, 256):
        ops = make_ops(-10.0, 10.0, cells, 1)
        U = mesh.interpolate(lambda x: 2.0 / np.cosh(x) ** 2, ops.mesh)
        errs.append(abs(mesh.mass(U, ops) - target))
    assert errs[-1] < 1e-3
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))


def test_weighted_l2_norm(rng):
    ops = make_ops(0.0, 2.0, 10, 2)
    n = ops.mesh.num_dofs
    assert mesh.weighted_l2_norm(np.zeros(n), ops) == 0.0
    assert mesh.weighted_l2_norm(np.ones(n), ops) == pytest.approx(np.sqrt(2.0), rel=1e-14)
    U = rng.standard_normal(n)
    dense = np.sqrt(U @ np.diag(ops.lumped_mass) @ U)
    assert mesh.weighted_l2_norm(U, ops) == pytest.approx(dense, rel=1e-14)
    with pytest.raises(ValueError):
        mesh.weighted_l2_norm(np.ones(n + 1), ops)


def exact(t, x):
    return 2.0 / np.cosh(x - 4.0 * t) ** 2


def test_relative_error_of_zero_state_is_one():
    m = mesh.build_mesh(-10.0, 10.0, 64, 1)
    assert mesh.relative_linf_error(np.zeros(m.num_dofs), exact, m, 0.3) == pytest.approx(1.0)


def test_relative_error_of_interpolant_is_small():
    errs = []
    for cells in (64, 128):
        m = mesh.build_mesh(-10.0, 10.0, cells, 1)
        U = mesh.interpolate(lambda x: exact(0.2, x), m)
        errs.append(mesh.relative_linf_error(U, exact, m, 0.2))
    assert 0.0 < errs[0] < (20 / 64) ** 2
    assert errs[1] < errs[0] / 3.0


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_interpolation_order(degree):
    f = lambda x: np.sin(2 * np.pi * x) + 0.5 * np.cos(4 * np.pi * x)  # noqa: E731
    errs = []
    for cells in (16, 32, 64, 128):
        m = mesh.build_mesh(0.0, 1.0, cells, degree)
        U = mesh.interpolate(f, m)
        mid = m.cell_points([0.5 / degree])
        errs.append(np.max(np.abs(mesh.evaluate(U, m, [0.5 / degree]) - f(mid))))
    slope = np.polyfit(np.log([16, 32, 64, 128]), np.log(errs), 1)[0]
    assert -slope >= degree + 0.8


def test_evaluate_derivative_is_exact_for_cell_polynomials():
    # a continuous periodic piecewise quadratic is reproduced exactly by P2
    m = mesh.build_mesh(0.0, 4.0, 4, 2)
    U = mesh.interpolate(lambda x: (x % 2.0) * (2.0 - x % 2.0), m)
    x = m.cell_points([0.25])[:, 0]
    np.testing.assert_allclose(mesh.evaluate_derivative(U, m, [0.25])[:, 0], 2.0 - 2.0 * (x % 2.0), atol=1e-13)
