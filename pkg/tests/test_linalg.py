import numpy as np
import pytest
import scipy.sparse as sp

from gkdv import linalg
from conftest import make_ops


def test_matvec_identity_and_zero(rng):
    x = rng.standard_normal(20)
    np.testing.assert_array_equal(linalg.matvec(linalg.as_csr(sp.identity(20)), x), x)
    np.testing.assert_array_equal(linalg.matvec(linalg.as_csr(sp.csr_matrix((20, 20))), x), np.zeros(20))


def test_matvec_dense_oracle(rng):
    A = sp.random(50, 50, density=0.1, random_state=1, format="csr")
    x = rng.standard_normal(50)
    np.testing.assert_allclose(linalg.matvec(linalg.as_csr(A), x), A.toarray() @ x, rtol=0, atol=1e-14)


def test_matvec_shape_mismatch():
    with pytest.raises(ValueError):
        linalg.matvec(linalg.as_csr(sp.identity(3)), np.ones(4))


def test_as_csr_sorts_and_rejects_non_finite():
    A = linalg.as_csr(sp.coo_matrix(([1.0, 2.0, 3.0], ([0, 0, 1], [1, 0, 1])), shape=(2, 2)))
    assert A.has_sorted_indices
    with pytest.raises(ValueError):
        linalg.as_csr(sp.diags([1.0, np.nan]))


def test_factor_diagonal(rng):
    d = rng.uniform(1, 3, 10)
    b = rng.standard_normal(10)
    np.testing.assert_allclose(linalg.solve(linalg.factor(sp.diags(d)), b), b / d, rtol=1e-15)


def test_factor_random_spd_dense_oracle(rng):
    B = rng.standard_normal((100, 100))
    A = B @ B.T + 100 * np.eye(100)
    b = rng.standard_normal(100)
    F = linalg.factor(sp.csr_matrix(A))
    x = F.solve(b)
    np.testing.assert_allclose(x, np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)
    assert F.residual(x, b) <= 1e-11


def test_factor_singular():
    A = sp.csr_matrix(np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 0.0], [0.0, 1.0, 3.0]]))
    with pytest.raises(linalg.SingularMatrixError):
        linalg.factor(A)


def test_factor_non_square():
    with pytest.raises(ValueError):
        linalg.factor(sp.csr_matrix(np.ones((2, 3))))


def test_fingerprint_tracks_values():
    A = sp.identity(4, format="csr")
    assert linalg.factor(A).fingerprint == linalg.fingerprint(A)
    assert linalg.fingerprint(2 * A) != linalg.fingerprint(A)


def test_cg_zero_rhs():
    ops = make_ops(0.0, 1.0, 8, 2)
    np.testing.assert_array_equal(linalg.cg_solve(ops.mass, np.zeros(16)), np.zeros(16))


@pytest.mark.parametrize("degree", [1, 2, 3])
def test_cg_matches_direct_on_mass(rng, degree):
    ops = make_ops(-3.0, 5.0, 20, degree)
    b = rng.standard_normal(ops.mesh.num_dofs)
    tol = 1e-12
    x = linalg.cg_solve(ops.mass, b, tol=tol)
    ref = linalg.factor(ops.mass).solve(b)
    assert np.linalg.norm(x - ref) / np.linalg.norm(ref) <= 10 * tol * np.linalg.cond(ops.mass.toarray())


def test_cg_p3_mass_iteration_bound(rng):
    ops = make_ops(0.0, 1.0, 8192 // 3, 3)
    b = rng.standard_normal(ops.mesh.num_dofs)
    x = linalg.cg_solve(ops.mass, b, tol=1e-12, max_iter=200)
    assert np.linalg.norm(ops.mass @ x - b) <= 1e-11 * np.linalg.norm(b)


def test_cg_warm_start_and_non_convergence(rng):
    ops = make_ops(0.0, 1.0, 64, 2)
    b = rng.standard_normal(128)
    x = linalg.cg_solve(ops.mass, b)
    np.testing.assert_allclose(linalg.cg_solve(ops.mass, b, warm_start=x), x, rtol=1e-10)
    with pytest.raises(linalg.ConvergenceError) as err:
        linalg.cg_solve(ops.mass, b, tol=1e-14, max_iter=1)
    assert err.value.residual > 0
