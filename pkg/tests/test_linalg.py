"""Factorization contract: accuracy, reuse, block solves, determinism."""

import numpy as np
import pytest
import scipy.sparse as sp

from eevflow import linalg
from eevflow.linalg import Factorization, SingularMatrixError, factorize, solve_block

rng = np.random.default_rng(11)


def random_spd(n, density=0.1, seed=0):
    r = np.random.default_rng(seed)
    A = sp.random(n, n, density=density, random_state=np.random.RandomState(seed), format="csr")
    return (A @ A.T + n * sp.eye(n)).tocsr()


class TestFactorize:
    def test_identity(self):
        F = factorize(sp.eye(6, format="csr"))
        b = rng.standard_normal(6)
        np.testing.assert_array_equal(F.solve(b), b)

    def test_diagonal_2x2(self):
        F = factorize(sp.csr_matrix(np.array([[2.0, 0.0], [0.0, 4.0]])))
        x = F.solve(np.array([2.0, 8.0]))
        np.testing.assert_allclose(x, [1.0, 2.0], rtol=1e-15)

    def test_random_spd_residual(self):
        A = random_spd(50, seed=3)
        F = factorize(A)
        b = rng.standard_normal(50)
        x = F.solve(b)
        assert np.linalg.norm(A @ x - b) / np.linalg.norm(b) <= 1e-10

    def test_nonsquare_rejected(self):
        with pytest.raises(ValueError):
            factorize(sp.csr_matrix(np.ones((3, 2))))

    def test_singular_raises(self):
        A = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
        with pytest.raises(SingularMatrixError):
            factorize(A)

    def test_dimension_mismatch(self):
        F = factorize(sp.eye(4, format="csr"))
        with pytest.raises(ValueError):
            F.solve(np.ones(5))


class TestSolveBlock:
    def test_identical_columns(self):
        A = random_spd(30, seed=5)
        F = factorize(A)
        b = rng.standard_normal(30)
        X = solve_block(F, np.column_stack([b, b, b]))
        np.testing.assert_array_equal(X[:, 0], X[:, 1])
        np.testing.assert_array_equal(X[:, 0], X[:, 2])

    def test_inverse_columns(self):
        A = random_spd(12, seed=9)
        F = factorize(A)
        X = solve_block(F, np.eye(12))
        np.testing.assert_allclose(A @ X, np.eye(12), atol=1e-11)

    def test_many_rhs_residuals(self):
        A = random_spd(200, density=0.05, seed=13)
        F = factorize(A)
        B = rng.standard_normal((200, 20))
        X = solve_block(F, B)
        res = np.linalg.norm(A @ X - B, axis=0) / np.linalg.norm(B, axis=0)
        assert np.all(res <= 1e-9)

    def test_block_shape_mismatch(self):
        F = factorize(sp.eye(4, format="csr"))
        with pytest.raises(ValueError):
            solve_block(F, np.ones((5, 2)))

    def test_linearity(self):
        A = random_spd(40, seed=21)
        F = factorize(A)
        b1, b2 = rng.standard_normal((2, 40))
        a, c = 2.5, -0.75
        lhs = F.solve(a * b1 + c * b2)
        rhs = a * F.solve(b1) + c * F.solve(b2)
        scale = max(np.linalg.norm(lhs), 1.0)
        assert np.linalg.norm(lhs - rhs) / scale <= 1e-9


class TestDeterminism:
    def test_refactorization_bitwise(self):
        A = random_spd(80, density=0.08, seed=2)
        b = rng.standard_normal(80)
        x1 = factorize(A).solve(b)
        x2 = factorize(A).solve(b)
        np.testing.assert_array_equal(x1, x2)

    def test_reuse_matches_fresh(self):
        A = random_spd(60, density=0.1, seed=4)
        B = rng.standard_normal((60, 25))
        F = factorize(A)
        reused = np.column_stack([F.solve(B[:, j]) for j in range(25)])
        fresh = np.column_stack([factorize(A).solve(B[:, j]) for j in range(25)])
        np.testing.assert_array_equal(reused, fresh)


def test_timing_compare_j1_parity():
    # J = 1 does identical work both ways; only sanity-check it runs
    A = random_spd(100, seed=8)
    t_shared, t_standard = linalg.timing_compare(A, rng.standard_normal((100, 1)))
    assert t_shared > 0 and t_standard > 0


def test_matrix_market_roundtrip(tmp_path):
    from scipy.io import mmread

    A = random_spd(20, seed=6)
    path = tmp_path / "system.mtx"
    linalg.write_matrix_market(A, path)
    B = sp.csr_matrix(mmread(path))
    assert (A != B).nnz == 0
