"""Sparse factorization, reuse and counting."""

import numpy as np
import pytest
import scipy.sparse as sp

from pffatigue.linsolve import FactorCounter, FactorizationError, Ordering, factorize, solve


def laplacian_2d(n: int) -> sp.csr_matrix:
    t = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    return (sp.kron(t, eye) + sp.kron(eye, t)).tocsr()


class TestFactorize:
    def test_solves_spd(self):
        A = laplacian_2d(12)
        x = np.random.default_rng(0).normal(size=A.shape[0])
        f = factorize(A)
        np.testing.assert_allclose(solve(f, A @ x), x, atol=1e-10)

    def test_small_example(self):
        f = factorize(np.array([[4.0, 1.0], [1.0, 3.0]]))
        np.testing.assert_allclose(f.solve(np.array([1.0, 2.0])), [1 / 11, 7 / 11], atol=1e-15)

    def test_ordering_reuse_same_result(self):
        A = laplacian_2d(15)
        b = np.arange(A.shape[0], dtype=float)
        order = Ordering()
        f1 = factorize(A, ordering=order)
        assert order.perm is not None
        f2 = factorize(A * 2.0, ordering=order)
        np.testing.assert_allclose(solve(f2, b), 0.5 * solve(f1, b), rtol=1e-12)

    def test_ordering_reuse_keeps_fill(self):
        A = laplacian_2d(20)
        order = Ordering()
        f1 = factorize(A, ordering=order)
        f2 = factorize(A, ordering=order)
        fill = lambda f: f.lu.L.nnz + f.lu.U.nnz  # noqa: E731
        assert fill(f2) <= 1.01 * fill(f1)

    def test_stale_factor_reused(self):
        A = laplacian_2d(8)
        f = factorize(A)
        b1, b2 = np.ones(A.shape[0]), np.linspace(0, 1, A.shape[0])
        np.testing.assert_allclose(A @ solve(f, b1), b1, atol=1e-12)
        np.testing.assert_allclose(A @ solve(f, b2), b2, atol=1e-12)

    def test_singular(self):
        with pytest.raises(FactorizationError, match=r"\[phi\]"):
            factorize(np.array([[1.0, 1.0], [1.0, 1.0]]), tag="phi")

    def test_indefinite(self):
        A = np.diag([1.0, -2.0, 3.0])
        with pytest.raises(FactorizationError, match="indefinite"):
            factorize(A)
        f = factorize(A, check_definite=False)
        np.testing.assert_allclose(f.solve(np.ones(3)), [1.0, -0.5, 1 / 3])

    def test_not_square(self):
        with pytest.raises(FactorizationError, match="square"):
            factorize(sp.csr_matrix(np.ones((2, 3))))

    def test_rhs_length(self):
        f = factorize(np.eye(3))
        with pytest.raises(ValueError, match="rhs"):
            solve(f, np.ones(4))

    def test_created_at(self):
        assert factorize(np.eye(2), created_at=17).created_at == 17


class TestFactorCounter:
    def test_counts(self):
        c = FactorCounter()
        for tag in ("u", "phi", "u"):
            factorize(np.eye(2), tag=tag, counter=c)
        assert c["u"] == 2 and c["phi"] == 1
        assert c.paired == 2

    def test_failed_not_counted(self):
        c = FactorCounter()
        with pytest.raises(FactorizationError):
            factorize(np.zeros((2, 2)), counter=c)
        assert c["u"] == 0

    def test_solve_not_counted(self):
        c = FactorCounter()
        f = factorize(np.eye(2), counter=c)
        for _ in range(5):
            solve(f, np.ones(2))
        assert c.paired == 1
