import numpy as np
import pytest
import scipy.linalg as sla

from manibilevel.errors import ContractError, NumericError
from manibilevel.linalg import (
    dlogm_spd,
    expm_sym,
    logm_spd,
    lyapunov_solve,
    sinkhorn,
    sqrtm_spd,
    sunvec,
    svec,
    sym,
)


def rand_spd(rng, n, log_cond=3.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    w = np.exp(rng.uniform(-log_cond / 2, log_cond / 2, size=n))
    return sym((q * w) @ q.T)


class TestMatrixFunctions:
    def test_expm_zero(self):
        assert np.allclose(expm_sym(np.zeros((3, 3))), np.eye(3))

    def test_logm_identity(self):
        assert np.allclose(logm_spd(np.eye(4)), np.zeros((4, 4)))

    def test_expm_diag(self):
        out = expm_sym(np.diag([1.0, 2.0]))
        assert np.allclose(out, np.diag([np.e, np.e**2]))

    def test_against_scipy(self):
        rng = np.random.default_rng(1)
        for n in (2, 5, 12):
            s = sym(rng.standard_normal((n, n)))
            assert np.allclose(expm_sym(s), sla.expm(s), rtol=1e-10, atol=1e-10)
            x = rand_spd(rng, n)
            assert np.allclose(logm_spd(x), sla.logm(x), rtol=1e-9, atol=1e-10)

    def test_roundtrip(self):
        rng = np.random.default_rng(2)
        for n in (2, 6, 20):
            x = rand_spd(rng, n)
            back = expm_sym(logm_spd(x))
            assert np.linalg.norm(back - x) <= 1e-8 * np.linalg.norm(x)
            s = sqrtm_spd(x)
            assert np.linalg.norm(s @ s - x) <= 1e-9 * np.linalg.norm(x)

    def test_non_pd_rejected(self):
        bad = np.diag([1.0, -0.5])
        with pytest.raises(NumericError) as err:
            logm_spd(bad)
        assert err.value.info["min_eigenvalue"] == pytest.approx(-0.5)
        with pytest.raises(NumericError):
            sqrtm_spd(bad)

    def test_non_symmetric_rejected(self):
        bad = np.array([[1.0, 1.0], [0.0, 1.0]])
        with pytest.raises(ContractError):
            expm_sym(bad)


class TestDlogm:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        for n in (2, 5):
            x = rand_spd(rng, n)
            e = sym(rng.standard_normal((n, n)))
            h = 1e-6
            fd = (sla.logm(x + h * e) - sla.logm(x - h * e)) / (2 * h)
            got = dlogm_spd(x, e)
            assert np.linalg.norm(got - fd) <= 1e-6 * (1 + np.linalg.norm(fd))

    def test_self_adjoint(self):
        rng = np.random.default_rng(4)
        x = rand_spd(rng, 5)
        for _ in range(20):
            e1 = sym(rng.standard_normal((5, 5)))
            e2 = sym(rng.standard_normal((5, 5)))
            lhs = np.sum(dlogm_spd(x, e1) * e2)
            rhs = np.sum(e1 * dlogm_spd(x, e2))
            assert abs(lhs - rhs) <= 1e-9 * (1 + abs(lhs))

    def test_repeated_eigenvalues(self):
        x = np.eye(3) * 2.0
        e = sym(np.arange(9, dtype=float).reshape(3, 3))
        # At x = c I the derivative is e / c.
        assert np.allclose(dlogm_spd(x, e), e / 2.0)


class TestLyapunov:
    def test_identity_coefficient(self):
        rng = np.random.default_rng(5)
        c = sym(rng.standard_normal((4, 4)))
        assert np.allclose(lyapunov_solve(np.eye(4), c), c / 2.0)

    def test_diagonal_example(self):
        a = np.diag([1.0, 2.0])
        c = np.ones((2, 2))
        expected = np.array([[0.5, 1.0 / 3.0], [1.0 / 3.0, 0.25]])
        assert np.allclose(lyapunov_solve(a, c), expected)

    def test_zero_rhs(self):
        rng = np.random.default_rng(6)
        a = rand_spd(rng, 3)
        assert np.allclose(lyapunov_solve(a, np.zeros((3, 3))), 0.0)

    def test_not_pd_rejected(self):
        with pytest.raises(ContractError):
            lyapunov_solve(np.diag([1.0, -1.0]), np.eye(2))

    @pytest.mark.parametrize("n", [2, 5, 20])
    def test_residual_random(self, n):
        rng = np.random.default_rng(100 + n)
        for _ in range(100):
            a = rand_spd(rng, n, log_cond=np.log(1e6))
            c = sym(rng.standard_normal((n, n)))
            g = lyapunov_solve(a, c)
            assert np.allclose(g, g.T)
            res = np.linalg.norm(g @ a + a @ g - c)
            assert res <= 1e-10 * max(np.linalg.norm(c), 1e-30)


def sinkhorn_oracle(k, mu, nu, iters=4000):
    """Plain alternating row/column normalization, written independently."""
    p = np.array(k, dtype=float)
    for _ in range(iters):
        p = p * (mu / p.sum(axis=1))[:, None]
        p = p * (nu / p.sum(axis=0))[None, :]
    return p


class TestSinkhorn:
    def test_already_balanced(self):
        k = np.array([[0.2, 0.3], [0.3, 0.2]])
        res = sinkhorn(k, [0.5, 0.5], [0.5, 0.5])
        assert np.allclose(res.matrix, k)
        assert np.allclose(res.row_scale, 1.0)
        assert np.allclose(res.col_scale, 1.0)

    def test_two_by_two_example(self):
        k = np.array([[1.0, 1.0], [1.0, 3.0]])
        mu = nu = np.array([0.5, 0.5])
        expected = sinkhorn_oracle(k, mu, nu)
        res = sinkhorn(k, mu, nu, tol=1e-12)
        assert np.allclose(res.matrix, expected, atol=1e-10)

    def test_scalar(self):
        res = sinkhorn(np.array([[7.0]]), [1.0], [1.0])
        assert np.allclose(res.matrix, [[1.0]])

    def test_random_50(self):
        rng = np.random.default_rng(7)
        k = rng.uniform(0.5, 2.0, size=(50, 50))
        mu = np.full(50, 1.0 / 50)
        res = sinkhorn(k, mu, mu)
        p = res.matrix
        resid = np.abs(p.sum(axis=1) - mu).sum() + np.abs(p.sum(axis=0) - mu).sum()
        assert resid <= 1e-10
        # Output is a diagonal scaling of the input.
        back = (res.row_scale[:, None] * k) * res.col_scale[None, :]
        assert np.allclose(back, p)

    def test_max_iters_exceeded(self):
        rng = np.random.default_rng(8)
        k = rng.uniform(0.5, 2.0, size=(20, 20))
        with pytest.raises(NumericError) as err:
            sinkhorn(k, np.full(20, 1 / 20), np.full(20, 1 / 20), tol=1e-14, max_iters=2)
        assert err.value.info["iterations"] == 2
        assert err.value.info["residual"] > 0

    def test_bad_inputs(self):
        with pytest.raises(ContractError):
            sinkhorn(np.array([[1.0, -1.0], [1.0, 1.0]]), [0.5, 0.5], [0.5, 0.5])
        with pytest.raises(ContractError):
            sinkhorn(np.ones((2, 2)), [0.6, 0.5], [0.5, 0.5])


class TestSvec:
    def test_inner_product_preserved(self):
        rng = np.random.default_rng(9)
        for r in (1, 3, 6):
            a = sym(rng.standard_normal((r, r)))
            b = sym(rng.standard_normal((r, r)))
            assert np.isclose(np.dot(svec(a), svec(b)), np.sum(a * b))
            assert np.allclose(sunvec(svec(a), r), a)
