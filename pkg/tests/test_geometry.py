"""Invariant suites for the manifold contract, at the documented tolerances."""

import numpy as np
import pytest

from manibilevel.errors import ContractError, NumericError, UnsupportedOperationError
from manibilevel.geometry import product
from manibilevel.linalg import sym
from manibilevel.manifolds import DoublyStochastic, Euclidean, Spd, Stiefel

ALL = [Euclidean((2, 3)), Spd(4), Stiefel(6, 3), DoublyStochastic(4, 5)]
WITH_EXP = [m for m in ALL if m.has_exp]


def make_quadratic(manifold, rng):
    """A smooth ambient function f(z) = <c, z> + 0.5 vec(z)' H vec(z).

    Returns (value, euclidean_gradient, euclidean_hessian_apply) callables so
    manifold derivative conversions can be tested against consistent data.
    """
    size = int(np.prod(manifold.ambient_shape))
    c = rng.standard_normal(manifold.ambient_shape)
    h = rng.standard_normal((size, size))
    h = 0.5 * (h + h.T)

    def value(z):
        zf = z.ravel()
        return float(np.sum(c * z) + 0.5 * zf @ h @ zf)

    def egrad(z):
        return c + (h @ z.ravel()).reshape(manifold.ambient_shape)

    def ehess(z, u):
        return (h @ u.ravel()).reshape(manifold.ambient_shape)

    return value, egrad, ehess


@pytest.mark.parametrize("m", ALL, ids=lambda m: m.name)
class TestPerManifold:
    def test_random_membership(self, m):
        rng = np.random.default_rng(11)
        for _ in range(5):
            x = m.rand_point(rng)
            assert m.check_point(x.coords) <= m.membership_tol
            u = m.rand_tangent(x, rng)
            assert m.check_tangent(x, u.coords) <= 1e-8

    def test_metric_properties(self, m):
        rng = np.random.default_rng(12)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        v = m.rand_tangent(x, rng)
        w = m.rand_tangent(x, rng)
        assert m.inner(x, u, v) == pytest.approx(m.inner(x, v, u))
        lhs = m.inner(x, 2.0 * u + w, v)
        rhs = 2.0 * m.inner(x, u, v) + m.inner(x, w, v)
        assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
        assert m.inner(x, u, u) > 0
        assert m.norm(x, u) == pytest.approx(np.sqrt(m.inner(x, u, u)))

    def test_base_mismatch_rejected(self, m):
        rng = np.random.default_rng(13)
        x = m.rand_point(rng)
        y = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        v = m.rand_tangent(y, rng)
        with pytest.raises(ContractError):
            m.inner(x, u, v)

    def test_retract_zero(self, m):
        rng = np.random.default_rng(14)
        x = m.rand_point(rng)
        z = m.zero_tangent(x)
        y = m.retract(x, z)
        assert np.allclose(y.coords, x.coords, atol=m.membership_tol * 10)

    def test_proj_idempotent_and_fixes_tangents(self, m):
        rng = np.random.default_rng(15)
        x = m.rand_point(rng)
        a = rng.standard_normal(m.ambient_shape)
        p1 = m.proj(x, a)
        p2 = m.proj(x, p1.coords)
        scale = 1.0 + np.abs(p1.coords).max()
        assert np.abs(p2.coords - p1.coords).max() <= 1e-10 * scale
        u = m.rand_tangent(x, rng)
        again = m.proj(x, u.coords)
        assert np.abs(again.coords - u.coords).max() <= 1e-10 * (1 + np.abs(u.coords).max())

    def test_transport_identity(self, m):
        rng = np.random.default_rng(16)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        back = m.transport(x, x, u)
        assert np.allclose(back.coords, u.coords)

    def test_transport_isometry_where_promised(self, m):
        rng = np.random.default_rng(17)
        x = m.rand_point(rng)
        step = m.rand_tangent(x, rng)
        y = m.retract(x, 0.2 * step)
        for _ in range(20):
            u = m.rand_tangent(x, rng)
            v = m.rand_tangent(x, rng)
            tu = m.transport(x, y, u)
            tv = m.transport(x, y, v)
            before = m.inner(x, u, v)
            after = m.inner(y, tu, tv)
            if m.has_isometric_transport:
                assert abs(after - before) <= 1e-8 * (1 + abs(before))

    def test_egrad_to_rgrad_is_metric_dual(self, m):
        rng = np.random.default_rng(18)
        x = m.rand_point(rng)
        eg = rng.standard_normal(m.ambient_shape)
        rg = m.egrad_to_rgrad(x, eg)
        for _ in range(20):
            u = m.rand_tangent(x, rng)
            assert m.inner(x, rg, u) == pytest.approx(
                float(np.sum(eg * u.coords)), rel=1e-8, abs=1e-10
            )

    def test_egrad_to_rgrad_vs_finite_differences(self, m):
        rng = np.random.default_rng(19)
        value, egrad, _ = make_quadratic(m, rng)
        x = m.rand_point(rng)
        rg = m.egrad_to_rgrad(x, egrad(x.coords))
        h = 1e-5
        for _ in range(5):
            u = m.rand_tangent(x, rng)
            u = (1.0 / m.norm(x, u)) * u
            fd = (value(m.curve(x, u, h).coords) - value(m.curve(x, u, -h).coords)) / (2 * h)
            assert abs(m.inner(x, rg, u) - fd) <= 1e-5 * (1 + abs(fd))

    def test_flat_is_inverse_of_sharp(self, m):
        rng = np.random.default_rng(20)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        e = m.flat(x, u)
        v = m.rand_tangent(x, rng)
        assert float(np.sum(e * v.coords)) == pytest.approx(
            m.inner(x, u, v), rel=1e-9, abs=1e-11
        )
        back = m.egrad_to_rgrad(x, e)
        assert np.abs(back.coords - u.coords).max() <= 1e-9 * (1 + np.abs(u.coords).max())

    def test_hessian_self_adjoint(self, m):
        rng = np.random.default_rng(21)
        _, egrad, ehess = make_quadratic(m, rng)
        x = m.rand_point(rng)
        eg = egrad(x.coords)
        for _ in range(100):
            u = m.rand_tangent(x, rng)
            v = m.rand_tangent(x, rng)
            hu = m.ehess_to_rhess(x, eg, ehess(x.coords, u.coords), u)
            hv = m.ehess_to_rhess(x, eg, ehess(x.coords, v.coords), v)
            lhs = m.inner(x, hu, v)
            rhs = m.inner(x, u, hv)
            assert abs(lhs - rhs) <= 1e-7 * (1 + abs(lhs))

    def test_tangent_basis_orthonormal(self, m):
        rng = np.random.default_rng(22)
        x = m.rand_point(rng)
        basis = m.tangent_basis(x)
        assert len(basis) == m.dim
        gram = np.array([[m.inner(x, a, b) for b in basis] for a in basis])
        assert np.abs(gram - np.eye(m.dim)).max() <= 1e-8

    def test_normalize_controls_drift(self, m):
        rng = np.random.default_rng(23)
        x = m.rand_point(rng)
        drifted = x.coords + 1e-9 * rng.standard_normal(m.ambient_shape)
        fixed = m.normalize_point(drifted)
        assert m.check_point(fixed) <= m.membership_tol


@pytest.mark.parametrize("m", WITH_EXP, ids=lambda m: m.name)
class TestExpLog:
    def test_exp_zero(self, m):
        rng = np.random.default_rng(24)
        x = m.rand_point(rng)
        y = m.exp(x, m.zero_tangent(x))
        assert np.allclose(y.coords, x.coords, atol=m.membership_tol * 10)

    def test_log_self_is_zero(self, m):
        rng = np.random.default_rng(25)
        x = m.rand_point(rng)
        v = m.log(x, x)
        assert np.abs(v.coords).max() <= 1e-9
        assert m.dist(x, x) <= 1e-9

    def test_exp_log_roundtrip(self, m):
        rng = np.random.default_rng(26)
        for _ in range(10):
            x = m.rand_point(rng)
            u = m.rand_tangent(x, rng)
            u = (0.1 / m.norm(x, u)) * u
            y = m.exp(x, u)
            assert m.check_point(y.coords) <= m.membership_tol
            v = m.log(x, y)
            mismatch = m.norm(x, v - u)
            assert mismatch <= 1e-7 * (1 + m.norm(x, u))

    def test_log_then_exp(self, m):
        rng = np.random.default_rng(27)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        y = m.exp(x, (0.3 / m.norm(x, u)) * u)
        back = m.exp(x, m.log(x, y))
        assert np.abs(back.coords - y.coords).max() <= 1e-8 * (1 + np.abs(y.coords).max())

    def test_dist_symmetry_and_norm(self, m):
        rng = np.random.default_rng(28)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        y = m.exp(x, (0.25 / m.norm(x, u)) * u)
        dxy = m.dist(x, y)
        dyx = m.dist(y, x)
        if m.exp_is_chart:
            # Chart-based exp: symmetry only holds to second order.
            assert abs(dxy - dyx) <= 0.5 * dxy**2
        else:
            assert abs(dxy - dyx) <= 1e-8 * (1 + dxy)
        assert dxy == pytest.approx(m.norm(x, m.log(x, y)))

    def test_retraction_first_order(self, m):
        rng = np.random.default_rng(29)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        u = (1.0 / m.norm(x, u)) * u
        for t in (1e-1, 1e-2, 1e-3):
            gap = m.dist(m.retract(x, t * u), m.exp(x, t * u))
            assert gap <= 1e-8 + 5.0 * t * t


class TestSpdExamples:
    def test_inner_scalar(self):
        m = Spd(1)
        x = m.point([[2.0]])
        u = m.tangent(x, [[2.0]])
        assert m.inner(x, u, u) == pytest.approx(1.0)

    def test_exp_scalar(self):
        m = Spd(1)
        x = m.point([[1.0]])
        u = m.tangent(x, [[1.0]])
        assert m.exp(x, u).coords[0, 0] == pytest.approx(np.e)

    def test_log_scalar(self):
        m = Spd(1)
        x = m.point([[1.0]])
        y = m.point([[np.e]])
        assert m.log(x, y).coords[0, 0] == pytest.approx(1.0)

    def test_dist_scalar(self):
        m = Spd(1)
        assert m.dist(m.point([[1.0]]), m.point([[np.e**2]])) == pytest.approx(2.0)

    def test_transport_scalar(self):
        m = Spd(1)
        x = m.point([[1.0]])
        y = m.point([[4.0]])
        u = m.tangent(x, [[2.0]])
        assert m.transport(x, y, u).coords[0, 0] == pytest.approx(8.0)

    def test_rgrad_formula(self):
        rng = np.random.default_rng(30)
        m = Spd(4)
        x = m.rand_point(rng)
        eg = sym(rng.standard_normal((4, 4)))
        assert np.allclose(
            m.egrad_to_rgrad(x, eg).coords, x.coords @ eg @ x.coords
        )

    def test_long_range_roundtrip(self):
        # Round-trip through exp/log at geodesic distance 2.
        rng = np.random.default_rng(31)
        for n in (5, 20, 50):
            m = Spd(n)
            x = m.rand_point(rng)
            u = m.rand_tangent(x, rng)
            u = (2.0 / m.norm(x, u)) * u
            y = m.exp(x, u)
            v = m.log(x, y)
            assert m.norm(x, v - u) <= 1e-7 * (1 + m.norm(x, u))
            assert m.dist(x, y) == pytest.approx(2.0, rel=1e-9)

    def test_retract_equals_exp(self):
        rng = np.random.default_rng(32)
        m = Spd(3)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        assert np.allclose(m.retract(x, u).coords, m.exp(x, u).coords)

    def test_singular_point_errors(self):
        m = Spd(2)
        x = m._pt(np.diag([1.0, 0.0]))
        u = m._tv(x, np.eye(2))
        with pytest.raises(NumericError) as err:
            m.inner(x, u, u)
        assert "min_eigenvalue" in err.value.info


class TestStiefelExamples:
    def test_retract_example(self):
        m = Stiefel(2, 1)
        x = m.point([[1.0], [0.0]])
        u = m.tangent(x, [[0.0], [1.0]])
        out = m.retract(x, u)
        assert np.allclose(out.coords, np.array([[1.0], [1.0]]) / np.sqrt(2))

    def test_proj_example(self):
        m = Stiefel(2, 1)
        x = m.point([[1.0], [0.0]])
        out = m.proj(x, np.array([[3.0], [5.0]]))
        assert np.allclose(out.coords, [[0.0], [5.0]])

    def test_exp_log_unsupported(self):
        rng = np.random.default_rng(33)
        m = Stiefel(4, 2)
        x = m.rand_point(rng)
        u = m.rand_tangent(x, rng)
        with pytest.raises(UnsupportedOperationError):
            m.exp(x, u)
        with pytest.raises(UnsupportedOperationError):
            m.log(x, x)

    def test_rank_deficient_retraction(self):
        m = Stiefel(2, 1)
        x = m.point([[1.0], [0.0]])
        u = m.tangent(x, [[0.0], [0.0]])
        with pytest.raises(NumericError):
            m.retract(x, m._tv(x, -x.coords))

    def test_qr_sign_determinism(self):
        rng = np.random.default_rng(34)
        m = Stiefel(5, 3)
        a = rng.standard_normal((5, 3))
        from manibilevel.manifolds import qf

        q = qf(a)
        r = q.T @ a
        assert np.all(np.diag(r) > 0)


class TestDoublyStochasticExamples:
    def test_fisher_inner_example(self):
        m = DoublyStochastic(2, 2, [1.0, 1.0], [1.0, 1.0])
        g = m.point(0.5 * np.ones((2, 2)))
        u = m.tangent(g, [[1.0, -1.0], [-1.0, 1.0]])
        assert m.inner(g, u, u) == pytest.approx(8.0)

    def test_retract_zero(self):
        m = DoublyStochastic(3, 3)
        rng = np.random.default_rng(35)
        g = m.rand_point(rng)
        out = m.retract(g, m.zero_tangent(g))
        assert np.abs(out.coords - g.coords).max() <= m.sinkhorn_tol

    def test_retract_2x2_uniform(self):
        m = DoublyStochastic(2, 2, [1.0, 1.0], [1.0, 1.0])
        g = m.point(0.5 * np.ones((2, 2)))
        t = 0.3
        u = m.tangent(g, t * np.array([[1.0, -1.0], [-1.0, 1.0]]))
        # Retraction oracle, evaluated numerically: balance G * exp(U / G).
        k = 0.5 * np.exp(2 * t * np.array([[1.0, -1.0], [-1.0, 1.0]]))
        p = np.array(k)
        for _ in range(2000):
            p = p * (1.0 / p.sum(axis=1))[:, None]
            p = p * (1.0 / p.sum(axis=0))[None, :]
        out = m.retract(g, u)
        assert np.allclose(out.coords, p, atol=1e-9)

    def test_overflow_guarded(self):
        m = DoublyStochastic(2, 2, [1.0, 1.0], [1.0, 1.0])
        g = m.point(0.5 * np.ones((2, 2)))
        u = m._tv(g, 1e4 * np.array([[1.0, -1.0], [-1.0, 1.0]]))
        with pytest.raises(NumericError):
            m.retract(g, u)

    def test_log_requires_matching_marginals(self):
        m = DoublyStochastic(2, 2, [1.0, 1.0], [1.0, 1.0])
        g = m.point(0.5 * np.ones((2, 2)))
        with pytest.raises(ContractError):
            m.log(g, m._pt(np.array([[0.5, -0.5], [0.5, 0.5]])))


class TestProduct:
    def test_two_lines_make_a_plane(self):
        p = product([Euclidean((1,)), Euclidean((1,))])
        plane = Euclidean((2,))
        x = p.point([0.0, 0.0])
        y = p.point([3.0, 4.0])
        assert p.dist(x, y) == pytest.approx(plane.dist(plane.point([0, 0]), plane.point([3, 4])))

    def test_dist_squares_add(self):
        rng = np.random.default_rng(36)
        comps = [Spd(3), Euclidean((2,))]
        p = product(comps)
        x = p.rand_point(rng)
        u = p.rand_tangent(x, rng)
        y = p.exp(x, 0.3 * u)
        parts_x = p.split(x.coords)
        parts_y = p.split(y.coords)
        d2 = sum(
            m.dist(m._pt(a), m._pt(b)) ** 2
            for m, a, b in zip(comps, parts_x, parts_y)
        )
        assert p.dist(x, y) ** 2 == pytest.approx(d2, rel=1e-9)

    def test_exp_componentwise(self):
        rng = np.random.default_rng(37)
        comps = [Spd(2), Euclidean((3,))]
        p = product(comps)
        x = p.rand_point(rng)
        u = p.rand_tangent(x, rng)
        y = p.exp(x, u)
        parts_x = p.split(x.coords)
        parts_u = p.split(u.coords)
        parts_y = p.split(y.coords)
        for m, a, b, c in zip(comps, parts_x, parts_u, parts_y):
            assert np.allclose(m._exp(a, b), c)

    def test_inner_sums(self):
        rng = np.random.default_rng(38)
        comps = [Euclidean((2,)), Euclidean((3,))]
        p = product(comps)
        x = p.rand_point(rng)
        u = p.rand_tangent(x, rng)
        v = p.rand_tangent(x, rng)
        parts_u = p.split(u.coords)
        parts_v = p.split(v.coords)
        manual = sum(float(np.sum(a * b)) for a, b in zip(parts_u, parts_v))
        assert p.inner(x, u, v) == pytest.approx(manual)

    def test_empty_product_rejected(self):
        with pytest.raises(ContractError):
            product([])
