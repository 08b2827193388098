import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra import numpy as hnp

from vbmm.bregman import (
    ORDER_RELATIONS,
    SERIES_THRESHOLD,
    MajorantKind,
    MajorantSpec,
    PiecewiseLogQuadratic,
    SeparableLegendre,
    bregman_distance,
    coeff_maj1,
    coeff_maj2,
    coeff_maj4,
    coeff_maj5,
    coeff_maj6,
    coeff_maj7,
    coeff_maj8,
    coeff_maj9,
    curvature_c_tau,
    ell_majorization_check,
    hessian_characterization_check,
    make_generator,
    majorization_check,
    order_check,
    varphi_maj3,
)
from vbmm.checks import c_tau_grid, c_tau_quadrature, order_relation_min, random_model
from vbmm.errors import DomainError
from vbmm.linalg import SparseNonnegOperator
from vbmm.poisson import PoissonModel, ell_gradient, ell_value


def scalar_model(y=3.0):
    return PoissonModel(SparseNonnegOperator([[2.0]]), [y], [1.0])


def zero_count(model):
    return PoissonModel(model.op, np.zeros(model.n_rows), model.b)


points = hnp.arrays(np.float64, 4, elements=st.floats(-0.9, 20.0))


class TestMajorantSpec:
    def test_parse(self):
        assert MajorantKind.parse("Maj-4") is MajorantKind.MAJ4
        assert MajorantKind.parse("maj8").family == "quadratic"
        with pytest.raises(ValueError):
            MajorantKind.parse("maj10")

    def test_parameter_presence(self):
        MajorantSpec(MajorantKind.MAJ4, mu=0.1)
        MajorantSpec("maj8", tau=0.1)
        with pytest.raises(ValueError):
            MajorantSpec(MajorantKind.MAJ4)
        with pytest.raises(ValueError):
            MajorantSpec(MajorantKind.MAJ1, tau=0.1)
        with pytest.raises(ValueError):
            MajorantSpec(MajorantKind.MAJ7)

    def test_ranges(self):
        MajorantSpec(MajorantKind.MAJ4, mu=0.5).validate(0.5)
        with pytest.raises(ValueError):
            MajorantSpec(MajorantKind.MAJ4, mu=0.6).validate(0.5)
        with pytest.raises(ValueError):
            MajorantSpec(MajorantKind.MAJ9, tau=0.5).validate(0.5)

    def test_defaults(self):
        assert MajorantSpec.default("maj4", 0.4).mu == 0.4
        assert MajorantSpec.default("maj8", 0.4).tau == 0.2


class TestBregmanDistance:
    def test_identical_points(self):
        h = SeparableLegendre("log_shift", [1.0, 2.0], 0.5)
        assert bregman_distance(h, np.array([1.0, 3.0]), np.array([1.0, 3.0])) == 0.0

    def test_euclidean(self, rng):
        h = SeparableLegendre("quadratic", np.ones(5))
        x, y = rng.normal(size=(2, 5))
        np.testing.assert_allclose(bregman_distance(h, x, y), 0.5 * np.sum((x - y) ** 2), rtol=1e-14)

    def test_burg_scalar(self):
        h = SeparableLegendre("log_shift", [1.0], 0.0)
        # mpmath: 1 - ln 2
        np.testing.assert_allclose(bregman_distance(h, np.array([2.0]), np.array([1.0])),
                                   0.30685281944005469, rtol=1e-15)

    def test_matches_definition(self, rng):
        h = SeparableLegendre("log_shift", rng.uniform(0.5, 2, 6), 0.3)
        x, y = rng.uniform(0, 4, (2, 6))
        direct = h.value(x) - h.value(y) - h.gradient(y) @ (x - y)
        np.testing.assert_allclose(bregman_distance(h, x, y), direct, rtol=1e-10)

    def test_domain(self):
        h = SeparableLegendre("log_shift", [1.0], 0.5)
        with pytest.raises(DomainError):
            bregman_distance(h, np.array([-0.5]), np.array([1.0]))
        with pytest.raises(ValueError):
            SeparableLegendre("cubic", [1.0])

    @given(points, points, hnp.arrays(np.float64, 4, elements=st.floats(0.01, 10)))
    def test_nonnegative_and_identity(self, x, y, a):
        for h in (SeparableLegendre("log_shift", a, 1.0), SeparableLegendre("quadratic", a),
                  PiecewiseLogQuadratic(a, np.full(4, 0.5), 1.0)):
            d = bregman_distance(h, x, y)
            assert d >= 0
            if np.array_equal(x, y):
                assert d <= 1e-12

    @given(points, points, st.floats(0.1, 5), st.floats(0.1, 5))
    def test_additivity(self, x, y, alpha, beta):
        a1 = np.array([1.0, 2.0, 0.5, 3.0])
        a2 = np.array([0.2, 1.0, 4.0, 1.5])
        for form, shift in (("log_shift", 1.0), ("quadratic", 0.0)):
            h1 = SeparableLegendre(form, a1, shift)
            h2 = SeparableLegendre(form, a2, shift)
            hs = SeparableLegendre(form, alpha * a1 + beta * a2, shift)
            lhs = bregman_distance(hs, x, y)
            rhs = alpha * bregman_distance(h1, x, y) + beta * bregman_distance(h2, x, y)
            assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))

    def test_batched(self, rng):
        h = SeparableLegendre("log_shift", rng.uniform(1, 2, (3, 4)), 0.2)
        x, y = rng.uniform(0, 2, (2, 3, 4))
        d = bregman_distance(h, x, y)
        for i in range(3):
            hi = SeparableLegendre("log_shift", h.coeffs[i], 0.2)
            np.testing.assert_allclose(d[i], bregman_distance(hi, x[i], y[i]), rtol=1e-14)


class TestCoefficients:
    def test_maj1_scalar(self):
        np.testing.assert_allclose(coeff_maj1(scalar_model(), np.array([1.0])), [3.0])

    def test_zero_counts(self, small_model):
        m = zero_count(small_model)
        z = np.ones(m.n_cols)
        tau = 0.5 * m.rho
        for a in (coeff_maj1(m, z), coeff_maj2(m), coeff_maj4(m, z, m.rho), coeff_maj6(m, z),
                  coeff_maj7(m, z, tau), coeff_maj8(m, z, tau), coeff_maj9(m, z, tau)):
            np.testing.assert_array_equal(a, 0.0)

    def test_maj2_indicator(self):
        m = PoissonModel(SparseNonnegOperator([[1.0], [1e-3]]), [3.0, 5.0], [1.0, 1.0])
        np.testing.assert_array_equal(coeff_maj2(m), [8.0])
        m = PoissonModel(SparseNonnegOperator([[1.0, 0.0], [0.0, 2.0]]), [3.0, 5.0], [1.0, 1.0])
        np.testing.assert_array_equal(coeff_maj2(m), [3.0, 5.0])

    def test_maj2_no_projector_calls(self, small_model):
        before = small_model.op.counter.snapshot()
        coeff_maj2(small_model)
        assert small_model.op.counter.snapshot() == before

    def test_maj4(self):
        m = scalar_model()
        np.testing.assert_allclose(coeff_maj4(m, np.array([1.0]), m.rho), [3.0])
        with pytest.raises(ValueError):
            coeff_maj4(m, np.array([1.0]), 0.6)

    def test_maj4_mu_zero_is_maj6(self, model_12x16, rng):
        z = rng.uniform(0.1, 3, model_12x16.n_cols)
        np.testing.assert_allclose(coeff_maj4(model_12x16, z, 0.0), coeff_maj6(model_12x16, z),
                                   rtol=1e-15)

    def test_maj6(self):
        m = scalar_model()
        np.testing.assert_allclose(coeff_maj6(m, np.array([1.0])), [2.0])
        assert coeff_maj6(m, np.array([1e-8]))[0] < 1e-7
        with pytest.raises(DomainError):
            coeff_maj6(m, np.array([0.0]))

    def test_maj5_domain(self, small_model):
        with pytest.raises(DomainError):
            coeff_maj5(small_model, np.zeros(small_model.n_cols))

    def test_maj1_domain(self, small_model):
        z = np.full(small_model.n_cols, -small_model.rho)
        with pytest.raises(DomainError):
            coeff_maj1(small_model, z)

    def test_componentwise_orderings(self, model_12x16, rng):
        m = model_12x16
        tau = 0.5 * m.rho
        a2 = coeff_maj2(m)
        for _ in range(50):
            z = rng.uniform(1e-3, 5, m.n_cols)
            a1 = coeff_maj1(m, z)
            assert np.all(coeff_maj6(m, z) <= a1)
            assert np.all(a1 <= a2 * (1 + 1e-14))
            assert np.all(coeff_maj4(m, z, m.rho) <= a1 * (1 + 1e-14))
            assert np.all(coeff_maj7(m, z, tau) <= coeff_maj8(m, z, tau) * (1 + 1e-14))

    def test_maj7_scalar(self):
        m = scalar_model()
        tau = 0.25
        z = np.array([1.0])
        expected = 3.0 * 2.0 * (1.0 + 0.5) / 3.0 * curvature_c_tau(1.0, 0.5, tau)
        np.testing.assert_allclose(coeff_maj7(m, z, tau), [expected], rtol=1e-15)

    def test_equal_shift_maj7_is_maj8(self, shift_model, rng):
        z = rng.uniform(0, 4, shift_model.n_cols)
        tau = 0.5 * shift_model.rho
        np.testing.assert_allclose(coeff_maj7(shift_model, z, tau), coeff_maj8(shift_model, z, tau),
                                   rtol=1e-13)

    def test_maj7_dense_loop_oracle(self, model_12x16, rng):
        m = model_12x16
        h = m.op.toarray()
        tau = 0.3 * m.rho
        z = rng.uniform(0, 3, m.n_cols)
        p = h @ z + m.b
        expected = np.zeros(m.n_cols)
        for i in range(m.n_rows):
            for n in range(m.n_cols):
                if h[i, n]:
                    eta = m.zeta_b[i]
                    expected[n] += (m.y[i] * h[i, n] * (z[n] + eta) / p[i]
                                    * curvature_c_tau(z[n], eta, tau))
        np.testing.assert_allclose(coeff_maj7(m, z, tau), expected, rtol=1e-12)

    def test_maj9_scalar(self):
        m = scalar_model()
        tau = 0.25
        expected = 3.0 * (2.0 / 0.5) * curvature_c_tau(2.0, 1.0, tau)
        np.testing.assert_allclose(coeff_maj9(m, np.array([1.0]), tau), [expected], rtol=1e-15)

    def test_maj9_positive(self, model_12x16, rng):
        m = model_12x16
        z = rng.uniform(0, 3, m.n_cols)
        a = coeff_maj9(m, z, 0.5 * m.rho)
        cols_hit = np.asarray((m.op.csr.T @ (m.y > 0).astype(float)) > 0).ravel()
        assert np.all(a[cols_hit] > 0)

    def test_positivity_where_counts(self, model_12x16, rng):
        m = model_12x16
        z = rng.uniform(0.01, 3, m.n_cols)
        hit = (m.op.csr.T @ (m.y > 0).astype(float)) > 0
        for a in (coeff_maj1(m, z), coeff_maj2(m), coeff_maj4(m, z, m.rho), coeff_maj6(m, z),
                  coeff_maj8(m, z, 0.5 * m.rho)):
            assert np.all(a >= 0)
            assert np.all(a[hit] > 0)

    def test_batched_matches_single(self, model_12x16, rng):
        m = model_12x16
        zs = rng.uniform(0.01, 3, (3, m.n_cols))
        tau = 0.5 * m.rho
        for fn in (lambda z: coeff_maj1(m, z), lambda z: coeff_maj7(m, z, tau),
                   lambda z: coeff_maj9(m, z, tau)):
            batch = fn(zs)
            for i in range(3):
                np.testing.assert_allclose(batch[i], fn(zs[i]), rtol=1e-13)


class TestVarphi:
    def test_examples(self):
        assert varphi_maj3(0.7, 0.3, 0.7) == 0.0
        np.testing.assert_allclose(varphi_maj3(0.0, 1.0, 1.0), -0.5)
        np.testing.assert_allclose(varphi_maj3(0.0, 1.0, -0.5), np.log(2.0))

    def test_c1_at_anchor(self):
        z, rho, h = 0.4, 0.3, 1e-7
        left = (varphi_maj3(z, rho, z) - varphi_maj3(z, rho, z - h)) / h
        right = (varphi_maj3(z, rho, z + h) - varphi_maj3(z, rho, z)) / h
        np.testing.assert_allclose(left, -1 / (z + rho), rtol=1e-6)
        np.testing.assert_allclose(right, -1 / (z + rho), rtol=1e-6)

    def test_domain(self):
        with pytest.raises(DomainError):
            varphi_maj3(0.0, 1.0, -1.0)

    def test_generator_distance(self, rng):
        a = rng.uniform(0.5, 2, 5)
        z = rng.uniform(0, 2, 5)
        g = PiecewiseLogQuadratic(a, z, 0.4)
        for _ in range(100):
            x, y = rng.uniform(-0.39, 3, (2, 5))
            direct = g.value(x) - g.value(y) - g.gradient(y) @ (x - y)
            np.testing.assert_allclose(g.distance(x, y), direct, rtol=1e-9, atol=1e-12)


class TestCurvature:
    def test_at_minus_tau(self):
        np.testing.assert_allclose(curvature_c_tau(-0.5, 2.0, 0.5), 1 / 1.5**2, rtol=1e-15)

    def test_value(self):
        # mpmath quadrature oracle: 0.171686382719951386...
        np.testing.assert_allclose(curvature_c_tau(1.0, 2.0, 0.5), 0.17168638271995139, rtol=1e-14)

    def test_against_quadrature(self):
        grid = c_tau_grid()
        assert len(grid) == 5000
        xi, eta, tau = np.array(grid).T
        closed = curvature_c_tau(xi, eta, tau)
        oracle = np.array([c_tau_quadrature(*p) for p in grid])
        assert np.max(np.abs(closed - oracle) / oracle) <= 1e-8

    def test_continuous_across_threshold(self):
        tau, eta = 0.5, 2.0
        e = eta - tau
        r = SERIES_THRESHOLD
        below = curvature_c_tau(-tau + r * e * (1 - 1e-9), eta, tau)
        above = curvature_c_tau(-tau + r * e * (1 + 1e-9), eta, tau)
        # closed form loses about eps / r relative digits at the switch
        np.testing.assert_allclose(below, above, rtol=1e-10)

    @given(st.floats(0.01, 2), st.floats(0, 20), st.floats(1.01, 10), st.floats(1.0, 10))
    def test_decreasing_in_eta(self, tau, s, k1, k2):
        eta1 = tau * k1
        eta2 = eta1 * k2
        xi = -tau + s
        assert curvature_c_tau(xi, eta1, tau) >= curvature_c_tau(xi, eta2, tau) * (1 - 1e-14)

    @given(st.floats(0.01, 2), st.floats(0, 50), st.floats(1.001, 100))
    def test_positive(self, tau, s, k):
        assert curvature_c_tau(-tau + s, tau * k, tau) > 0

    def test_bad_parameters(self):
        with pytest.raises(ValueError):
            curvature_c_tau(0.0, 0.5, 0.5)
        with pytest.raises(ValueError):
            curvature_c_tau(0.0, 1.0, 0.0)
        with pytest.raises(DomainError):
            curvature_c_tau(-0.6, 1.0, 0.5)

    def test_majorizes_log(self, rng):
        tau, eta = 0.3, 1.2
        for _ in range(200):
            z, x = rng.uniform(-tau, 8, 2)
            c = curvature_c_tau(z, eta, tau)
            psi = lambda v: -np.log(v + eta)
            q = psi(z) - (x - z) / (z + eta) + 0.5 * c * (x - z) ** 2
            assert q >= psi(x) - 1e-12


class TestOrderCheck:
    def test_same_generator(self, model_12x16):
        spec = MajorantSpec.default("maj1", model_12x16.rho)
        f = lambda z: make_generator(spec, model_12x16, z)
        assert order_check(f, f, (0.0, 5.0), 500, 0, n=model_12x16.n_cols) == 0.0

    def test_fixed_generators(self):
        a = SeparableLegendre("quadratic", [1.0, 1.0])
        b = SeparableLegendre("quadratic", [2.0, 1.5])
        assert order_check(a, b, (-1.0, 1.0), 1000, 0) >= 0
        assert order_check(b, a, (-1.0, 1.0), 1000, 0) < 0

    @pytest.mark.parametrize("a,b,equal", ORDER_RELATIONS,
                             ids=[f"{a.label}-{b.label}" for a, b, _ in ORDER_RELATIONS])
    def test_relations(self, a, b, equal, model_12x16, shift_model):
        m = shift_model if equal else model_12x16
        assert order_relation_min(a, b, m, 2000, 7) >= -1e-9

    @pytest.mark.parametrize("a,b", [(MajorantKind.MAJ2, MajorantKind.MAJ1),
                                     (MajorantKind.MAJ5, MajorantKind.MAJ6),
                                     (MajorantKind.MAJ8, MajorantKind.MAJ7)])
    def test_reversed_relations_fail(self, a, b, model_12x16):
        assert order_relation_min(a, b, model_12x16, 2000, 7) < -1e-6

    def test_low_dimension_relations(self):
        m = random_model(3, 2, seed=4)
        for a, b, equal in ORDER_RELATIONS:
            if not equal:
                assert order_relation_min(a, b, m, 5000, 1) >= -1e-9

    def test_maj3_maj7_needs_anchor(self, shift_model):
        # Away from the reference point the log branch of h3 outgrows the quadratic h7.
        v = order_relation_min(MajorantKind.MAJ3, MajorantKind.MAJ7, shift_model, 2000, 0,
                               anchored=False)
        assert v < 0


class TestMajorization:
    @pytest.mark.parametrize("kind", list(MajorantKind), ids=lambda k: k.label)
    def test_ell(self, kind, model_12x16):
        spec = MajorantSpec.default(kind, model_12x16.rho)
        r = ell_majorization_check(model_12x16, spec, 2000, 3)
        assert r.min_scaled_gap >= -1e-8
        assert r.tangency_error <= 1e-12

    @pytest.mark.parametrize("kind", list(MajorantKind), ids=lambda k: k.label)
    def test_ell_scalar_model_near_reference(self, kind):
        # One pixel: the sampled gap gets close to zero, so the check is sharp.
        m = random_model(2, 1, seed=5)
        spec = MajorantSpec.default(kind, m.rho)
        r = ell_majorization_check(m, spec, 5000, 0, upper=3.0)
        assert r.min_scaled_gap >= -1e-8
        assert r.min_gap < 1e-3

    def test_tangency_exact(self, model_12x16):
        spec = MajorantSpec.default("maj8", model_12x16.rho)
        z = np.full((1, model_12x16.n_cols), 0.7)
        h = make_generator(spec, model_12x16, z)
        assert h.distance(z, z)[0] == 0.0

    def test_fault_injection(self, model_12x16):
        spec = MajorantSpec.default("maj1", model_12x16.rho)
        r = ell_majorization_check(model_12x16, spec, 2000, 3, coeff_scale=0.5)
        assert not r.passed()

    def test_generic_interface(self):
        h = SeparableLegendre("quadratic", [2.0])
        r = majorization_check(lambda x: np.sum(x**2, axis=-1), lambda x: 2 * x,
                               lambda z: h, (-1.0, 1.0), 1, 100, 0)
        assert abs(r.min_gap) <= 1e-15


class TestHessianCharacterization:
    def test_same_function(self, rng):
        hess = lambda p: 2.0 / (p + 1.0) ** 2
        assert hessian_characterization_check(hess, hess, np.array([2.0]), np.array([0.5])) == 0.0

    def test_quadratic_majorant_of_log(self, rng):
        tau, eta = 0.5, 1.0
        psi2 = lambda p: 1.0 / (p + eta) ** 2
        for _ in range(200):
            z, x = rng.uniform(-tau, 5, 2)
            c = curvature_c_tau(z, eta, tau)
            v = hessian_characterization_check(psi2, lambda p: c, np.array([x]), np.array([z]))
            assert v >= -1e-12
            # The quadrature equals D_h - D_psi.
            d_h = 0.5 * c * (x - z) ** 2
            d_psi = -np.log((x + eta) / (z + eta)) + (x - z) / (z + eta)
            np.testing.assert_allclose(v, d_h - d_psi, rtol=1e-8, atol=1e-13)

    def test_reversed_pair_negative(self):
        tau, eta = 0.5, 1.0
        z, x = 2.0, -0.4
        c = curvature_c_tau(z, eta, tau)
        psi2 = lambda p: 1.0 / (p + eta) ** 2
        assert hessian_characterization_check(lambda p: c, psi2, np.array([x]), np.array([z])) < 0

    def test_ell_with_maj1(self, small_model, rng):
        from vbmm.poisson import ell_hessian
        m = small_model
        for _ in range(10):
            z, x = rng.uniform(0, 3, (2, m.n_cols))
            h = make_generator(MajorantSpec.default("maj1", m.rho), m, z)
            v = hessian_characterization_check(lambda p: ell_hessian(m, p), h.hessian_diag, x, z)
            direct = h.distance(x, z) - (ell_value(m, x) - ell_value(m, z) - ell_gradient(m, z) @ (x - z))
            np.testing.assert_allclose(v, direct, rtol=1e-8, atol=1e-10)
            assert v >= -1e-10
