import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from vbmm.checks import finite_difference_gradient, gradient_error
from vbmm.regularizer import (
    GradientOperator,
    RegularizerParams,
    geman_mcclure,
    geman_mcclure_second,
    geman_mcclure_weight,
    grad_op_apply,
    reg_gradient,
    reg_lipschitz,
    reg_value,
    reg_value_and_gradient,
)


class TestParams:
    @pytest.mark.parametrize("args", [(-1.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0)])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            RegularizerParams(*args)

    def test_zero_lambda_allowed(self):
        assert RegularizerParams(0.0, 1.0, 0.01).lam == 0.0


class TestGradientOperator:
    def test_constant_image(self):
        gop = GradientOperator(5, 4)
        np.testing.assert_array_equal(grad_op_apply(gop, np.full(20, 3.0)), 0.0)

    def test_two_pixels(self):
        gop = GradientOperator(2, 1)
        np.testing.assert_array_equal(gop.apply(np.array([1.0, 4.0])), [[3.0, 0.0], [0.0, 0.0]])

    def test_vertical(self):
        gop = GradientOperator(1, 2)
        np.testing.assert_array_equal(gop.apply(np.array([1.0, 4.0])), [[0.0, 3.0], [0.0, 0.0]])

    def test_adjoint(self, rng):
        gop = GradientOperator(7, 5)
        for _ in range(20):
            x = rng.normal(size=gop.size)
            u = rng.normal(size=(gop.size, 2))
            lhs = np.sum(gop.apply(x) * u)
            rhs = x @ gop.adjoint(u)
            assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))

    def test_norm_bound(self):
        gop = GradientOperator(6, 5)
        d = np.column_stack([gop.apply(e).ravel() for e in np.eye(gop.size)])
        assert np.linalg.norm(d, 2) ** 2 <= 8.0

    def test_geometry_mismatch(self):
        with pytest.raises(ValueError):
            GradientOperator(3, 3).apply(np.ones(8))


class TestPotential:
    def test_value_at_one(self):
        np.testing.assert_allclose(geman_mcclure(1.0, 1.0), 1.0 / 3.0)

    @given(st.floats(-1e3, 1e3), st.floats(0.05, 20))
    def test_bounds(self, t, delta):
        w = geman_mcclure_weight(t, delta)
        s = geman_mcclure_second(t, delta)
        assert 0 < w <= 1 / delta**2 * (1 + 1e-12)
        assert -1 / (4 * delta**2) * (1 + 1e-12) <= s <= 1 / delta**2 * (1 + 1e-12)
        assert 0 <= geman_mcclure(t, delta) < 1

    def test_weight_is_derivative_over_t(self):
        t = np.linspace(0.1, 5, 30)
        d = 0.7
        h = 1e-6
        deriv = (geman_mcclure(t + h, d) - geman_mcclure(t - h, d)) / (2 * h)
        np.testing.assert_allclose(geman_mcclure_weight(t, d), deriv / t, rtol=1e-7)

    def test_second_derivative(self):
        t = np.linspace(-4, 4, 41)
        d = 1.3
        h = 1e-4
        num = (geman_mcclure(t + h, d) - 2 * geman_mcclure(t, d) + geman_mcclure(t - h, d)) / h**2
        np.testing.assert_allclose(geman_mcclure_second(t, d), num, atol=1e-6)


class TestRegValue:
    def test_zero(self):
        assert reg_value(RegularizerParams(1, 1, 0.1), GradientOperator(3, 3), np.zeros(9)) == 0.0

    def test_single_difference(self):
        p = RegularizerParams(1.0, 1.0, 1e-12)
        x = np.array([0.0, 1.0])
        np.testing.assert_allclose(reg_value(p, GradientOperator(2, 1), x), 1 / 3 + 0.5e-12)

    @given(hnp.arrays(np.float64, 12, elements=st.floats(-50, 50)))
    def test_bounded(self, x):
        p = RegularizerParams(2.0, 0.5, 0.1)
        assert reg_value(p, GradientOperator(4, 3), x) <= p.lam * 12 + 0.5 * p.epsilon * x @ x + 1e-9


class TestRegGradient:
    def test_zero(self):
        np.testing.assert_array_equal(
            reg_gradient(RegularizerParams(1, 1, 0.1), GradientOperator(3, 3), np.zeros(9)), 0.0)

    def test_constant(self):
        p = RegularizerParams(1.0, 1.0, 0.1)
        np.testing.assert_allclose(reg_gradient(p, GradientOperator(3, 3), np.full(9, 2.0)), 0.2)

    def test_finite_differences(self, rng):
        p = RegularizerParams(1.0, 0.7, 0.01)
        gop = GradientOperator(8, 8)
        for _ in range(20):
            x = rng.normal(size=64)
            fd = finite_difference_gradient(lambda v: reg_value(p, gop, v), x)
            assert gradient_error(reg_gradient(p, gop, x), fd) <= 1e-5

    def test_fused_matches(self, rng):
        p = RegularizerParams(1.5, 0.4, 0.02)
        gop = GradientOperator(6, 5)
        x = rng.normal(size=gop.size)
        v, g = reg_value_and_gradient(p, gop, x)
        np.testing.assert_allclose(v, reg_value(p, gop, x), rtol=1e-14)
        np.testing.assert_allclose(g, reg_gradient(p, gop, x), rtol=1e-13, atol=1e-15)


class TestLipschitz:
    def test_example(self):
        np.testing.assert_allclose(reg_lipschitz(RegularizerParams(1.0, 1.0, 0.01)), 8.01)

    def test_small_lambda(self):
        np.testing.assert_allclose(reg_lipschitz(RegularizerParams(1e-12, 1.0, 0.01)), 0.01)

    def test_hessian_bound(self, rng):
        p = RegularizerParams(1.0, 0.5, 0.01)
        gop = GradientOperator(4, 4)
        L = reg_lipschitz(p)
        h = 1e-5
        for _ in range(5):
            x = rng.normal(0, 0.5, 16)
            hess = np.column_stack([(reg_gradient(p, gop, x + h * e) - reg_gradient(p, gop, x - h * e)) / (2 * h)
                                    for e in np.eye(16)])
            hess = 0.5 * (hess + hess.T)
            assert np.abs(np.linalg.eigvalsh(hess)).max() <= L * (1 + 1e-6)

    def test_descent_lemma(self, rng):
        p = RegularizerParams(1.0, 0.5, 0.01)
        gop = GradientOperator(5, 5)
        M = reg_lipschitz(p)
        for _ in range(500):
            x, z = rng.normal(0, 2, (2, 25))
            q = reg_value(p, gop, z) + reg_gradient(p, gop, z) @ (x - z) + 0.5 * M * np.sum((x - z) ** 2)
            assert reg_value(p, gop, x) <= q + 1e-9
