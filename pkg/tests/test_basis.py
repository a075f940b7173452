"""Basis evaluation, activation jets and bound constants."""

import math

import numpy as np
import pytest
from scipy.interpolate import BSpline

from src.basis import (
    ActivationFamily,
    ActivationSpec,
    BasisFamily,
    BasisSpec,
    bound_constants,
    eval_activation_jet,
    eval_basis,
    eval_basis_jet,
)
from src.errors import ConfigurationError


class TestBasisValues:
    @pytest.mark.parametrize("family,p", [("cubic_bspline", 4), ("cubic_bspline", 8), ("hat", 5)])
    def test_partition_of_unity_and_nonnegative(self, family, p):
        grid = np.linspace(-1.0, 1.0, 4001)
        values = eval_basis(BasisSpec(family, p), grid)
        assert values.shape == (grid.size, p)
        np.testing.assert_allclose(values.sum(axis=-1), 1.0, atol=1e-12)
        assert (values >= 0.0).all()

    def test_hat_values_are_triangles(self):
        spec = BasisSpec(BasisFamily.HAT, 3)
        np.testing.assert_allclose(eval_basis(spec, 0.5), [0.0, 0.5, 0.5], atol=1e-12)
        np.testing.assert_allclose(eval_basis(spec, -1.0), [1.0, 0.0, 0.0], atol=1e-12)

    def test_right_endpoint_belongs_to_last_function(self):
        values = eval_basis(BasisSpec(BasisFamily.CUBIC_BSPLINE, 8), 1.0)
        np.testing.assert_allclose(values, np.eye(8)[-1], atol=1e-12)

    def test_inputs_outside_domain_are_clamped(self):
        spec = BasisSpec(BasisFamily.CUBIC_BSPLINE, 6)
        np.testing.assert_array_equal(eval_basis(spec, 1.7), eval_basis(spec, 1.0))
        np.testing.assert_array_equal(eval_basis(spec, -3.0), eval_basis(spec, -1.0))
        _, first, second = eval_basis_jet(spec, np.array([-1.5, 2.0]))
        assert not first.any()
        assert not second.any()

    def test_array_shapes_gain_trailing_axis(self):
        spec = BasisSpec(BasisFamily.CUBIC_BSPLINE, 7)
        assert eval_basis(spec, np.zeros((2, 3))).shape == (2, 3, 7)
        assert eval_basis(spec, 0.1).shape == (7,)

    def test_matches_scipy_bspline(self):
        spec = BasisSpec(BasisFamily.CUBIC_BSPLINE, 8)
        v = np.random.default_rng(42).uniform(-0.999, 0.999, size=300)
        values, first, second = eval_basis_jet(spec, v)
        for i in range(spec.p):
            ref = BSpline(spec.knots, np.eye(spec.p)[i], spec.degree)
            np.testing.assert_allclose(values[:, i], ref(v), atol=1e-12)
            np.testing.assert_allclose(first[:, i], ref.derivative(1)(v), atol=1e-9)
            np.testing.assert_allclose(second[:, i], ref.derivative(2)(v), atol=1e-7)

    def test_derivatives_sum_to_zero(self):
        v = np.linspace(-0.99, 0.99, 501)
        _, first, second = eval_basis_jet(BasisSpec(BasisFamily.CUBIC_BSPLINE, 9), v)
        np.testing.assert_allclose(first.sum(axis=-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(second.sum(axis=-1), 0.0, atol=1e-8)


class TestBasisSpec:
    def test_cubic_needs_four_functions(self):
        with pytest.raises(ConfigurationError):
            BasisSpec(BasisFamily.CUBIC_BSPLINE, 3)

    def test_unknown_family(self):
        with pytest.raises(ConfigurationError):
            BasisSpec("quintic", 8)

    def test_empty_domain(self):
        with pytest.raises(ConfigurationError):
            BasisSpec(BasisFamily.HAT, 4, 1.0, 1.0)

    def test_knot_vector_is_clamped(self):
        spec = BasisSpec(BasisFamily.CUBIC_BSPLINE, 8)
        assert spec.knots.size == spec.p + spec.degree + 1
        np.testing.assert_array_equal(spec.knots[:4], -1.0)
        np.testing.assert_array_equal(spec.knots[-4:], 1.0)


class TestActivation:
    @pytest.mark.parametrize("family", list(ActivationFamily))
    def test_derivatives_match_finite_differences(self, family):
        spec = ActivationSpec(family)
        u = np.linspace(-4.0, 4.0, 81)
        h = 1e-5
        s, ds, d2s = eval_activation_jet(spec, u)
        up, dup, _ = eval_activation_jet(spec, u + h)
        down, ddown, _ = eval_activation_jet(spec, u - h)
        np.testing.assert_allclose(ds, (up - down) / (2 * h), atol=1e-9)
        np.testing.assert_allclose(d2s, (dup - ddown) / (2 * h), atol=1e-9)

    def test_scalar_input_returns_floats(self):
        s, ds, d2s = eval_activation_jet(ActivationSpec(ActivationFamily.TANH), 0.0)
        assert (s, ds, d2s) == (0.0, 1.0, 0.0)

    def test_unknown_activation(self):
        with pytest.raises(ConfigurationError):
            ActivationSpec("relu")


class TestBoundConstants:
    def test_cubic_tanh(self):
        bounds = bound_constants(BasisSpec(BasisFamily.CUBIC_BSPLINE, 8), ActivationSpec())
        assert bounds.smooth
        assert 0.0 < bounds.b_bound <= 1.0
        assert bounds.sigma_bound == 1.0
        assert bounds.sigma1_bound == 1.0
        assert bounds.sigma2_bound == pytest.approx(4.0 / (3.0 * math.sqrt(3.0)))

    def test_hat_has_no_second_derivative_bound(self):
        bounds = bound_constants(BasisSpec(BasisFamily.HAT, 8), ActivationSpec())
        assert not bounds.smooth
        assert bounds.violations == ("b2_bound",)
        assert bounds.to_dict()["b2_bound"] is None
        assert bounds.b_bound == 1.0

    def test_constants_dominate_dense_resampling(self):
        basis = BasisSpec(BasisFamily.CUBIC_BSPLINE, 6)
        bounds = bound_constants(basis, ActivationSpec())
        v = np.random.default_rng(42).uniform(-1.0, 1.0, size=200_000)
        values, first, second = eval_basis_jet(basis, v)
        assert np.abs(values).max() <= bounds.b_bound
        assert np.abs(first).max() <= bounds.b1_bound
        assert np.abs(second).max() <= bounds.b2_bound

    def test_needs_dense_grid(self):
        with pytest.raises(ConfigurationError):
            bound_constants(BasisSpec(), ActivationSpec(), points=100)
