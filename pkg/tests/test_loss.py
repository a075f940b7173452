import math

import numpy as np
import pytest

from src.data import SampleSet
from src.errors import InputError
from src.loss import (
    LOGISTIC,
    accuracy,
    empirical_risk,
    evaluate,
    gradient_norm,
    loss_gradient,
    loss_jet,
)
from src.model import ParamVector


class TestLossJet:
    def test_values_at_zero(self):
        value, d1, d2 = loss_jet(0.0)
        assert value == pytest.approx(math.log(2.0))
        assert d1 == pytest.approx(-0.5)
        assert d2 == pytest.approx(0.25)

    def test_stable_for_large_margins(self):
        value, d1, _ = loss_jet(np.array([1000.0, -1000.0]))
        assert np.isfinite(value).all()
        assert value[0] == pytest.approx(0.0, abs=1e-300)
        assert value[1] == pytest.approx(1000.0)
        np.testing.assert_allclose(d1, [0.0, -1.0], atol=1e-300)

    def test_self_bounded(self):
        u = np.linspace(-30.0, 30.0, 601)
        value, d1, d2 = loss_jet(u)
        assert (np.abs(d1) <= LOGISTIC.alpha * value + 1e-15).all()
        assert (np.abs(d1) <= LOGISTIC.d1_bound).all()
        assert (d2 <= LOGISTIC.d2_bound).all()


class TestRisk:
    def test_gradient_matches_directional_difference(self, small_spec, small_params, small_task):
        train, _ = small_task
        _, grad = loss_gradient(small_spec, small_params, train)
        direction = np.random.default_rng(42).standard_normal(small_spec.n_params)
        h = 1e-6
        base = small_params.flatten()
        up = ParamVector.from_flat(small_spec, base + h * direction)
        down = ParamVector.from_flat(small_spec, base - h * direction)
        numeric = (
            empirical_risk(small_spec, up, train) - empirical_risk(small_spec, down, train)
        ) / (2 * h)
        assert grad.flatten() @ direction == pytest.approx(numeric, rel=1e-5, abs=1e-8)

    def test_chunking_does_not_change_results(self, small_spec, small_params, small_task):
        train, _ = small_task
        loss_full, grad_full = loss_gradient(small_spec, small_params, train)
        loss_chunked, grad_chunked = loss_gradient(small_spec, small_params, train, batch_size=7)
        assert loss_chunked == pytest.approx(loss_full, rel=1e-12)
        np.testing.assert_allclose(
            grad_chunked.flatten(), grad_full.flatten(), rtol=1e-10, atol=1e-14
        )

    def test_loss_matches_empirical_risk(self, small_spec, small_params, small_task):
        train, _ = small_task
        loss, _ = loss_gradient(small_spec, small_params, train)
        assert loss == pytest.approx(empirical_risk(small_spec, small_params, train), rel=1e-12)

    def test_ties_count_as_errors(self, small_spec, small_params, small_task):
        train, _ = small_task
        flat = ParamVector(small_params.a, np.zeros_like(small_params.c))
        assert accuracy(small_spec, flat, train) == 0.0
        loss, acc = evaluate(small_spec, flat, train)
        assert loss == pytest.approx(math.log(2.0))
        assert acc == 0.0

    def test_empty_dataset(self, small_spec, small_params):
        empty = SampleSet(np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(InputError):
            empirical_risk(small_spec, small_params, empty)

    def test_gradient_norm(self):
        grad = ParamVector(np.array([[3.0]]), np.array([[4.0]]))
        assert gradient_norm(grad) == 5.0
