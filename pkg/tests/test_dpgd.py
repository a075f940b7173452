"""Noise calibration, projection, the DP-GD trainer and the privacy ledger."""

import math

import numpy as np
import pytest

from src.basis import BoundConstants
from src.dpgd import (
    DPConfig,
    ProjectionBalls,
    audit_sensitivity,
    ball_constants,
    calibrate_noise,
    dpgd_step,
    init_norm_event,
    model_bounds,
    noise_generator,
    project_ball,
    rdp_ledger,
    sensitivities,
    sigma_tilde2,
    theory_constants,
    train_dpgd,
)
from src.errors import ConfigurationError, InputError, NumericalError
from src.model import ModelSpec, ParamVector, grad_batch, init_params

UNIT_BOUNDS = BoundConstants(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


class TestConfig:
    def test_default_delta_is_one_over_n(self):
        assert DPConfig().resolve(1000).delta == pytest.approx(1e-3)

    def test_explicit_delta_is_kept(self):
        assert DPConfig(delta=1e-5).resolve(1000).delta == 1e-5

    def test_default_delta_needs_two_samples(self):
        with pytest.raises(ConfigurationError):
            DPConfig().resolve(1)

    @pytest.mark.parametrize(
        "kwargs", [{"epsilon": 0.0}, {"delta": 1.5}, {"T": 0}, {"R1": 0.0}, {"eta": -1.0}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            DPConfig(**kwargs)


class TestCalibration:
    def test_sigma_tilde2_example(self):
        n, T, eps, delta = 1000, 64, 2.0, 1e-3
        expected = T * (1.0 + math.log(2.0 * T / delta) / eps) / (n**2 * eps)
        assert sigma_tilde2(eps, delta, T, n) == pytest.approx(expected, rel=1e-12)
        assert sigma_tilde2(eps, delta, T, n) == pytest.approx(2.2016e-4, rel=1e-4)

    def test_c_sensitivity_with_unit_bounds(self):
        spec = ModelSpec(d=10, m=32, p=8)
        delta_a, delta_c = sensitivities(spec, 1000, 1.0, 1e-3, UNIT_BOUNDS)
        assert delta_c == pytest.approx(2.0 * math.sqrt(8) / 1000, rel=1e-12)
        radius = 4.0 * math.sqrt(8) + (2.0 * math.sqrt(math.log(2e3)) + 1.0) / math.sqrt(32)
        assert delta_a == pytest.approx(2.0 * 8 / 1000 * radius, rel=1e-12)

    def test_variances_scale_the_base(self):
        spec = ModelSpec(d=10, m=32, p=8)
        calib = calibrate_noise(DPConfig(epsilon=2.0, delta=1e-3, T=64), spec, 1000)
        assert calib.sigma1_2 == pytest.approx(calib.C1 * calib.sigma_tilde2, rel=1e-12)
        assert calib.sigma2_2 == pytest.approx(calib.C2 * calib.sigma_tilde2, rel=1e-12)
        b = model_bounds(spec)
        assert calib.C2 == pytest.approx(8.0 * spec.p * b.b_bound**2, rel=1e-12)

    def test_both_blocks_share_one_privacy_rate(self):
        spec = ModelSpec(d=5, m=16, p=6)
        calib = calibrate_noise(DPConfig(epsilon=1.0, T=30), spec, 400)
        expected = 1.0 / (4.0 * 400**2 * calib.sigma_tilde2)
        assert calib.delta_a**2 / (2 * calib.sigma1_2) == pytest.approx(expected, rel=1e-10)
        assert calib.delta_c**2 / (2 * calib.sigma2_2) == pytest.approx(expected, rel=1e-10)

    def test_noise_shrinks_with_n(self):
        spec = ModelSpec(d=10, m=32, p=8)
        cfg = DPConfig(epsilon=2.0, delta=1e-3, T=64)
        small = calibrate_noise(cfg, spec, 500)
        large = calibrate_noise(cfg, spec, 5000)
        assert large.sigma2_2 == pytest.approx(small.sigma2_2 / 100.0, rel=1e-12)


class TestTheoryConstants:
    def test_unit_bounds(self):
        theory = theory_constants(UNIT_BOUNDS, ModelSpec(d=3, m=16, p=4), 2.0, 1.0)
        assert theory.grad_bound == pytest.approx(math.sqrt(8.0))
        assert theory.kappa_bar == pytest.approx(20.0)
        assert theory.rho_bar == pytest.approx(13.0)
        assert theory.max_step == pytest.approx(1.0 / 13.0)

    def test_hat_basis_has_no_certified_step(self):
        spec = ModelSpec(d=2, m=4, p=5, basis="hat")
        theory = ball_constants(spec, init_params(spec, 0), 1.0)
        assert math.isinf(theory.rho_bar)
        assert theory.max_step == 0.0

    def test_gradient_bound_dominates_sampled_gradients(self, small_spec, small_params):
        theory = ball_constants(small_spec, small_params, 1.0)
        X = np.random.default_rng(42).uniform(-1.0, 1.0, size=(200, 3)) / math.sqrt(3)
        grad_a, grad_c = grad_batch(small_spec, small_params, X)
        norms = np.sqrt((grad_a**2).sum(axis=(1, 2)) + (grad_c**2).sum(axis=(1, 2)))
        assert norms.max() <= theory.grad_bound


class TestProjection:
    def test_outside_point_is_scaled_to_the_sphere(self):
        np.testing.assert_allclose(project_ball(np.array([3.0, 4.0]), np.zeros(2), 1.0), [0.6, 0.8])

    def test_inside_point_is_unchanged(self):
        v = np.array([0.1, -0.2])
        np.testing.assert_array_equal(project_ball(v, np.zeros(2), 1.0), v)

    def test_matrix_shapes(self):
        center = np.ones((2, 3))
        out = project_ball(center + 5.0, center, 2.0)
        assert out.shape == (2, 3)
        assert np.linalg.norm(out - center) == pytest.approx(2.0)

    def test_rejects_bad_radius_and_shapes(self):
        with pytest.raises(InputError):
            project_ball(np.zeros(2), np.zeros(2), 0.0)
        with pytest.raises(InputError):
            project_ball(np.zeros(2), np.zeros(3), 1.0)


class TestNoise:
    def test_generator_is_keyed_by_iteration(self):
        first = noise_generator(5, 3).standard_normal(4)
        again = noise_generator(5, 3).standard_normal(4)
        other = noise_generator(5, 4).standard_normal(4)
        np.testing.assert_array_equal(first, again)
        assert not np.array_equal(first, other)

    def test_step_without_noise_is_projected_gd(self, small_spec, small_params, small_task):
        train, _ = small_task
        calib = calibrate_noise(DPConfig(T=10), small_spec, train.n)
        balls = ProjectionBalls(small_params, 1.0, 1.0)
        stepped, norms = dpgd_step(small_spec, small_params, train, 0.1, calib, None, balls)
        assert norms == (0.0, 0.0)
        assert np.linalg.norm(stepped.a - small_params.a) <= 1.0 + 1e-12

    def test_non_finite_step_names_the_iteration(self, small_spec, small_params, small_task):
        train, _ = small_task
        calib = calibrate_noise(DPConfig(T=10), small_spec, train.n)
        balls = ProjectionBalls(small_params, 1.0, 1.0)
        c = small_params.c.copy()
        c[0, 0] = np.nan
        broken = ParamVector(small_params.a, c)
        with pytest.raises(NumericalError) as info:
            dpgd_step(small_spec, broken, train, 0.1, calib, None, balls, iteration=4)
        assert info.value.iteration == 4

    def test_noise_norms_match_variances(self, small_task):
        train, test = small_task
        spec = ModelSpec(d=3, m=8, p=8)
        cfg = DPConfig(epsilon=1.0, T=40, eta=0.01, seed_noise=11)
        _, log, calib = train_dpgd(spec, train, test, cfg)
        squared = log.column("noise_norm")[1:] ** 2
        mean = calib.sigma1_2 * spec.n_a + calib.sigma2_2 * spec.m * spec.p
        var = 2.0 * (calib.sigma1_2**2 * spec.n_a + calib.sigma2_2**2 * spec.m * spec.p)
        assert abs(squared.mean() - mean) <= 4.0 * math.sqrt(var / squared.size)


class TestTrainDPGD:
    @pytest.fixture
    def run(self, small_spec, small_task):
        train, test = small_task
        cfg = DPConfig(epsilon=2.0, T=12, eta=0.5, R1=0.8, R2=0.6, seed_init=1, seed_noise=2)
        return train_dpgd(small_spec, train, test, cfg)

    def test_iterates_stay_in_balls(self, run):
        _, log, _ = run
        assert log.projected
        assert max(r.a_drift for r in log.rows) <= 0.8 + 1e-9
        assert max(r.c_drift for r in log.rows) <= 0.6 + 1e-9

    def test_first_row_has_no_noise(self, run):
        _, log, _ = run
        assert log.rows[0].noise_norm == 0.0
        assert all(r.noise_norm > 0.0 for r in log.rows[1:])

    def test_average_test_loss_excludes_last_iterate(self, run):
        _, log, _ = run
        expected = log.column("test_loss")[:-1].mean()
        assert log.extras["average_test_loss"] == pytest.approx(expected, rel=1e-12)

    def test_extras(self, run, small_task):
        _, log, calib = run
        train, _ = small_task
        assert log.extras["delta"] == pytest.approx(1.0 / train.n)
        assert log.extras["init_norm_event"] is True
        assert calib.n == train.n

    def test_deterministic(self, run, small_spec, small_task):
        final, _, _ = run
        train, test = small_task
        cfg = DPConfig(epsilon=2.0, T=12, eta=0.5, R1=0.8, R2=0.6, seed_init=1, seed_noise=2)
        again, _, _ = train_dpgd(small_spec, train, test, cfg)
        np.testing.assert_array_equal(final.flatten(), again.flatten())

    def test_without_noise(self, small_spec, small_task):
        train, test = small_task
        cfg = DPConfig(T=5, eta=0.5)
        _, log, _ = train_dpgd(small_spec, train, test, cfg, add_noise=False)
        assert not log.column("noise_norm").any()
        assert log.extras["add_noise"] is False

    def test_dimension_mismatch(self, small_task):
        train, test = small_task
        with pytest.raises(InputError):
            train_dpgd(ModelSpec(d=4, m=2, p=4), train, test, DPConfig(T=2))


class TestLedger:
    def test_chain_at_the_stated_order(self):
        cfg = DPConfig(epsilon=2.0, delta=1e-3, T=64)
        calib = calibrate_noise(cfg, ModelSpec(d=10, m=32, p=8), 1000)
        ledger = rdp_ledger(cfg, calib)
        log2d = math.log(2.0 / 1e-3)
        log2td = math.log(2.0 * 64 / 1e-3)
        assert ledger.order == pytest.approx(1.0 + 2.0 * log2d / 2.0)
        assert ledger.claimed_per_block == pytest.approx(2.0 / (4 * 64))
        # per-block RDP implied by the calibrated variances
        rate = 2.0 / (4 * 64 * (1.0 + log2td / 2.0))
        assert ledger.per_block_rdp == pytest.approx(ledger.order * rate, rel=1e-10)
        expected = 2.0 * (2.0 + 2.0 * log2d) / (2.0 * (2.0 + log2td)) + 1.0
        assert ledger.epsilon_total == pytest.approx(expected, rel=1e-10)

    def test_chain_closes_only_for_long_runs(self):
        # closing at the stated order needs T >= 2/delta
        spec = ModelSpec(d=10, m=32, p=8)
        short = DPConfig(epsilon=2.0, delta=1e-2, T=64)
        long = DPConfig(epsilon=2.0, delta=1e-2, T=400)
        assert not rdp_ledger(short, calibrate_noise(short, spec, 1000)).closes
        assert rdp_ledger(long, calibrate_noise(long, spec, 1000)).closes

    def test_best_order_is_never_worse(self):
        cfg = DPConfig(epsilon=0.5, delta=1e-4, T=100)
        ledger = rdp_ledger(cfg, calibrate_noise(cfg, ModelSpec(d=10, m=32, p=8), 2000))
        assert ledger.epsilon_best <= ledger.epsilon_total

    def test_rejects_foreign_calibration(self):
        spec = ModelSpec(d=10, m=32, p=8)
        calib = calibrate_noise(DPConfig(T=64, delta=1e-3), spec, 1000)
        with pytest.raises(ConfigurationError):
            rdp_ledger(DPConfig(T=65, delta=1e-3), calib)


class TestSensitivityAudit:
    def test_no_violations_inside_the_balls(self, small_spec, small_task):
        train, _ = small_task
        params0 = init_params(small_spec, 7)
        params = ParamVector(params0.a + 0.1, params0.c + 0.05)
        audit = audit_sensitivity(
            small_spec, train, params, 1.0, 1.0 / train.n, params0=params0, trials=30
        )
        assert audit.violations == 0
        assert 0.0 < audit.max_ratio_c <= 1.0
        assert audit.init_norm_event is True

    def test_rejects_points_outside_the_c_ball(self, small_spec, small_task):
        train, _ = small_task
        params0 = init_params(small_spec, 7)
        params = ParamVector(params0.a, params0.c + 1.0)
        with pytest.raises(InputError):
            audit_sensitivity(small_spec, train, params, 1.0, 0.01, params0=params0, trials=1)

    def test_init_norm_event(self, small_spec):
        params0 = init_params(small_spec, 0)
        assert init_norm_event(small_spec, params0, 1e-3)
        huge = ParamVector(params0.a, params0.c * 100.0)
        assert not init_norm_event(small_spec, huge, 1e-3)
