"""Self-checks of the numerical core, run as one report.

Every check compares the implementation against an independent oracle
(finite differences, closed forms recomputed here, brute-force neighbouring
datasets) and records the measured value next to its limit. Failures are
report entries, never exceptions.
"""

from __future__ import annotations

import logging
import math
import tempfile
import time
from collections.abc import Callable
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .basis import (
    ActivationFamily,
    ActivationSpec,
    BasisFamily,
    BasisSpec,
    bound_constants,
    eval_basis,
)
from .data import SampleSet, SyntheticConfig, gen_synthetic, read_idx, write_idx
from .dpgd import (
    DPConfig,
    audit_sensitivity,
    ball_constants,
    calibrate_noise,
    model_bounds,
    project_ball,
    train_dpgd,
)
from .gd import GDConfig, diagnose_trajectory, train_gd
from .loss import LOGISTIC
from .model import (
    DEFAULT_HESSIAN_MAX_PARAMS,
    ModelSpec,
    ParamVector,
    forward,
    grad_f,
    hessian_f,
    init_params,
)
from .ntk import estimate_margin, ntk_features

logger = logging.getLogger(__name__)

GradFn = Callable[[ModelSpec, ParamVector, np.ndarray], ParamVector]


class Level(str, Enum):
    FAST = "fast"
    FULL = "full"


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float | None
    limit: float | None
    detail: str = ""


@dataclass
class VerificationReport:
    level: Level
    checks: list[CheckResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def add(
        self,
        name: str,
        measured: float | None,
        limit: float | None,
        passed: bool,
        detail: str = "",
    ) -> None:
        self.checks.append(CheckResult(name, bool(passed), measured, limit, detail))
        if passed:
            logger.info("%s: ok (measured=%s, limit=%s)", name, measured, limit)
        else:
            logger.warning("%s: FAIL (measured=%s, limit=%s)", name, measured, limit)

    def to_dict(self) -> dict:
        return {
            "level": self.level.value,
            "passed": self.passed,
            "seconds": self.seconds,
            "checks": [asdict(c) for c in self.checks],
        }


def _random_instance(rng: np.random.Generator, max_params: int | None = None):
    while True:
        d = int(rng.integers(1, 9))
        m = int(rng.integers(1, 9))
        p = int(rng.integers(4, 9))
        if max_params is None or (d + 1) * m * p <= max_params:
            break
    activation = ActivationFamily.TANH if rng.random() < 0.5 else ActivationFamily.SIGMOID
    spec = ModelSpec(d=d, m=m, p=p, basis=BasisFamily.CUBIC_BSPLINE, activation=activation)
    params = init_params(spec, int(rng.integers(2**31)))
    x = rng.uniform(-1.0, 1.0, size=d) / math.sqrt(d)
    return spec, params, x


def finite_difference_grad(
    spec: ModelSpec, params: ParamVector, x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    """Central differences of f in ParamVector flattening order."""
    flat = params.flatten()
    out = np.empty_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        f_up = forward(spec, ParamVector.from_flat(spec, up), x)
        f_down = forward(spec, ParamVector.from_flat(spec, down), x)
        out[i] = (f_up - f_down) / (2.0 * h)
    return out


def finite_difference_hessian(
    spec: ModelSpec, params: ParamVector, x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Central differences of the analytic gradient."""
    flat = params.flatten()
    cols = []
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        g_up = grad_f(spec, ParamVector.from_flat(spec, up), x).flatten()
        g_down = grad_f(spec, ParamVector.from_flat(spec, down), x).flatten()
        cols.append((g_up - g_down) / (2.0 * h))
    return np.stack(cols, axis=1)


def check_gradients(
    report: VerificationReport, rng: np.random.Generator, instances: int, grad_fn: GradFn
) -> None:
    worst = 0.0
    for _ in range(instances):
        spec, params, x = _random_instance(rng)
        analytic = grad_fn(spec, params, x).flatten()
        fd = finite_difference_grad(spec, params, x)
        err = float(np.abs(analytic - fd).max()) / max(float(np.abs(fd).max()), 1e-8)
        worst = max(worst, err)
    report.add("gradient_finite_difference", worst, 1e-5, worst < 1e-5, f"{instances} instances")


def check_hessians(
    report: VerificationReport,
    rng: np.random.Generator,
    instances: int,
    max_params: int = DEFAULT_HESSIAN_MAX_PARAMS,
) -> None:
    worst = asym = cc = 0.0
    for _ in range(instances):
        spec, params, x = _random_instance(rng, max_params=200)
        dense = hessian_f(spec, params, x, max_params).assemble()
        fd = finite_difference_hessian(spec, params, x)
        worst = max(worst, float(np.abs(dense - fd).max()))
        asym = max(asym, float(np.abs(dense - dense.T).max()))
        cc = max(cc, float(np.abs(dense[spec.n_a :, spec.n_a :]).max()))
    report.add("hessian_finite_difference", worst, 1e-4, worst < 1e-4, f"{instances} instances")
    report.add("hessian_symmetric", asym, 0.0, asym == 0.0)
    report.add("hessian_cc_block_zero", cc, 0.0, cc == 0.0)


def check_partition_of_unity(report: VerificationReport) -> None:
    grid = np.linspace(-1.0, 1.0, 10_001)
    worst = 0.0
    for family in BasisFamily:
        for p in range(4, 12):
            total = eval_basis(BasisSpec(family, p), grid).sum(axis=-1)
            worst = max(worst, float(np.abs(total - 1.0).max()))
    report.add("partition_of_unity", worst, 1e-12, worst <= 1e-12)


def check_bound_domination(report: VerificationReport) -> None:
    """Reported constants dominate a freshly shifted re-sampling."""
    worst = 0.0
    for family in BasisFamily:
        for activation in ActivationFamily:
            basis, act = BasisSpec(family, 8), ActivationSpec(activation)
            reported = bound_constants(basis, act)
            fresh = bound_constants(basis, act, points=30_011, offset=0.37)
            for name in ("b_bound", "b1_bound", "b2_bound", "sigma1_bound", "sigma2_bound"):
                ours, theirs = getattr(reported, name), getattr(fresh, name)
                if math.isfinite(ours):
                    worst = max(worst, (theirs - ours) / ours)
    report.add("bound_constants_dominate", worst, 1e-12, worst <= 1e-12)


def check_calibration(report: VerificationReport) -> None:
    spec = ModelSpec(d=10, m=32, p=8)
    b = model_bounds(spec)
    worst = 0.0
    for n, T, eps, delta in ((1000, 64, 2.0, 1e-3), (2000, 100, 0.5, 5e-4), (200, 16, 8.0, 1e-2)):
        calib = calibrate_noise(DPConfig(epsilon=eps, delta=delta, T=T), spec, n)
        base = T * (1.0 + math.log(2.0 * T / delta) / eps) / (n**2 * eps)
        radius = 4.0 * spec.p**0.5 + (2.0 * math.log(2.0 / delta) ** 0.5 + 1.0) / spec.m**0.5
        lip = LOGISTIC.d1_bound * b.sigma1_bound * b.b1_bound * b.b_bound
        c1 = 8.0 * (lip * spec.p * radius) ** 2
        c2 = 8.0 * spec.p * (LOGISTIC.d1_bound * b.b_bound) ** 2
        pairs = [
            (calib.sigma_tilde2, base),
            (calib.C1, c1),
            (calib.C2, c2),
            (calib.sigma1_2, c1 * base),
            (calib.sigma2_2, c2 * base),
            (calib.sigma1_2 / calib.sigma2_2, c1 / c2),
        ]
        worst = max(worst, max(abs(ours - ref) / abs(ref) for ours, ref in pairs))
    report.add("calibration_identities", worst, 1e-12, worst < 1e-12)


def check_projection(report: VerificationReport, rng: np.random.Generator) -> None:
    worst = 0.0
    for _ in range(200):
        dim = int(rng.integers(1, 50))
        center = rng.standard_normal(dim)
        v = center + rng.standard_normal(dim) * rng.uniform(0.1, 10.0)
        R = float(rng.uniform(0.1, 5.0))
        once = project_ball(v, center, R)
        twice = project_ball(once, center, R)
        outside = float(np.linalg.norm(once - center)) - R
        worst = max(worst, outside, float(np.abs(twice - once).max()))
    report.add("projection_idempotent_in_ball", worst, 1e-12, worst <= 1e-12)


def _small_task(n: int, seed: int) -> tuple[SampleSet, SampleSet]:
    full = gen_synthetic(SyntheticConfig(n=2 * n, d=4, seed=seed))
    return full.subset(np.arange(n)), full.subset(np.arange(n, 2 * n))


def check_dpgd(report: VerificationReport, n: int, m: int, T: int) -> None:
    train, test = _small_task(n, seed=11)
    spec = ModelSpec(d=train.d, m=m, p=8)
    # the noisy-increase bound needs eta <= 1/rho on the projection balls
    theory = ball_constants(spec, init_params(spec, 3), 1.0)
    cfg = DPConfig(epsilon=2.0, T=T, eta=theory.max_step, seed_init=3, seed_noise=4)
    final, log, _ = train_dpgd(spec, train, test, cfg)

    outside = max(
        max(r.a_drift - cfg.R1 for r in log.rows),
        max(r.c_drift - cfg.R2 for r in log.rows),
    )
    report.add("dpgd_iterates_in_balls", outside, 1e-9, outside <= 1e-9)

    loss = log.column("train_loss")
    noise = log.column("noise_norm")
    slack = np.diff(loss) - 0.5 * cfg.eta * noise[1:] ** 2
    worst = float(slack.max()) if slack.size else 0.0
    report.add("dpgd_noisy_increase", worst, 1e-6, worst <= 1e-6, f"eta={cfg.eta:.3g}")

    ratio = float((log.column("grad_norm") ** 2 / (2.0 * theory.rho_bar * loss)).max())
    report.add("gradient_self_bound", ratio, 1.0, ratio <= 1.0 + 1e-9)

    again, _, _ = train_dpgd(spec, train, test, cfg)
    same = np.array_equal(final.flatten(), again.flatten())
    report.add("dpgd_deterministic", float(not same), 0.0, same)


def check_descent(
    report: VerificationReport,
    name: str,
    train: SampleSet,
    m: int,
    T: int,
    eta: float | None,
) -> None:
    """GD descent and c-drift; ``eta=None`` uses the certified step 1/rho."""
    spec = ModelSpec(d=train.d, m=m, p=8)
    if eta is None:
        eta = ball_constants(spec, init_params(spec, 5), 1.0).max_step
    _, log = train_gd(spec, train, None, GDConfig(eta=eta, T=T, seed=5))
    diag = diagnose_trajectory(log, b_bound=model_bounds(spec).b_bound)
    detail = f"eta={eta:.3g}, T={T}"
    report.add(
        f"{name}_descent", diag.max_loss_increase, 1e-12, diag.monotone_violations == 0, detail
    )
    residual = diag.c_drift_residual
    report.add(f"{name}_c_drift", residual, 1e-9, residual <= 1e-9, detail)


def check_sensitivity(report: VerificationReport, n: int, m: int, trials: int) -> None:
    train, _ = _small_task(n, seed=31)
    spec = ModelSpec(d=train.d, m=m, p=8)
    delta = 1.0 / n
    params0 = init_params(spec, 7)
    rng = np.random.default_rng(8)
    # a point strictly inside both balls
    step_a = rng.standard_normal(params0.a.shape)
    step_c = rng.standard_normal(params0.c.shape)
    params = ParamVector(
        params0.a + 0.5 * step_a / np.linalg.norm(step_a),
        params0.c + 0.5 * step_c / np.linalg.norm(step_c),
    )
    audit = audit_sensitivity(spec, train, params, 1.0, delta, params0=params0, trials=trials)
    worst = max(audit.max_ratio_a, audit.max_ratio_c)
    report.add(
        "sensitivity_audit",
        worst,
        1.0,
        audit.violations == 0,
        f"{trials} neighbours, init event={audit.init_norm_event}",
    )


def check_curvature_scaling(
    report: VerificationReport, seeds: int, max_params: int = DEFAULT_HESSIAN_MAX_PARAMS
) -> None:
    ratios = []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1.0, 1.0, size=1)
        norms = []
        for m in (16, 64, 256):
            spec = ModelSpec(d=1, m=m, p=4)
            hess = hessian_f(spec, init_params(spec, seed), x, max_params)
            norms.append(hess.spectral_norm())
        ratios += [norms[0] / norms[1], norms[1] / norms[2]]
    mean = float(np.mean(ratios))
    report.add("curvature_scaling", mean, 2.0, 1.4 <= mean <= 2.9, "ratio range [1.4, 2.9]")


def check_margin(report: VerificationReport) -> None:
    two = estimate_margin(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1.0, -1.0]))
    err = max(abs(two.gamma_hat - 1.0), float(np.abs(two.theta0 - np.array([1.0, 0.0])).max()))
    report.add("margin_two_point", err, 1e-12, err <= 1e-12)

    train, _ = _small_task(60, seed=41)
    spec = ModelSpec(d=train.d, m=4, p=5)
    feats = ntk_features(spec, init_params(spec, 9), train)
    result = estimate_margin(feats, train.y, iters=300)
    honest = abs(result.gamma_hat - float((train.y * (feats.phi @ result.theta0)).min()))
    report.add("margin_honesty", honest, 1e-12, honest <= 1e-12)


def check_idx(report: VerificationReport, rng: np.random.Generator) -> None:
    array = rng.integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
    with tempfile.TemporaryDirectory() as tmp:
        back = read_idx(write_idx(Path(tmp) / "sample.idx", array))
    same = back.shape == array.shape and np.array_equal(back, array)
    report.add("idx_roundtrip", float(not same), 0.0, same)


def run_verification(
    level: Level | str = Level.FAST,
    grad_fn: GradFn = grad_f,
    hessian_max_params: int = DEFAULT_HESSIAN_MAX_PARAMS,
) -> VerificationReport:
    """Run the check suite; FULL adds the desk-scale reproductions.

    ``grad_fn`` replaces the analytic gradient under test. ``hessian_max_params``
    is the dense-Hessian guard used by the Hessian checks.
    """
    level = Level(level)
    full = level is Level.FULL
    report = VerificationReport(level)
    start = time.perf_counter()
    rng = np.random.default_rng(20240601)

    check_gradients(report, rng, 50 if full else 10, grad_fn)
    check_hessians(report, rng, 20 if full else 4, hessian_max_params)
    check_partition_of_unity(report)
    check_bound_domination(report)
    check_calibration(report)
    check_projection(report, rng)
    check_idx(report, rng)
    check_margin(report)
    if full:
        check_dpgd(report, n=200, m=32, T=50)
        check_descent(report, "gd_certified", _small_task(200, seed=21)[0], m=32, T=50, eta=None)
        check_sensitivity(report, n=200, m=32, trials=100)
        check_curvature_scaling(report, seeds=20, max_params=hessian_max_params)
        synthetic = gen_synthetic(SyntheticConfig(n=2000, d=10, s=4.0, sigma_xi2=0.1, k=40))
        check_descent(report, "gd_unit_step", synthetic, m=32, T=256, eta=1.0)
    else:
        check_dpgd(report, n=60, m=8, T=10)
        check_descent(report, "gd_certified", _small_task(60, seed=21)[0], m=8, T=10, eta=None)
        check_sensitivity(report, n=50, m=8, trials=20)

    report.seconds = time.perf_counter() - start
    logger.info(
        "verification %s: %d checks, %d failed",
        level.value,
        len(report.checks),
        len(report.failures),
    )
    return report
