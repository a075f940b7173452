"""Differentially private projected gradient descent.

Each iteration perturbs both gradient blocks with fresh Gaussian noise and
projects the result back onto Euclidean balls around the initialization:

    a+ = Proj_{B(a(0), R1)}(a - eta * (grad_a + b1)),   b1 ~ N(0, sigma1^2 I)
    c+ = Proj_{B(c(0), R2)}(c - eta * (grad_c + b2)),   b2 ~ N(0, sigma2^2 I)

Sensitivity is controlled by the projection, not by clipping. Noise for
iteration k comes from a generator keyed by (seed_noise, k), so a run is
reproducible regardless of how sweeps schedule it.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, replace
from functools import lru_cache

import numpy as np

from .basis import BoundConstants, bound_constants
from .data import SampleSet
from .errors import ConfigurationError, InputError, NumericalError
from .gd import Recorder, TrajectoryLog
from .loss import DEFAULT_BATCH_SIZE, LOGISTIC, LossSpec, loss_gradient
from .model import ModelSpec, ParamVector, init_params

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DPConfig:
    """Privacy budget and optimizer settings; ``delta=None`` means 1/n."""

    epsilon: float = 2.0
    delta: float | None = None
    T: int = 100
    eta: float = 1.0
    R1: float = 1.0
    R2: float = 1.0
    seed_init: int = 0
    seed_noise: int = 0
    record_every: int = 1

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigurationError(f"epsilon must be positive, got {self.epsilon}")
        if self.delta is not None and not 0.0 < self.delta < 1.0:
            raise ConfigurationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.T < 1 or self.record_every < 1:
            raise ConfigurationError(f"need T >= 1 and record_every >= 1 (got {self})")
        if not (self.eta > 0 and self.R1 > 0 and self.R2 > 0):
            raise ConfigurationError(f"eta, R1 and R2 must be positive (got {self})")

    def resolve(self, n: int) -> DPConfig:
        """Fill in the default delta = 1/n."""
        if self.delta is not None:
            return self
        if n < 2:
            raise ConfigurationError(f"default delta = 1/n needs n >= 2, got n={n}")
        return replace(self, delta=1.0 / n)


@dataclass(frozen=True)
class NoiseCalibration:
    epsilon: float
    delta: float
    T: int
    n: int
    sigma_tilde2: float
    C1: float
    C2: float
    sigma1_2: float
    sigma2_2: float
    delta_a: float
    delta_c: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class TheoryConstants:
    """Explicit smoothness constants for the loss landscape near a given c.

    ``grad_bound`` bounds ||grad f(x)|| for every ||x|| <= 1, ``kappa_bar``
    gives lambda_min(hess L_S) >= -kappa_bar / sqrt(m) * L_S, and
    ``rho_bar`` = grad_bound^2 + kappa_bar / sqrt(m) gives both
    ||grad L_S||^2 <= 2 rho_bar L_S and the admissible step 1 / rho_bar.
    """

    grad_bound: float
    kappa_bar: float
    rho_bar: float

    @property
    def max_step(self) -> float:
        return 1.0 / self.rho_bar

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ProjectionBalls:
    center: ParamVector
    R1: float
    R2: float


@lru_cache(maxsize=32)
def model_bounds(spec: ModelSpec) -> BoundConstants:
    """BoundConstants of the model's basis and activation (cached per spec)."""
    return bound_constants(spec.basis_spec, spec.activation_spec)


def _radius_term(spec: ModelSpec, R2: float, delta: float) -> float:
    # ||c|| / sqrt(m) on the event ||c(0)|| <= 4 sqrt(pm) + 2 sqrt(log(2/delta))
    spread = 2.0 * math.sqrt(math.log(2.0 / delta)) + R2
    return 4.0 * math.sqrt(spec.p) + spread / math.sqrt(spec.m)


def sensitivities(
    spec: ModelSpec,
    n: int,
    R2: float,
    delta: float,
    bounds: BoundConstants | None = None,
    loss: LossSpec = LOGISTIC,
) -> tuple[float, float]:
    """l2-sensitivities (delta_a, delta_c) of the two gradient blocks."""
    if n < 1:
        raise InputError(f"sensitivity needs n >= 1, got {n}")
    b = bounds or model_bounds(spec)
    delta_c = 2.0 * loss.d1_bound * b.b_bound * math.sqrt(spec.p) / n
    delta_a = (
        2.0 * loss.d1_bound * b.sigma1_bound * b.b1_bound * b.b_bound * spec.p / n
    ) * _radius_term(spec, R2, delta)
    return delta_a, delta_c


def sigma_tilde2(epsilon: float, delta: float, T: int, n: int) -> float:
    return T * (1.0 + math.log(2.0 * T / delta) / epsilon) / (n * n * epsilon)


def calibrate_noise(
    cfg: DPConfig,
    spec: ModelSpec,
    n: int,
    bounds: BoundConstants | None = None,
    loss: LossSpec = LOGISTIC,
) -> NoiseCalibration:
    cfg = cfg.resolve(n)
    b = bounds or model_bounds(spec)
    base = sigma_tilde2(cfg.epsilon, cfg.delta, cfg.T, n)
    lip = loss.d1_bound * b.sigma1_bound * b.b1_bound * b.b_bound
    C1 = 8.0 * lip**2 * spec.p**2 * _radius_term(spec, cfg.R2, cfg.delta) ** 2
    C2 = 8.0 * (loss.d1_bound * b.b_bound) ** 2 * spec.p
    delta_a, delta_c = sensitivities(spec, n, cfg.R2, cfg.delta, b, loss)
    return NoiseCalibration(
        epsilon=cfg.epsilon,
        delta=cfg.delta,
        T=cfg.T,
        n=n,
        sigma_tilde2=base,
        C1=C1,
        C2=C2,
        sigma1_2=C1 * base,
        sigma2_2=C2 * base,
        delta_a=delta_a,
        delta_c=delta_c,
    )


def theory_constants(
    bounds: BoundConstants,
    spec: ModelSpec,
    c_norm: float,
    c_unit_norm: float,
) -> TheoryConstants:
    """Assemble G, kappa and rho for outer coefficients with ||c|| <= c_norm
    and max_j ||c_j|| <= c_unit_norm.

    Uses |l'| <= 1 and l'' <= 1 for the logistic loss. A basis without a
    bounded second derivative yields infinite kappa and rho.
    """
    b = bounds
    p, sqrt_m = spec.p, math.sqrt(spec.m)
    grad_c = math.sqrt(p) * b.b_bound
    grad_a = b.sigma1_bound * b.b_bound * b.b1_bound * p * c_norm / sqrt_m
    grad_bound = math.hypot(grad_c, grad_a)
    curvature = b.sigma2_bound * b.b1_bound + b.sigma1_bound**2 * b.b2_bound
    kappa = b.b_bound**2 * curvature * p**1.5 * c_unit_norm
    kappa += b.sigma1_bound * b.b_bound * b.b1_bound * p
    rho = grad_bound**2 + kappa / sqrt_m
    return TheoryConstants(grad_bound=grad_bound, kappa_bar=kappa, rho_bar=rho)


def ball_constants(spec: ModelSpec, params0: ParamVector, R2: float) -> TheoryConstants:
    """TheoryConstants valid on the whole ball B(c(0), R2)."""
    c_norm = float(np.linalg.norm(params0.c)) + R2
    c_unit = float(np.linalg.norm(params0.c, axis=1).max()) + R2
    return theory_constants(model_bounds(spec), spec, c_norm, c_unit)


def init_norm_event(spec: ModelSpec, params0: ParamVector, delta: float) -> bool:
    """Whether ||c(0)|| <= 4 sqrt(pm) + 2 sqrt(log(2/delta)), the event the
    sensitivity bound of the a-block is conditioned on."""
    limit = 4.0 * math.sqrt(spec.p * spec.m) + 2.0 * math.sqrt(math.log(2.0 / delta))
    return float(np.linalg.norm(params0.c)) <= limit


def project_ball(v: np.ndarray, center: np.ndarray, R: float) -> np.ndarray:
    """Euclidean projection of ``v`` onto the ball B(center, R), any array shape."""
    if not R > 0:
        raise InputError(f"projection radius must be positive, got {R}")
    v = np.asarray(v, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if v.shape != center.shape:
        raise InputError(f"shape mismatch {v.shape} vs center {center.shape}")
    offset = v - center
    dist = float(np.linalg.norm(offset))
    if dist <= R:
        return v.copy()
    return center + (R / dist) * offset


def noise_generator(seed_noise: int, k: int) -> np.random.Generator:
    """Generator for iteration k, independent of every other iteration."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed_noise, spawn_key=(k,)))


def _noisy_update(
    params: ParamVector,
    grad: ParamVector,
    eta: float,
    calib: NoiseCalibration,
    noise_rng: np.random.Generator | None,
    balls: ProjectionBalls,
    iteration: int | None = None,
) -> tuple[ParamVector, tuple[float, float]]:
    if noise_rng is None:
        b1 = np.zeros_like(params.a)
        b2 = np.zeros_like(params.c)
    else:
        b1 = noise_rng.normal(0.0, math.sqrt(calib.sigma1_2), size=params.a.shape)
        b2 = noise_rng.normal(0.0, math.sqrt(calib.sigma2_2), size=params.c.shape)
    a = project_ball(params.a - eta * (grad.a + b1), balls.center.a, balls.R1)
    c = project_ball(params.c - eta * (grad.c + b2), balls.center.c, balls.R2)
    out = ParamVector(a, c)
    if not out.is_finite():
        raise NumericalError("non-finite parameters after DP-GD step", iteration=iteration)
    return out, (float(np.linalg.norm(b1)), float(np.linalg.norm(b2)))


def dpgd_step(
    spec: ModelSpec,
    params: ParamVector,
    data: SampleSet,
    eta: float,
    calib: NoiseCalibration,
    noise_rng: np.random.Generator | None,
    balls: ProjectionBalls,
    batch_size: int = DEFAULT_BATCH_SIZE,
    iteration: int | None = None,
) -> tuple[ParamVector, tuple[float, float]]:
    """One noisy projected step; returns the new parameters and (||b1||, ||b2||).

    ``noise_rng=None`` skips the noise (projected GD). ``iteration`` labels
    numerical errors.
    """
    _, grad = loss_gradient(spec, params, data, batch_size)
    if not grad.is_finite():
        raise NumericalError("non-finite gradient", iteration=iteration)
    return _noisy_update(params, grad, eta, calib, noise_rng, balls, iteration)


def train_dpgd(
    spec: ModelSpec,
    data_train: SampleSet,
    data_test: SampleSet | None,
    cfg: DPConfig,
    add_noise: bool = True,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> tuple[ParamVector, TrajectoryLog, NoiseCalibration]:
    """Run DP-GD for ``cfg.T`` iterations and return Theta_priv = Theta(T).

    Row k's ``noise_norm`` is the norm of the noise injected by the step that
    produced Theta(k) (0 for the initialization). ``log.extras`` carries the
    trajectory-average test loss over Theta(0..T-1) and whether the
    initialization norm event held.
    """
    if data_train.d != spec.d:
        raise InputError(f"data dimension {data_train.d} does not match model d={spec.d}")
    cfg = cfg.resolve(data_train.n)
    calib = calibrate_noise(cfg, spec, data_train.n)
    params0 = init_params(spec, cfg.seed_init)
    balls = ProjectionBalls(params0, cfg.R1, cfg.R2)

    event = init_norm_event(spec, params0, cfg.delta)
    if not event:
        logger.warning("init norm event failed: ||c(0)||=%.4g", float(np.linalg.norm(params0.c)))
    log = TrajectoryLog(eta=cfg.eta, spec=spec.to_dict(), projected=True)
    log.extras.update(
        init_norm_event=event,
        add_noise=add_noise,
        epsilon=cfg.epsilon,
        delta=cfg.delta,
    )
    rec = Recorder(spec, params0, data_train, data_test, log, cfg.record_every, batch_size)
    logger.info(
        "DP-GD: m=%d p=%d eta=%g T=%d eps=%g delta=%.3g sigma1^2=%.3g sigma2^2=%.3g",
        spec.m,
        spec.p,
        cfg.eta,
        cfg.T,
        cfg.epsilon,
        cfg.delta,
        calib.sigma1_2,
        calib.sigma2_2,
    )

    params = params0.copy()
    noise_norm = 0.0
    for k in range(cfg.T + 1):
        loss, grad = loss_gradient(spec, params, data_train, batch_size)
        rec.observe(k, k == cfg.T, params, loss, grad, noise_norm=noise_norm)
        if k < cfg.T:
            rng = noise_generator(cfg.seed_noise, k) if add_noise else None
            params, norms = _noisy_update(params, grad, cfg.eta, calib, rng, balls, k)
            noise_norm = math.hypot(*norms)

    if data_test is not None:
        early = [r.test_loss for r in log.rows if r.iter < cfg.T]
        log.extras["average_test_loss"] = float(np.mean(early))
    logger.info("DP-GD done: train_loss=%.6g", log.final.train_loss)
    return params, log, calib


# -- privacy accounting -------------------------------------------------------


@dataclass(frozen=True)
class RDPLedger:
    """The Renyi-DP chain behind the calibration, recomputed from sigma^2.

    ``per_block_rdp`` is the Gaussian-mechanism value lambda*Delta^2/(2 sigma^2)
    at the proof's order; ``claimed_per_block`` is the eps/(4T) the proof
    assigns to it. ``epsilon_total`` converts the T-fold composition back to
    (eps, delta/2)-DP at that order, ``epsilon_best`` at the optimal order.
    """

    order: float
    claimed_per_block: float
    per_block_rdp: float
    total_rdp: float
    epsilon_total: float
    best_order: float
    epsilon_best: float
    closes: bool

    def to_dict(self) -> dict:
        return asdict(self)


def rdp_ledger(cfg: DPConfig, calib: NoiseCalibration) -> RDPLedger:
    """Recompute the RDP chain for a calibration made from ``cfg``.

    Both blocks are calibrated to the same Delta^2 / sigma^2, so one rate per
    unit of order describes each Gaussian mechanism.
    """
    if cfg.T != calib.T or cfg.epsilon != calib.epsilon:
        raise ConfigurationError("calibration was not computed for this configuration")
    eps, T = cfg.epsilon, cfg.T
    log_term = math.log(2.0 / calib.delta)
    rate = calib.delta_a**2 / (2.0 * calib.sigma1_2)
    total_rate = T * (rate + calib.delta_c**2 / (2.0 * calib.sigma2_2))

    order = 1.0 + 2.0 * log_term / eps
    epsilon_total = order * total_rate + log_term / (order - 1.0)
    best_order = 1.0 + math.sqrt(log_term / total_rate)
    epsilon_best = best_order * total_rate + log_term / (best_order - 1.0)
    ledger = RDPLedger(
        order=order,
        claimed_per_block=eps / (4.0 * T),
        per_block_rdp=order * rate,
        total_rdp=order * total_rate,
        epsilon_total=epsilon_total,
        best_order=best_order,
        epsilon_best=epsilon_best,
        closes=epsilon_total <= eps * (1.0 + 1e-12),
    )
    if not ledger.closes:
        logger.info(
            "RDP chain at order %.4g gives epsilon %.4g > %.4g (best order: %.4g)",
            order,
            epsilon_total,
            eps,
            epsilon_best,
        )
    return ledger


# -- empirical sensitivity audit ----------------------------------------------


@dataclass
class SensitivityAudit:
    trials: int
    max_ratio_a: float
    max_ratio_c: float
    violations: int
    delta_a: float
    delta_c: float
    init_norm_event: bool | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def random_neighbour(data: SampleSet, rng: np.random.Generator) -> SampleSet:
    """Swap one random sample for a random point of [-1, 1]^d scaled by 1/sqrt(d)."""
    i = int(rng.integers(data.n))
    x = rng.uniform(-1.0, 1.0, size=data.d) / math.sqrt(data.d)
    y = float(rng.choice((-1.0, 1.0)))
    return data.replace_sample(i, x, y)


def audit_sensitivity(
    spec: ModelSpec,
    data: SampleSet,
    params: ParamVector,
    R2: float,
    delta: float,
    params0: ParamVector | None = None,
    trials: int = 100,
    seed: int = 0,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> SensitivityAudit:
    """Brute-force gradient differences over random neighbouring datasets.

    The bounds apply while ``params.c`` lies within R2 of an initialization
    ``params0`` satisfying :func:`init_norm_event`.
    """
    if params0 is not None and float(np.linalg.norm(params.c - params0.c)) > R2 + 1e-9:
        raise InputError("audited parameters lie outside the c-ball")
    delta_a, delta_c = sensitivities(spec, data.n, R2, delta)
    _, base = loss_gradient(spec, params, data, batch_size)
    rng = np.random.default_rng(seed)
    ratio_a = ratio_c = 0.0
    violations = 0
    for _ in range(trials):
        _, other = loss_gradient(spec, params, random_neighbour(data, rng), batch_size)
        ra = float(np.linalg.norm(base.a - other.a)) / delta_a
        rc = float(np.linalg.norm(base.c - other.c)) / delta_c
        violations += int(ra > 1.0) + int(rc > 1.0)
        ratio_a, ratio_c = max(ratio_a, ra), max(ratio_c, rc)
    logger.debug("sensitivity audit: ratio_a=%.4g ratio_c=%.4g", ratio_a, ratio_c)
    return SensitivityAudit(
        trials=trials,
        max_ratio_a=ratio_a,
        max_ratio_c=ratio_c,
        violations=violations,
        delta_a=delta_a,
        delta_c=delta_c,
        init_norm_event=None if params0 is None else init_norm_event(spec, params0, delta),
    )
