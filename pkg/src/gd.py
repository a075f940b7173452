"""Full-batch gradient descent with trajectory logging and theory diagnostics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import SampleSet
from .errors import ConfigurationError, DataFormatError, InputError, NumericalError
from .loss import DEFAULT_BATCH_SIZE, evaluate, gradient_norm, loss_gradient
from .model import ModelSpec, ParamVector, init_params

logger = logging.getLogger(__name__)

BLOWUP_LOSS = 1e12

LOG_COLUMNS = (
    "iter",
    "train_loss",
    "test_loss",
    "train_acc",
    "test_acc",
    "drift_init",
    "max_c_drift",
    "grad_norm",
    "cum_loss",
    "noise_norm",
)


@dataclass(frozen=True)
class GDConfig:
    eta: float = 1.0
    T: int = 100
    record_every: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ConfigurationError(f"step size must be positive, got {self.eta}")
        if self.T < 0 or self.record_every < 1:
            raise ConfigurationError(f"need T >= 0 and record_every >= 1 (got {self})")


@dataclass
class TrajectoryRow:
    iter: int
    train_loss: float
    test_loss: float | None
    train_acc: float
    test_acc: float | None
    drift_init: float
    max_c_drift: float
    grad_norm: float
    cum_loss: float
    noise_norm: float | None = None
    # not exported to CSV
    a_drift: float = 0.0
    c_drift: float = 0.0
    c_norm: float = 0.0
    ref_dist: float | None = None


@dataclass
class TrajectoryLog:
    """Recorded iterations of one run plus what is needed to re-analyse it."""

    eta: float
    spec: dict[str, Any]
    rows: list[TrajectoryRow] = field(default_factory=list)
    projected: bool = False
    status: str = "ok"
    message: str = ""
    extras: dict[str, Any] = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array(
            [np.nan if getattr(r, name) is None else getattr(r, name) for r in self.rows],
            dtype=np.float64,
        )

    @property
    def final(self) -> TrajectoryRow:
        return self.rows[-1]


@dataclass(frozen=True, eq=False)
class ReferencePoint:
    """A comparator Theta* with Lambda = ||Theta(0) - Theta*|| and its complexity.

    complexity = 2 * eta*T * L_S(Theta*) + Lambda^2.
    """

    theta_star: ParamVector
    lam: float
    loss_star: float
    eta_t: float

    @property
    def complexity(self) -> float:
        return 2.0 * self.eta_t * self.loss_star + self.lam**2


@dataclass
class DiagnosticsReport:
    monotone_violations: int
    max_loss_increase: float
    max_drift: float
    c_drift_residual: float | None
    init_ball_ok: bool | None = None
    ref_ball_ok: bool | None = None
    average_loss: float | None = None
    loss_bound: float | None = None
    bound_ratio: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _distance(p: ParamVector, q: ParamVector) -> float:
    return math.sqrt(float(((p.a - q.a) ** 2).sum() + ((p.c - q.c) ** 2).sum()))


class Recorder:
    """Accumulates per-iteration metrics shared by the GD and DP-GD loops."""

    def __init__(
        self,
        spec: ModelSpec,
        params0: ParamVector,
        data_train: SampleSet,
        data_test: SampleSet | None,
        log: TrajectoryLog,
        record_every: int,
        batch_size: int,
        reference: ParamVector | None = None,
    ):
        self._spec = spec
        self._params0 = params0
        self._train = data_train
        self._test = data_test
        self._every = record_every
        self._batch = batch_size
        self._reference = reference
        self.log = log
        self.cum_loss = 0.0

    def observe(
        self,
        k: int,
        last: bool,
        params: ParamVector,
        loss: float,
        grad: ParamVector,
        noise_norm: float | None = None,
    ) -> None:
        if not math.isfinite(loss) or loss > BLOWUP_LOSS or not grad.is_finite():
            self.log.status = "diverged"
            self.log.message = f"training loss {loss!r} at iteration {k}"
            raise NumericalError("training diverged", iteration=k, partial_log=self.log)
        self.cum_loss += loss
        if k % self._every and not last:
            return
        _, train_acc = evaluate(self._spec, params, self._train, self._batch)
        test_loss = test_acc = None
        if self._test is not None:
            test_loss, test_acc = evaluate(self._spec, params, self._test, self._batch)
        a_drift = float(np.linalg.norm(params.a - self._params0.a))
        c_drift = float(np.linalg.norm(params.c - self._params0.c))
        row = TrajectoryRow(
            iter=k,
            train_loss=loss,
            test_loss=test_loss,
            train_acc=train_acc,
            test_acc=test_acc,
            drift_init=math.hypot(a_drift, c_drift),
            max_c_drift=float(np.linalg.norm(params.c - self._params0.c, axis=1).max()),
            grad_norm=gradient_norm(grad),
            cum_loss=self.cum_loss,
            noise_norm=noise_norm,
            a_drift=a_drift,
            c_drift=c_drift,
            c_norm=float(np.linalg.norm(params.c)),
            ref_dist=None if self._reference is None else _distance(params, self._reference),
        )
        self.log.rows.append(row)
        logger.debug("iter %d: train_loss=%.6g train_acc=%.4f", k, loss, train_acc)


def gd_step(
    spec: ModelSpec,
    params: ParamVector,
    data: SampleSet,
    eta: float,
    iteration: int | None = None,
) -> ParamVector:
    """One full-batch step Theta - eta * grad L_S(Theta).

    ``iteration`` is only used to label a non-finite-gradient error.
    """
    if not eta > 0:
        raise ConfigurationError(f"step size must be positive, got {eta}")
    _, grad = loss_gradient(spec, params, data)
    if not grad.is_finite():
        raise NumericalError("non-finite gradient", iteration=iteration)
    return ParamVector(params.a - eta * grad.a, params.c - eta * grad.c)


def train_gd(
    spec: ModelSpec,
    data_train: SampleSet,
    data_test: SampleSet | None,
    cfg: GDConfig,
    batch_size: int = DEFAULT_BATCH_SIZE,
    reference: ParamVector | None = None,
    params0: ParamVector | None = None,
) -> tuple[ParamVector, TrajectoryLog]:
    """Run ``cfg.T`` GD steps from ``init_params(spec, cfg.seed)``.

    Row k of the log describes Theta(k); its ``grad_norm`` is the gradient
    taken at Theta(k). ``reference`` adds the distance to a comparator point.
    """
    if data_train.d != spec.d:
        raise InputError(f"data dimension {data_train.d} does not match model d={spec.d}")
    params0 = init_params(spec, cfg.seed) if params0 is None else params0
    params = params0.copy()
    log = TrajectoryLog(eta=cfg.eta, spec=spec.to_dict())
    rec = Recorder(
        spec, params0, data_train, data_test, log, cfg.record_every, batch_size, reference
    )
    logger.info("GD: m=%d p=%d eta=%g T=%d seed=%d", spec.m, spec.p, cfg.eta, cfg.T, cfg.seed)
    for k in range(cfg.T + 1):
        loss, grad = loss_gradient(spec, params, data_train, batch_size)
        rec.observe(k, k == cfg.T, params, loss, grad)
        if k < cfg.T:
            params = ParamVector(params.a - cfg.eta * grad.a, params.c - cfg.eta * grad.c)
    logger.info("GD done: train_loss=%.6g", log.final.train_loss)
    return params, log


def c_drift_coefficient(eta: float, b_bound: float, p: int, m: int) -> float:
    """eta * B_b * sqrt(p) / sqrt(m), the per-unit c-drift rate."""
    return eta * b_bound * math.sqrt(p) / math.sqrt(m)


def diagnose_trajectory(
    log: TrajectoryLog,
    ref: ReferencePoint | None = None,
    b_bound: float = 1.0,
    loss_tol: float = 1e-12,
) -> DiagnosticsReport:
    """Descent, drift and stay-in-a-ball checks from logged values only.

    The c-drift residual compares max_j ||c_j(k) - c_j(0)|| with
    eta * B_b * sqrt(p/m) * sum_{t<k} L_S(Theta(t)); it is only defined for
    unprojected, noise-free runs and must be <= 0.
    """
    if not log.rows:
        raise InputError("empty trajectory")
    loss = log.column("train_loss")
    increases = np.diff(loss)
    violations = int((increases > loss_tol).sum())
    report = DiagnosticsReport(
        monotone_violations=violations,
        max_loss_increase=float(increases.max()) if increases.size else 0.0,
        max_drift=float(log.column("drift_init").max()),
        c_drift_residual=None,
    )
    if not log.projected:
        rate = c_drift_coefficient(log.eta, b_bound, log.spec["p"], log.spec["m"])
        previous_sum = log.column("cum_loss") - loss
        report.c_drift_residual = float((log.column("max_c_drift") - rate * previous_sum).max())

    if ref is not None:
        ref_dist = log.column("ref_dist")
        if np.isnan(ref_dist).any():
            raise InputError("trajectory was not recorded against a reference point")
        report.ref_ball_ok = bool((ref_dist <= math.sqrt(2.0) * ref.lam + 1e-12).all())
        report.init_ball_ok = bool((log.column("drift_init") <= 3.0 * ref.lam + 1e-12).all())
        iters = log.column("iter")
        t_final = int(iters[-1])
        if t_final > 0:
            # mean over Theta(0..T-1) recovered from the running sum
            report.average_loss = float(log.rows[-1].cum_loss - loss[-1]) / t_final
            report.loss_bound = ref.complexity / (log.eta * t_final)
            report.bound_ratio = report.average_loss / report.loss_bound
    return report


def generalization_gap(log: TrajectoryLog) -> np.ndarray:
    """test_loss - train_loss per recorded row (NaN where no test set was used)."""
    return log.column("test_loss") - log.column("train_loss")


def argument_stability(
    spec: ModelSpec,
    data: SampleSet,
    index: int,
    replacement: tuple[np.ndarray, float],
    cfg: GDConfig,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> float:
    """||Theta_S(T) - Theta_{S^(i)}(T)|| for S and its neighbour with sample ``index`` replaced."""
    neighbour = data.replace_sample(index, *replacement)
    params_s, _ = train_gd(spec, data, None, cfg, batch_size)
    params_n, _ = train_gd(spec, neighbour, None, cfg, batch_size)
    return _distance(params_s, params_n)


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def write_log_csv(path: str | Path, log: TrajectoryLog) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log.rows:
            writer.writerow([row.iter, *(_fmt(getattr(row, c)) for c in LOG_COLUMNS[1:])])
    return path


def read_log_csv(path: str | Path, eta: float, spec: dict[str, Any]) -> TrajectoryLog:
    """Re-load an exported log for re-analysis; ``eta``/``spec`` are not in the CSV."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != LOG_COLUMNS:
            raise DataFormatError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for rec in reader:
            values = {c: (None if rec[c] == "" else float(rec[c])) for c in LOG_COLUMNS[1:]}
            rows.append(TrajectoryRow(iter=int(rec["iter"]), **values))
    projected = any(r.noise_norm is not None for r in rows)
    return TrajectoryLog(eta=eta, spec=spec, rows=rows, projected=projected)
