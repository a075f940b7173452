"""Width and iteration sweeps over GD / DP-GD runs, with CSV reports."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from .config import RuntimeConfig
from .data import SyntheticConfig
from .dpgd import DPConfig, train_dpgd
from .errors import ConfigurationError, InputError, KanError, NumericalError
from .gd import GDConfig, train_gd
from .model import ModelSpec
from .workspace import ExperimentWorkspace

logger = logging.getLogger(__name__)

DEFAULT_WIDTHS = (4, 8, 16, 24, 32, 64, 128, 256)
DEFAULT_ITERS = (16, 32, 64, 128, 256, 512, 1024)
DEFAULT_CHANGE_THRESHOLD = 0.1

METRICS = ("train_loss", "test_loss", "train_acc", "test_acc", "avg_test_loss")
RAW_COLUMNS = ("axis_value", "seed", "status", *METRICS, "message")


class Task(str, Enum):
    SYNTH = "synth"
    MNIST = "mnist"


class Mode(str, Enum):
    GD = "gd"
    DPGD = "dpgd"


class SweepAxis(str, Enum):
    WIDTH = "width"
    ITERS = "iters"


def default_seeds(task: Task, full_scale: bool = False) -> tuple[int, ...]:
    """10 synthetic / 5 MNIST seeds, or 50 / 20 at full scale."""
    if task is Task.SYNTH:
        return tuple(range(50 if full_scale else 10))
    return tuple(range(20 if full_scale else 5))


def default_eta(task: Task) -> float:
    return 1.0 if task is Task.SYNTH else 0.5


def _strict(cls, data: dict[str, Any], where: str) -> dict[str, Any]:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(unknown)}")
    return data


@dataclass(frozen=True)
class SweepConfig:
    task: Task
    mode: Mode
    sweep_axis: SweepAxis
    axis_values: tuple[int, ...]
    fixed: GDConfig | DPConfig
    seeds: tuple[int, ...]
    output_path: str = ""
    model: dict[str, Any] = field(default_factory=lambda: {"m": 32, "p": 8})
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    n_test: int = 1000
    workers: int = 1
    change_threshold: float = DEFAULT_CHANGE_THRESHOLD

    def __post_init__(self) -> None:
        values = list(self.axis_values)
        if not values:
            raise ConfigurationError("axis_values must not be empty")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigurationError(f"axis_values must be strictly increasing: {values}")
        if values[0] < 1:
            raise ConfigurationError("axis values must be positive")
        if not self.seeds:
            raise ConfigurationError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigurationError(f"duplicate seeds: {list(self.seeds)}")
        expected = GDConfig if self.mode is Mode.GD else DPConfig
        if not isinstance(self.fixed, expected):
            raise ConfigurationError(f"{self.mode.value} sweeps need a {expected.__name__}")
        if self.sweep_axis is SweepAxis.ITERS and "m" not in self.model:
            raise ConfigurationError("iteration sweeps need a fixed width model.m")
        if self.workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {self.workers}")
        if not 0.0 < self.change_threshold < 1.0:
            raise ConfigurationError("change_threshold must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict[str, Any], default_workers: int = 1) -> SweepConfig:
        """Build from a JSON document whose keys mirror the field names.

        Missing ``axis_values``/``seeds`` fall back to the default grids and
        seed counts; ``full_scale: true`` selects the larger seed counts.
        """
        doc = dict(doc)
        full_scale = bool(doc.pop("full_scale", False))
        _strict(cls, doc, "sweep config")
        try:
            task = Task(doc["task"])
            mode = Mode(doc.get("mode", Mode.GD))
            axis = SweepAxis(doc.get("sweep_axis", SweepAxis.WIDTH))
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"invalid sweep config: {exc}") from exc

        fixed_doc = dict(doc.get("fixed", {}))
        fixed_doc.setdefault("eta", default_eta(task))
        fixed_cls = GDConfig if mode is Mode.GD else DPConfig
        fixed = fixed_cls(**_strict(fixed_cls, fixed_doc, "fixed"))
        data = SyntheticConfig(**_strict(SyntheticConfig, dict(doc.get("data", {})), "data"))
        model = dict(doc.get("model", {"m": 32, "p": 8}))
        unknown = set(model) - {"m", "p", "basis", "activation"}
        if unknown:
            raise ConfigurationError(f"unknown keys in model: {sorted(unknown)}")

        grid = DEFAULT_WIDTHS if axis is SweepAxis.WIDTH else DEFAULT_ITERS
        return cls(
            task=task,
            mode=mode,
            sweep_axis=axis,
            axis_values=tuple(int(v) for v in doc.get("axis_values", grid)),
            fixed=fixed,
            seeds=tuple(int(s) for s in doc.get("seeds", default_seeds(task, full_scale))),
            output_path=str(doc.get("output_path", "")),
            model=model,
            data=data,
            n_test=int(doc.get("n_test", 1000)),
            workers=int(doc.get("workers", default_workers)),
            change_threshold=float(doc.get("change_threshold", DEFAULT_CHANGE_THRESHOLD)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task.value,
            "mode": self.mode.value,
            "sweep_axis": self.sweep_axis.value,
            "axis_values": list(self.axis_values),
            "fixed": asdict(self.fixed),
            "seeds": list(self.seeds),
            "output_path": self.output_path,
            "model": dict(self.model),
            "data": asdict(self.data),
            "n_test": self.n_test,
            "workers": self.workers,
            "change_threshold": self.change_threshold,
        }


def load_sweep_config(path: str | Path, default_workers: int = 1) -> SweepConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path}: cannot read sweep config ({exc})") from exc
    return SweepConfig.from_dict(doc, default_workers)


@dataclass
class SweepRow:
    axis_value: int
    seed: int
    status: str = "ok"
    train_loss: float | None = None
    test_loss: float | None = None
    train_acc: float | None = None
    test_acc: float | None = None
    avg_test_loss: float | None = None
    wall_time: float = 0.0
    message: str = ""


@dataclass
class AggregateRow:
    axis_value: int
    n_ok: int
    mean: dict[str, float | None]
    stderr: dict[str, float | None]
    change_point: bool = False


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list[SweepRow]

    def metric(self, name: str, axis_value: int) -> np.ndarray:
        """Values of ``name`` over the successful runs at one axis value."""
        return np.array(
            [
                getattr(r, name)
                for r in self.rows
                if r.axis_value == axis_value and r.status == "ok" and getattr(r, name) is not None
            ],
            dtype=np.float64,
        )

    def aggregate(self, change_metric: str = "test_acc") -> list[AggregateRow]:
        out = []
        for value in self.config.axis_values:
            means: dict[str, float | None] = {}
            errors: dict[str, float | None] = {}
            for name in METRICS:
                values = self.metric(name, value)
                means[name] = float(values.mean()) if values.size else None
                if values.size > 1:
                    errors[name] = float(values.std(ddof=1) / math.sqrt(values.size))
                else:
                    errors[name] = 0.0 if values.size else None
            n_ok = sum(1 for r in self.rows if r.axis_value == value and r.status == "ok")
            out.append(AggregateRow(value, n_ok, means, errors))

        curve = [(a.axis_value, a.mean[change_metric]) for a in out]
        curve = [(v, m) for v, m in curve if m is not None]
        if len(curve) >= 2:
            knee = detect_change_point(
                [v for v, _ in curve], [m for _, m in curve], self.config.change_threshold
            )
            for a in out:
                a.change_point = a.axis_value == knee
        return out


@dataclass(frozen=True)
class _Job:
    task: Task
    mode: Mode
    spec_fields: dict[str, Any]
    run_cfg: GDConfig | DPConfig
    data: SyntheticConfig
    n_test: int
    mnist_dir: str
    batch_size: int
    cache_size: int
    axis_value: int
    seed: int


# a few workspaces per process so datasets are built once per worker
@lru_cache(maxsize=2)
def _workspace(mnist_dir: str, batch_size: int, cache_size: int) -> ExperimentWorkspace:
    cfg = RuntimeConfig(mnist_dir=mnist_dir, eval_batch_size=batch_size)
    return ExperimentWorkspace(cfg, cache_size=cache_size)


def _run_job(job: _Job) -> SweepRow:
    row = SweepRow(axis_value=job.axis_value, seed=job.seed)
    start = time.perf_counter()
    try:
        ws = _workspace(job.mnist_dir, job.batch_size, job.cache_size)
        train, test = ws.task_data(job.task.value, job.data, job.n_test)
        spec = ModelSpec(d=train.d, **job.spec_fields)
        if job.mode is Mode.GD:
            _, log = train_gd(spec, train, test, job.run_cfg, job.batch_size)
        else:
            _, log, _ = train_dpgd(spec, train, test, job.run_cfg, batch_size=job.batch_size)
            row.avg_test_loss = log.extras.get("average_test_loss")
        final = log.final
        row.train_loss, row.test_loss = final.train_loss, final.test_loss
        row.train_acc, row.test_acc = final.train_acc, final.test_acc
    except NumericalError as exc:
        row.status, row.message = "diverged", str(exc)
        logger.warning("run axis=%d seed=%d diverged: %s", job.axis_value, job.seed, exc)
    except KanError as exc:
        row.status, row.message = "failed", str(exc)
        logger.warning("run axis=%d seed=%d failed: %s", job.axis_value, job.seed, exc)
    except Exception as exc:
        row.status, row.message = "error", f"{type(exc).__name__}: {exc}"
        logger.warning("run axis=%d seed=%d crashed", job.axis_value, job.seed, exc_info=True)
    row.wall_time = time.perf_counter() - start
    return row


def _jobs(cfg: SweepConfig, runtime: RuntimeConfig) -> list[_Job]:
    jobs = []
    for value in cfg.axis_values:
        for seed in cfg.seeds:
            spec_fields = dict(cfg.model)
            if cfg.sweep_axis is SweepAxis.WIDTH:
                spec_fields["m"] = value
            run_cfg: GDConfig | DPConfig
            if cfg.mode is Mode.GD:
                run_cfg = replace(cfg.fixed, seed=seed)
            else:
                run_cfg = replace(cfg.fixed, seed_init=seed, seed_noise=seed)
            if cfg.sweep_axis is SweepAxis.ITERS:
                run_cfg = replace(run_cfg, T=value)
            jobs.append(
                _Job(
                    task=cfg.task,
                    mode=cfg.mode,
                    spec_fields=spec_fields,
                    run_cfg=run_cfg,
                    data=replace(cfg.data, seed=seed),
                    n_test=cfg.n_test,
                    mnist_dir=runtime.mnist_dir,
                    batch_size=runtime.eval_batch_size,
                    cache_size=len(cfg.seeds),
                    axis_value=value,
                    seed=seed,
                )
            )
    return jobs


def run_sweep(cfg: SweepConfig, runtime: RuntimeConfig | None = None) -> SweepResult:
    """One run per (axis value, seed), in configuration order.

    The synthetic dataset depends only on the seed; MNIST is loaded once per
    worker. Failed runs become rows with a non-"ok" status.
    """
    runtime = runtime or RuntimeConfig()
    if cfg.task is Task.MNIST:
        runtime.mnist_paths("train")
        runtime.mnist_paths("test")
    jobs = _jobs(cfg, runtime)
    logger.info(
        "sweep %s/%s over %s: %d runs, %d worker(s)",
        cfg.task.value,
        cfg.mode.value,
        cfg.sweep_axis.value,
        len(jobs),
        cfg.workers,
    )
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_run_job, jobs))
    else:
        rows = [_run_job(job) for job in jobs]

    result = SweepResult(cfg, rows)
    for agg in result.aggregate():
        if agg.n_ok == 0:
            logger.warning("every run at %s=%d failed", cfg.sweep_axis.value, agg.axis_value)
    return result


def detect_change_point(
    axis_values: list[int],
    means: list[float],
    threshold: float = DEFAULT_CHANGE_THRESHOLD,
) -> int | None:
    """First axis value after which the next mean improvement is below
    ``threshold`` times the observed range of ``means``.

    Returns None when there is no range or the curve never flattens.
    """
    if len(axis_values) != len(means):
        raise InputError("axis_values and means differ in length")
    if len(means) < 2:
        return None
    span = max(means) - min(means)
    if span <= 0.0:
        return None
    for value, current, following in zip(axis_values, means, means[1:]):
        if following - current < threshold * span:
            return value
    return None


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def emit_report(
    result: SweepResult,
    path: str | Path | None = None,
    root: str | Path = "runs",
) -> dict[str, Path]:
    """Write raw.csv, aggregate.csv, config.json and timings.json under ``path``.

    Without ``path`` the config's ``output_path`` is used, then ``root/sweep``.
    The two CSVs depend only on the configuration; wall times go to the JSON
    sidecar.
    """
    out = Path(path or result.config.output_path or Path(root) / "sweep")
    files = {
        "raw": out / "raw.csv",
        "aggregate": out / "aggregate.csv",
        "config": out / "config.json",
        "timings": out / "timings.json",
    }
    try:
        out.mkdir(parents=True, exist_ok=True)
        with files["raw"].open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(RAW_COLUMNS)
            for r in result.rows:
                metrics = [_fmt(getattr(r, m)) for m in METRICS]
                writer.writerow([r.axis_value, r.seed, r.status, *metrics, r.message])
        with files["aggregate"].open("w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["axis_value", "n_ok"]
            for m in METRICS:
                header += [f"{m}_mean", f"{m}_stderr"]
            writer.writerow([*header, "change_point"])
            for agg in result.aggregate():
                values = []
                for m in METRICS:
                    values += [_fmt(agg.mean[m]), _fmt(agg.stderr[m])]
                writer.writerow([agg.axis_value, agg.n_ok, *values, int(agg.change_point)])
        files["config"].write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True))
        timings = [
            {"axis_value": r.axis_value, "seed": r.seed, "wall_time": r.wall_time}
            for r in result.rows
        ]
        files["timings"].write_text(json.dumps(timings, indent=2))
    except OSError as exc:
        raise InputError(f"cannot write sweep report to {out}: {exc}") from exc
    logger.info("sweep report written to %s", out)
    return files

