"""Command-line interface: ``kan-dpgd <command> [options]``.

Exit codes: 0 success, 1 input or configuration error, 2 numerical failure,
3 verification failures present.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any

from .basis import ActivationFamily, BasisFamily
from .config import RuntimeConfig
from .data import SyntheticConfig, gen_synthetic, save_samples
from .dpgd import DPConfig, rdp_ledger, train_dpgd
from .errors import KanError, NumericalError
from .gd import GDConfig, TrajectoryLog, train_gd, write_log_csv
from .harness import emit_report, load_sweep_config, run_sweep
from .model import ModelSpec, init_params, save_params
from .ntk import estimate_margin, ntk_features, save_features, suggest_tau
from .verification import run_verification
from .workspace import MNIST, SYNTH, ExperimentWorkspace

logger = logging.getLogger(__name__)

EXIT_VERIFICATION = 3


def _emit(doc: dict[str, Any], path: str | None = None) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
        logger.info("wrote %s", path)
    print(text)


def _add_synthetic_args(parser: argparse.ArgumentParser) -> None:
    defaults = SyntheticConfig()
    parser.add_argument("--n", type=int, default=defaults.n, help="training samples")
    parser.add_argument("--d", type=int, default=defaults.d, help="input dimension")
    parser.add_argument("--s", type=float, default=defaults.s, help="signal strength")
    parser.add_argument("--sigma-xi2", type=float, default=defaults.sigma_xi2)
    parser.add_argument("--k", type=int, default=defaults.k, help="knots of the latent spline")


def _add_model_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--task", choices=(SYNTH, MNIST), default=SYNTH)
    parser.add_argument("--mnist-dir", help="directory with the MNIST IDX files (or MNIST_DIR)")
    _add_synthetic_args(parser)
    parser.add_argument("--n-test", type=int, default=1000, help="synthetic test samples")
    parser.add_argument("--data-seed", type=int, default=0)
    parser.add_argument("--m", type=int, default=32, help="hidden width")
    parser.add_argument("--p", type=int, default=8, help="basis functions per edge")
    parser.add_argument("--basis", choices=[b.value for b in BasisFamily], default="cubic_bspline")
    parser.add_argument("--activation", choices=[a.value for a in ActivationFamily], default="tanh")
    parser.add_argument("--eta", type=float, help="step size (default 1.0 synth, 0.5 mnist)")
    parser.add_argument("--T", type=int, default=100, help="iterations")
    parser.add_argument("--seed", type=int, default=0, help="initialization seed")
    parser.add_argument("--record-every", type=int, default=1)
    parser.add_argument("--log", help="trajectory CSV output")
    parser.add_argument("--save-params", help="final parameters (.json or binary)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kan-dpgd",
        description="Train two-layer KANs with GD and differentially private GD.",
    )
    parser.add_argument("--log-level", help="logging level (default KAN_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate the synthetic spline-logistic task")
    _add_synthetic_args(gen)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="CSV output (a .json sidecar is added)")

    train = sub.add_parser("train", help="full-batch gradient descent")
    _add_model_args(train)

    dp = sub.add_parser("dp-train", help="differentially private projected GD")
    _add_model_args(dp)
    dp.add_argument("--epsilon", type=float, default=2.0)
    dp.add_argument("--delta", type=float, help="default 1/n")
    dp.add_argument("--r1", type=float, default=1.0, help="radius of the a-ball")
    dp.add_argument("--r2", type=float, default=1.0, help="radius of the c-ball")
    dp.add_argument("--noise-seed", type=int, default=0)
    dp.add_argument("--no-noise", action="store_true", help="projected GD without noise")
    dp.add_argument("--calibration", help="calibration JSON (default: next to --log)")

    sweep = sub.add_parser("sweep", help="width / iteration sweep from a JSON config")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--workers", type=int, help="override the config's worker count")
    sweep.add_argument("--mnist-dir")
    sweep.add_argument("--out", help="report directory (default: output_path)")

    margin = sub.add_parser("margin", help="empirical NTK margin at initialization")
    _add_model_args(margin)
    margin.add_argument("--iters", type=int, default=2000)
    margin.add_argument("--tol", type=float, default=1e-6)
    margin.add_argument("--limit", type=int, help="use only the first N training samples")
    margin.add_argument("--features", help="dump the dense features as .npy")
    margin.add_argument("--out", help="MarginResult JSON output")

    verify = sub.add_parser("verify", help="run the verification suite")
    verify.add_argument("--level", choices=("fast", "full"), default="fast")
    verify.add_argument("--out", help="report JSON output")
    return parser


def _runtime(args: argparse.Namespace) -> RuntimeConfig:
    runtime = RuntimeConfig()
    if getattr(args, "mnist_dir", None):
        runtime.mnist_dir = args.mnist_dir
    return runtime


def _setup(args: argparse.Namespace):
    ws = ExperimentWorkspace(_runtime(args))
    synth = SyntheticConfig(args.n, args.d, args.s, args.sigma_xi2, args.k, args.data_seed)
    train, test = ws.task_data(args.task, synth, args.n_test)
    spec = ModelSpec(d=train.d, m=args.m, p=args.p, basis=args.basis, activation=args.activation)
    eta = args.eta if args.eta is not None else (1.0 if args.task == SYNTH else 0.5)
    return ws, train, test, spec, eta


def _write_outputs(args: argparse.Namespace, spec: ModelSpec, params, log: TrajectoryLog) -> None:
    if args.log:
        write_log_csv(args.log, log)
        logger.info("trajectory written to %s", args.log)
    if args.save_params:
        save_params(args.save_params, spec, params)


def _summary(log: TrajectoryLog) -> dict[str, Any]:
    final = log.final
    return {
        "iterations": final.iter,
        "train_loss": final.train_loss,
        "test_loss": final.test_loss,
        "train_acc": final.train_acc,
        "test_acc": final.test_acc,
        "drift_init": final.drift_init,
        "status": log.status,
    }


def _save_partial(args: argparse.Namespace, exc: NumericalError) -> None:
    if args.log and isinstance(exc.partial_log, TrajectoryLog):
        write_log_csv(args.log, exc.partial_log)
        logger.error("partial trajectory written to %s", args.log)


def cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = SyntheticConfig(args.n, args.d, args.s, args.sigma_xi2, args.k, args.seed)
    data = gen_synthetic(cfg)
    save_samples(args.out, data)
    _emit({"out": args.out, "n": data.n, "d": data.d, "positive": float((data.y > 0).mean())})
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    ws, train, test, spec, eta = _setup(args)
    cfg = GDConfig(eta=eta, T=args.T, record_every=args.record_every, seed=args.seed)
    try:
        params, log = train_gd(spec, train, test, cfg, ws.batch_size)
    except NumericalError as exc:
        _save_partial(args, exc)
        raise
    _write_outputs(args, spec, params, log)
    _emit({"spec": spec.to_dict(), **_summary(log)})
    return 0


def cmd_dp_train(args: argparse.Namespace) -> int:
    ws, train, test, spec, eta = _setup(args)
    cfg = DPConfig(
        epsilon=args.epsilon,
        delta=args.delta,
        T=args.T,
        eta=eta,
        R1=args.r1,
        R2=args.r2,
        seed_init=args.seed,
        seed_noise=args.noise_seed,
        record_every=args.record_every,
    ).resolve(train.n)
    try:
        params, log, calib = train_dpgd(
            spec, train, test, cfg, add_noise=not args.no_noise, batch_size=ws.batch_size
        )
    except NumericalError as exc:
        _save_partial(args, exc)
        raise
    _write_outputs(args, spec, params, log)
    calibration_path = args.calibration
    if calibration_path is None and args.log:
        calibration_path = str(Path(args.log).with_suffix(".calibration.json"))
    if calibration_path:
        Path(calibration_path).write_text(json.dumps(calib.to_dict(), indent=2) + "\n")
    _emit(
        {
            "spec": spec.to_dict(),
            **_summary(log),
            "average_test_loss": log.extras.get("average_test_loss"),
            "init_norm_event": log.extras["init_norm_event"],
            "calibration": calib.to_dict(),
            "rdp": rdp_ledger(cfg, calib).to_dict(),
        }
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    runtime = _runtime(args)
    cfg = load_sweep_config(args.config, runtime.workers)
    if args.workers:
        cfg = replace(cfg, workers=args.workers)
    result = run_sweep(cfg, runtime)
    files = emit_report(result, args.out, runtime.output_dir)
    failed = sum(1 for r in result.rows if r.status != "ok")
    _emit({"runs": len(result.rows), "failed": failed, **{k: str(v) for k, v in files.items()}})
    return 0


def cmd_margin(args: argparse.Namespace) -> int:
    ws, train, _, spec, _ = _setup(args)
    if args.limit:
        train = train.subset(slice(0, args.limit))
    features = ntk_features(spec, init_params(spec, args.seed), train, ws.batch_size)
    if args.features:
        save_features(args.features, features)
    result = estimate_margin(features, train.y, iters=args.iters, tol=args.tol)
    if result.separable:
        result.tau_suggested = suggest_tau(result.gamma_hat, args.T, train.n)
    _emit(result.to_dict(), args.out)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    report = run_verification(args.level, hessian_max_params=RuntimeConfig().hessian_max_params)
    _emit(report.to_dict(), args.out)
    for check in report.failures:
        logger.error("verification failed: %s (measured=%s)", check.name, check.measured)
    return 0 if report.passed else EXIT_VERIFICATION


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "dp-train": cmd_dp_train,
    "sweep": cmd_sweep,
    "margin": cmd_margin,
    "verify": cmd_verify,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = args.log_level or RuntimeConfig().log_level
    logging.basicConfig(
        level=level.upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except KanError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
