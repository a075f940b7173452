"""Data generation, training and sweep tools for the KAN DP-GD MCP server."""

from __future__ import annotations

from typing import Any

import numpy as np
from fastmcp import FastMCP

from ..data import SampleSet, SyntheticConfig, gen_synthetic, save_samples
from ..dpgd import DPConfig, train_dpgd
from ..gd import GDConfig, TrajectoryLog, train_gd, write_log_csv
from ..harness import SweepConfig, emit_report, run_sweep
from ..model import ModelSpec
from ..workspace import SYNTH, ExperimentWorkspace

# at most this many points of the loss curve are returned inline
CURVE_POINTS = 50


def load_task(
    ws: ExperimentWorkspace,
    task: str,
    n: int,
    n_test: int,
    d: int,
    data_seed: int,
) -> tuple[SampleSet, SampleSet]:
    synth = SyntheticConfig(n=n, d=d, seed=data_seed)
    return ws.task_data(task, synth, n_test)


def _curve(log: TrajectoryLog) -> dict[str, list]:
    rows = log.rows
    if len(rows) > CURVE_POINTS:
        picks = np.unique(np.linspace(0, len(rows) - 1, CURVE_POINTS).round().astype(int))
        rows = [rows[i] for i in picks]
    return {
        "iter": [r.iter for r in rows],
        "train_loss": [r.train_loss for r in rows],
        "test_loss": [r.test_loss for r in rows],
    }


def _final(log: TrajectoryLog) -> dict[str, Any]:
    final = log.final
    return {
        "train_loss": final.train_loss,
        "test_loss": final.test_loss,
        "train_acc": final.train_acc,
        "test_acc": final.test_acc,
        "drift_init": final.drift_init,
        "max_c_drift": final.max_c_drift,
    }


def register(mcp: FastMCP, ws: ExperimentWorkspace) -> None:
    """Register data, training and sweep tools on the MCP server."""

    @mcp.tool()
    def generate_synthetic(
        n: int = 2000,
        d: int = 10,
        s: float = 4.0,
        sigma_xi2: float = 0.1,
        k: int = 40,
        seed: int = 0,
        out_path: str = "",
    ) -> dict:
        """Generate the synthetic spline-logistic classification task.

        Inputs are uniform on [-1, 1]^d rescaled by 1/sqrt(d); labels follow a
        logistic model of a random k-knot spline score with signal strength s.

        Args:
            n: Number of samples.
            d: Input dimension.
            s: Signal strength multiplying the latent score.
            sigma_xi2: Variance of the Gaussian noise added to the score.
            k: Knots of the latent hat-basis spline.
            seed: Random seed.
            out_path: Optional CSV path; a JSON provenance sidecar is written next to it.
        """
        data = gen_synthetic(SyntheticConfig(n, d, s, sigma_xi2, k, seed))
        if out_path:
            save_samples(out_path, data)
        return {
            "n": data.n,
            "d": data.d,
            "positive_fraction": float((data.y > 0).mean()),
            "max_norm": float(np.linalg.norm(data.x, axis=1).max()),
            "saved_to": out_path or None,
        }

    @mcp.tool()
    def train_gd_run(
        task: str = SYNTH,
        m: int = 32,
        p: int = 8,
        eta: float = 0.0,
        T: int = 100,
        seed: int = 0,
        n: int = 2000,
        n_test: int = 1000,
        d: int = 10,
        data_seed: int = 0,
        basis: str = "cubic_bspline",
        activation: str = "tanh",
        log_path: str = "",
    ) -> dict:
        """Train a two-layer KAN with full-batch gradient descent.

        Args:
            task: "synth" or "mnist" (MNIST needs MNIST_DIR on the server).
            m: Hidden width.
            p: Basis functions per edge.
            eta: Step size; 0 selects the task default (1.0 synthetic, 0.5 MNIST).
            T: Number of iterations.
            seed: Initialization seed.
            n: Synthetic training samples (ignored for MNIST).
            n_test: Synthetic test samples (ignored for MNIST).
            d: Synthetic input dimension (ignored for MNIST).
            data_seed: Synthetic data seed.
            basis: "cubic_bspline" or "hat".
            activation: "tanh" or "sigmoid".
            log_path: Optional trajectory CSV output path.

        Returns final train/test loss and accuracy plus a thinned loss curve.
        """
        train, test = load_task(ws, task, n, n_test, d, data_seed)
        spec = ModelSpec(d=train.d, m=m, p=p, basis=basis, activation=activation)
        eta = eta or (1.0 if task == SYNTH else 0.5)
        _, log = train_gd(spec, train, test, GDConfig(eta=eta, T=T, seed=seed), ws.batch_size)
        if log_path:
            write_log_csv(log_path, log)
        return {"spec": spec.to_dict(), "eta": eta, **_final(log), "curve": _curve(log)}

    @mcp.tool()
    def train_dpgd_run(
        task: str = SYNTH,
        m: int = 32,
        p: int = 8,
        eta: float = 0.0,
        T: int = 100,
        epsilon: float = 2.0,
        delta: float = 0.0,
        r1: float = 1.0,
        r2: float = 1.0,
        seed: int = 0,
        noise_seed: int = 0,
        add_noise: bool = True,
        n: int = 2000,
        n_test: int = 1000,
        d: int = 10,
        data_seed: int = 0,
        log_path: str = "",
    ) -> dict:
        """Train with differentially private projected gradient descent.

        Each step adds Gaussian noise calibrated to (epsilon, delta) and projects
        both parameter blocks onto balls of radius r1 / r2 around the initialization.

        Args:
            task: "synth" or "mnist".
            m: Hidden width.
            p: Basis functions per edge.
            eta: Step size; 0 selects the task default.
            T: Number of iterations (the noise scale grows with T).
            epsilon: Privacy parameter epsilon.
            delta: Privacy parameter delta; 0 selects 1/n.
            r1: Radius of the ball for the inner coefficients.
            r2: Radius of the ball for the outer coefficients.
            seed: Initialization seed.
            noise_seed: Seed of the privacy noise stream.
            add_noise: False runs projected GD without noise (same seeds and balls).
            n: Synthetic training samples.
            n_test: Synthetic test samples.
            d: Synthetic input dimension.
            data_seed: Synthetic data seed.
            log_path: Optional trajectory CSV output path.

        Returns final metrics of the last iterate, the trajectory-average test loss
        and the noise calibration.
        """
        train, test = load_task(ws, task, n, n_test, d, data_seed)
        spec = ModelSpec(d=train.d, m=m, p=p)
        cfg = DPConfig(
            epsilon=epsilon,
            delta=delta or None,
            T=T,
            eta=eta or (1.0 if task == SYNTH else 0.5),
            R1=r1,
            R2=r2,
            seed_init=seed,
            seed_noise=noise_seed,
        )
        _, log, calib = train_dpgd(
            spec, train, test, cfg, add_noise=add_noise, batch_size=ws.batch_size
        )
        if log_path:
            write_log_csv(log_path, log)
        return {
            "spec": spec.to_dict(),
            **_final(log),
            "average_test_loss": log.extras.get("average_test_loss"),
            "init_norm_event": log.extras["init_norm_event"],
            "calibration": calib.to_dict(),
            "curve": _curve(log),
        }

    @mcp.tool()
    def run_sweep_config(config: dict, output_path: str = "") -> dict:
        """Run a width or iteration sweep and write raw and aggregate CSVs.

        Args:
            config: Sweep configuration with keys task, mode, sweep_axis,
                axis_values, fixed, seeds, model, data, n_test, workers,
                change_threshold and output_path (see README).
            output_path: Optional report directory overriding config.output_path.

        Returns the per-axis-value means and the change-point axis value.
        """
        cfg = SweepConfig.from_dict(config, ws.config.workers)
        result = run_sweep(cfg, ws.config)
        files = emit_report(result, output_path or None, ws.config.output_dir)
        aggregate = result.aggregate()
        knee = next((a.axis_value for a in aggregate if a.change_point), None)
        return {
            "runs": len(result.rows),
            "failed": sum(1 for r in result.rows if r.status != "ok"),
            "change_point": knee,
            "aggregate": [
                {"axis_value": a.axis_value, "n_ok": a.n_ok, **a.mean} for a in aggregate
            ],
            "files": {k: str(v) for k, v in files.items()},
        }
