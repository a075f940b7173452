"""Theory diagnostics for the KAN DP-GD MCP server."""

from __future__ import annotations

from fastmcp import FastMCP

from ..basis import ActivationSpec, BasisSpec, bound_constants
from ..dpgd import DPConfig, calibrate_noise, rdp_ledger
from ..model import ModelSpec, init_params
from ..ntk import estimate_margin, ntk_features, suggest_tau
from ..verification import run_verification
from ..workspace import SYNTH, ExperimentWorkspace
from .experiments import load_task


def register(mcp: FastMCP, ws: ExperimentWorkspace) -> None:
    """Register diagnostic tools on the MCP server."""

    def _calibration(n, T, epsilon, delta, m, p, d, r2):
        spec = ModelSpec(d=d, m=m, p=p)
        cfg = DPConfig(epsilon=epsilon, delta=delta or None, T=T, R2=r2).resolve(n)
        return cfg, calibrate_noise(cfg, spec, n)

    @mcp.tool()
    def basis_bounds(basis: str = "cubic_bspline", p: int = 8, activation: str = "tanh") -> dict:
        """Uniform bounds on the basis functions, the activation and their derivatives.

        Args:
            basis: "cubic_bspline" or "hat". The hat basis has no bounded second
                derivative, which is listed under violations.
            p: Number of basis functions.
            activation: "tanh" or "sigmoid".
        """
        return bound_constants(BasisSpec(basis, p), ActivationSpec(activation)).to_dict()

    @mcp.tool()
    def noise_calibration(
        n: int,
        T: int = 100,
        epsilon: float = 2.0,
        delta: float = 0.0,
        m: int = 32,
        p: int = 8,
        d: int = 10,
        r2: float = 1.0,
    ) -> dict:
        """Gaussian noise variances and sensitivities DP-GD uses for a privacy budget.

        Args:
            n: Training set size.
            T: Number of iterations.
            epsilon: Privacy parameter epsilon.
            delta: Privacy parameter delta; 0 selects 1/n.
            m: Hidden width.
            p: Basis functions per edge.
            d: Input dimension.
            r2: Radius of the outer-coefficient ball.
        """
        _, calib = _calibration(n, T, epsilon, delta, m, p, d, r2)
        return calib.to_dict()

    @mcp.tool()
    def privacy_ledger(
        n: int,
        T: int = 100,
        epsilon: float = 2.0,
        delta: float = 0.0,
        m: int = 32,
        p: int = 8,
        d: int = 10,
        r2: float = 1.0,
    ) -> dict:
        """Renyi-DP accounting of a calibration: per-step and composed RDP and the
        epsilon they convert to.

        Args:
            n: Training set size.
            T: Number of iterations.
            epsilon: Target epsilon.
            delta: Target delta; 0 selects 1/n.
            m: Hidden width.
            p: Basis functions per edge.
            d: Input dimension.
            r2: Radius of the outer-coefficient ball.
        """
        cfg, calib = _calibration(n, T, epsilon, delta, m, p, d, r2)
        return rdp_ledger(cfg, calib).to_dict()

    @mcp.tool()
    def ntk_margin(
        task: str = SYNTH,
        m: int = 32,
        p: int = 8,
        seed: int = 0,
        n: int = 500,
        d: int = 10,
        data_seed: int = 0,
        iters: int = 2000,
        T: int = 100,
    ) -> dict:
        """Estimate the NTK margin of the training set at initialization.

        A positive margin means a unit direction in parameter space separates the
        labelled gradient features; tau_suggested is the matching reference-point
        distance for a run of T iterations.

        Args:
            task: "synth" or "mnist".
            m: Hidden width.
            p: Basis functions per edge.
            seed: Initialization seed.
            n: Training samples (synthetic size, or a prefix of MNIST).
            d: Synthetic input dimension.
            data_seed: Synthetic data seed.
            iters: Subgradient-ascent iterations.
            T: Iteration count used for tau_suggested.
        """
        train, _ = load_task(ws, task, n, 1, d, data_seed)
        train = train.subset(slice(0, min(n, train.n)))
        spec = ModelSpec(d=train.d, m=m, p=p)
        features = ntk_features(spec, init_params(spec, seed), train, ws.batch_size)
        result = estimate_margin(features, train.y, iters=iters)
        if result.separable:
            result.tau_suggested = suggest_tau(result.gamma_hat, T, train.n)
        return result.to_dict()

    @mcp.tool()
    def verify(level: str = "fast") -> dict:
        """Run the verification suite (gradient/Hessian checks, calibration
        identities, projection, descent and sensitivity audits).

        Args:
            level: "fast" (about a minute) or "full" (desk-scale reproductions).
        """
        report = run_verification(level, hessian_max_params=ws.config.hessian_max_params)
        return report.to_dict()
