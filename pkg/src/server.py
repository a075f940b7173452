"""KAN DP-GD MCP Server — main server module.

Exposes synthetic data generation, GD / DP-GD training runs, sweeps and the
theory diagnostics (bound constants, noise calibration, privacy ledger, NTK
margin, verification suite) via the Model Context Protocol.
"""

from __future__ import annotations

import logging

from fastmcp import FastMCP
from starlette.middleware import Middleware
from starlette.middleware.cors import CORSMiddleware
from starlette.requests import Request
from starlette.responses import JSONResponse, Response

from .config import RuntimeConfig
from .tools import diagnostics, experiments
from .workspace import ExperimentWorkspace

logger = logging.getLogger(__name__)

# CORS middleware for browser-based MCP clients
CORS_MIDDLEWARE = Middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["GET", "POST", "DELETE", "OPTIONS"],
    allow_headers=["*"],
    expose_headers=["*"],
)


def create_server(config: RuntimeConfig | None = None) -> FastMCP:
    """Create and configure the KAN DP-GD MCP server.

    Args:
        config: Optional runtime configuration.
            If None, reads from environment variables.

    Returns:
        A configured FastMCP server instance ready to run.
    """
    mcp = FastMCP(
        "kan-dpgd",
        instructions="""KAN DP-GD MCP Server — train and diagnose two-layer KANs.

Every run is deterministic given its seeds. Inputs are scaled to the unit ball and
labels are +1/-1.

1. **Data** — `generate_synthetic` draws the spline-logistic task and reports its
   class balance. MNIST (digits 0 vs 1) is available when MNIST_DIR is set.

2. **Training** — `train_gd_run` runs full-batch gradient descent; `train_dpgd_run`
   runs differentially private projected GD and returns the noise calibration.

3. **Sweeps** — `run_sweep_config` runs a width or iteration sweep over seeds and
   writes raw and aggregate CSVs.

4. **Diagnostics** — `basis_bounds`, `noise_calibration`, `privacy_ledger`,
   `ntk_margin` and `verify` expose the constants and checks behind the guarantees.

**Typical workflow:**
1. Use `noise_calibration` to see the noise scale a privacy budget implies.
2. Use `train_dpgd_run` with the same settings and compare against `train_gd_run`.
3. Use `run_sweep_config` to locate the width or iteration count where utility peaks.
""",
    )

    ws = ExperimentWorkspace(config)
    logger.info("KAN workspace: %s", ws.config.to_dict())

    experiments.register(mcp, ws)
    diagnostics.register(mcp, ws)

    @mcp.custom_route("/health", methods=["GET"])
    async def health(request: Request) -> Response:
        """Liveness probe — confirms the process is running."""
        return JSONResponse({"status": "alive", "mnist": ws.config.has_mnist()})

    return mcp
