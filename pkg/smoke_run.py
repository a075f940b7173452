#!/usr/bin/env python3
"""Quick end-to-end script: exercise data, GD, DP-GD, the NTK margin and the fast checks."""

import json
import os
import sys

# Add project root to path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from src.config import RuntimeConfig
from src.data import SyntheticConfig
from src.dpgd import DPConfig, rdp_ledger, train_dpgd
from src.gd import GDConfig, train_gd
from src.model import ModelSpec, init_params
from src.ntk import estimate_margin, ntk_features
from src.verification import run_verification
from src.workspace import ExperimentWorkspace


def section(title):
    print("=" * 60)
    print(title)
    print("=" * 60)


def main():
    config = RuntimeConfig()
    ws = ExperimentWorkspace(config)
    print(f"MNIST available: {config.has_mnist()}\n")

    # 1. Data
    section("1. SYNTHETIC DATA")
    train, test = ws.task_data("synth", SyntheticConfig(n=500), n_test=500)
    print(f"   train n={train.n} d={train.d} positive={(train.y > 0).mean():.3f}")
    print(f"   test  n={test.n}")

    spec = ModelSpec(d=train.d, m=16, p=8)

    # 2. Gradient descent
    print()
    section("2. GRADIENT DESCENT (eta=1, T=64)")
    _, log = train_gd(spec, train, test, GDConfig(eta=1.0, T=64))
    for row in log.rows[:: 16] + [log.final]:
        print(
            f"   iter={row.iter:4d}  train_loss={row.train_loss:.4f}  "
            f"test_loss={row.test_loss:.4f}  test_acc={row.test_acc:.3f}"
        )

    # 3. DP-GD
    print()
    section("3. DP-GD (eps=2, T=64)")
    cfg = DPConfig(epsilon=2.0, T=64).resolve(train.n)
    _, dp_log, calib = train_dpgd(spec, train, test, cfg)
    print(f"   sigma1^2={calib.sigma1_2:.4g}  sigma2^2={calib.sigma2_2:.4g}")
    print(f"   final test_acc={dp_log.final.test_acc:.3f}")
    print(f"   average test loss={dp_log.extras['average_test_loss']:.4f}")
    print(f"   RDP ledger: {json.dumps(rdp_ledger(cfg, calib).to_dict(), indent=4)}")

    # 4. NTK margin
    print()
    section("4. NTK MARGIN AT INITIALIZATION")
    subset = train.subset(slice(0, 200))
    features = ntk_features(spec, init_params(spec, 0), subset)
    result = estimate_margin(features, subset.y, iters=500)
    print(f"   {json.dumps(result.to_dict())}")

    # 5. Verification suite
    print()
    section("5. VERIFICATION (fast)")
    report = run_verification("fast")
    for check in report.checks:
        flag = "ok  " if check.passed else "FAIL"
        print(f"   [{flag}] {check.name:30s} measured={check.measured} limit={check.limit}")

    print()
    section("ALL CHECKS PASSED" if report.passed else "SOME CHECKS FAILED")
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
