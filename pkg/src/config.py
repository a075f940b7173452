"""Runtime configuration for the KAN training toolkit."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import InputError

_MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class RuntimeConfig:
    """Process-wide settings read from the environment."""

    mnist_dir: str = field(default_factory=lambda: os.environ.get("MNIST_DIR", ""))
    log_level: str = field(default_factory=lambda: os.environ.get("KAN_LOG_LEVEL", "INFO"))
    workers: int = field(default_factory=lambda: int(os.environ.get("KAN_WORKERS", "1")))
    eval_batch_size: int = field(
        default_factory=lambda: int(os.environ.get("KAN_EVAL_BATCH", "2048"))
    )
    hessian_max_params: int = field(
        default_factory=lambda: int(os.environ.get("KAN_HESSIAN_MAX_PARAMS", "5000"))
    )
    output_dir: str = field(default_factory=lambda: os.environ.get("KAN_OUTPUT_DIR", "runs"))

    def mnist_paths(self, split: str = "train") -> tuple[Path, Path]:
        """Resolve the IDX image/label files of ``split`` inside ``mnist_dir``.

        Both the raw and the ``.gz`` names are accepted.
        """
        if split not in _MNIST_FILES:
            raise InputError(f"unknown MNIST split {split!r}")
        if not self.mnist_dir:
            raise InputError("MNIST directory not configured (set MNIST_DIR or pass --mnist-dir)")
        root = Path(self.mnist_dir)
        resolved = []
        for name in _MNIST_FILES[split]:
            for candidate in (root / name, root / f"{name}.gz"):
                if candidate.exists():
                    resolved.append(candidate)
                    break
            else:
                raise InputError(f"MNIST file {name} not found under {root}")
        return resolved[0], resolved[1]

    def has_mnist(self) -> bool:
        try:
            self.mnist_paths("train")
            self.mnist_paths("test")
        except InputError:
            return False
        return True

    def to_dict(self) -> dict:
        return asdict(self)
