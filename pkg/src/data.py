"""Datasets: the synthetic spline-logistic task and binary MNIST, both with ||x||_2 <= 1."""

from __future__ import annotations

import csv
import gzip
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import expit

from .basis import BasisFamily, BasisSpec, eval_basis
from .errors import ConfigurationError, DataFormatError, InputError

logger = logging.getLogger(__name__)

NORM_TOLERANCE = 1e-12

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_UBYTE = 0x08


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Labelled inputs; immutable once built."""

    x: np.ndarray
    y: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=np.float64)
        y = np.array(self.y, dtype=np.float64)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise InputError(f"inconsistent sample shapes x={x.shape}, y={y.shape}")
        if not np.isin(y, (-1.0, 1.0)).all():
            raise InputError("labels must be -1 or +1")
        norms = np.linalg.norm(x, axis=1) if x.size else np.zeros(0)
        if (norms > 1.0 + NORM_TOLERANCE).any():
            raise InputError(f"{int((norms > 1.0 + NORM_TOLERANCE).sum())} inputs have norm > 1")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, index: np.ndarray, **meta: Any) -> SampleSet:
        return SampleSet(self.x[index], self.y[index], {**self.meta, **meta})

    def replace_sample(self, i: int, x: np.ndarray, y: float) -> SampleSet:
        """A neighbouring dataset: sample ``i`` swapped for ``(x, y)``."""
        xs, ys = self.x.copy(), self.y.copy()
        xs[i], ys[i] = x, y
        return SampleSet(xs, ys, {**self.meta, "replaced_index": int(i)})


def require_samples(data: SampleSet) -> None:
    if data.n < 1:
        raise InputError("dataset is empty")


@dataclass(frozen=True)
class SyntheticConfig:
    """Generator settings; defaults follow the experimental setup (s=4, d=10, k=40)."""

    n: int = 2000
    d: int = 10
    s: float = 4.0
    sigma_xi2: float = 0.1
    k: int = 40
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or self.d < 1 or self.k < 2:
            raise ConfigurationError(f"need n >= 1, d >= 1, k >= 2 (got {self})")
        if not self.s > 0 or self.sigma_xi2 < 0:
            raise ConfigurationError(f"need s > 0 and sigma_xi2 >= 0 (got {self})")


def latent_score(raw_x: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """h(x) = sum_j sum_l theta[j, l] * b_l(x_j) with a k-knot hat basis on [-1, 1]."""
    hat = BasisSpec(BasisFamily.HAT, theta.shape[1], -1.0, 1.0)
    return np.einsum("ndk,dk->n", eval_basis(hat, raw_x), theta)


def draw_labels(
    score: np.ndarray, s: float, sigma_xi2: float, rng: np.random.Generator
) -> np.ndarray:
    """y ~ Bernoulli(sigmoid(s * score + xi)), xi ~ N(0, sigma_xi2), mapped to -1/+1."""
    xi = rng.normal(0.0, math.sqrt(sigma_xi2), size=score.shape)
    prob = expit(s * score + xi)
    return np.where(rng.random(score.shape) < prob, 1.0, -1.0)


def gen_synthetic(cfg: SyntheticConfig) -> SampleSet:
    """Generate the spline-logistic classification task.

    Inputs are drawn uniformly on [-1, 1]^d, scored by the latent spline on
    those raw coordinates, and stored rescaled by 1/sqrt(d).
    """
    rng = np.random.default_rng(cfg.seed)
    theta = rng.standard_normal((cfg.d, cfg.k))
    raw = rng.uniform(-1.0, 1.0, size=(cfg.n, cfg.d))
    y = draw_labels(latent_score(raw, theta), cfg.s, cfg.sigma_xi2, rng)
    x = raw / math.sqrt(cfg.d)
    logger.debug("synthetic data: n=%d d=%d positive=%.3f", cfg.n, cfg.d, (y > 0).mean())
    return SampleSet(x, y, {"source": "synthetic", **asdict(cfg)})


def split(data: SampleSet, fraction: float, seed: int) -> tuple[SampleSet, SampleSet]:
    """Shuffle and split into sizes ceil(fraction * n) and the remainder."""
    if not 0.0 < fraction < 1.0:
        raise InputError(f"split fraction must lie in (0, 1), got {fraction}")
    # rounding first keeps products like 0.14 * 50 = 7.000000000000001 at 7
    n_first = math.ceil(round(fraction * data.n, 9))
    if n_first in (0, data.n):
        raise InputError(f"split of {data.n} samples at {fraction} leaves an empty side")
    perm = np.random.default_rng(seed).permutation(data.n)
    return (
        data.subset(np.sort(perm[:n_first]), split_seed=seed, split_part="first"),
        data.subset(np.sort(perm[n_first:]), split_seed=seed, split_part="second"),
    )


# -- IDX codec ----------------------------------------------------------------


def _open(path: Path, mode: str):
    return gzip.open(path, mode) if path.suffix == ".gz" else path.open(mode)


def read_idx(path: str | Path, magic: int | None = None) -> np.ndarray:
    """Parse an unsigned-byte IDX file (big-endian header) into an array."""
    path = Path(path)
    with _open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise DataFormatError(f"{path}: truncated header")
    (found,) = struct.unpack(">I", raw[:4])
    if magic is not None and found != magic:
        raise DataFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    if found >> 16 != 0 or (found >> 8) & 0xFF != _IDX_UBYTE:
        raise DataFormatError(f"{path}: unsupported IDX magic 0x{found:08x}")
    ndim = found & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = math.prod(dims)
    if len(raw) - header < size:
        raise DataFormatError(f"{path}: payload has {len(raw) - header} bytes, expected {size}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims).copy()


def write_idx(path: str | Path, array: np.ndarray) -> Path:
    path = Path(path)
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", (_IDX_UBYTE << 8) | array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    with _open(path, "wb") as fh:
        fh.write(header + array.tobytes())
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_mnist_binary(
    image_path: str | Path,
    label_path: str | Path,
    classes: tuple[int, int] = (0, 1),
) -> SampleSet:
    """Two-class MNIST: ``classes[0]`` maps to +1, ``classes[1]`` to -1.

    Pixels are scaled to [0, 1] and each image is divided by max(1, ||x||_2).
    """
    image_path, label_path = Path(image_path), Path(label_path)
    images = read_idx(image_path, IDX_IMAGES_MAGIC)
    labels = read_idx(label_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels "
            f"({image_path.name}, {label_path.name})"
        )
    keep = np.isin(labels, classes)
    x = images[keep].reshape(int(keep.sum()), -1).astype(np.float64) / 255.0
    x /= np.maximum(1.0, np.linalg.norm(x, axis=1))[:, None]
    y = np.where(labels[keep] == classes[0], 1.0, -1.0)
    logger.info("loaded %d MNIST samples of classes %s from %s", len(y), classes, image_path)
    meta = {
        "source": "mnist",
        "classes": list(classes),
        "images_sha256": _digest(image_path),
        "labels_sha256": _digest(label_path),
    }
    return SampleSet(x, y, meta)


# -- CSV export ---------------------------------------------------------------


def save_samples(path: str | Path, data: SampleSet) -> Path:
    """CSV with columns y, x_0 .. x_{d-1} plus a JSON provenance sidecar."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", *(f"x_{i}" for i in range(data.d))])
        for xi, yi in zip(data.x, data.y):
            writer.writerow([int(yi), *(repr(float(v)) for v in xi)])
    path.with_suffix(".json").write_text(json.dumps(data.meta, indent=2, sort_keys=True))
    return path


def load_samples(path: str | Path) -> SampleSet:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["y"]:
        raise DataFormatError(f"{path}: missing 'y' header column")
    try:
        table = np.asarray(rows[1:], dtype=np.float64).reshape(len(rows) - 1, len(rows[0]))
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    return SampleSet(table[:, 1:], table[:, 0], meta)
