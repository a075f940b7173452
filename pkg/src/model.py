"""The two-layer KAN: parameters, initialization, forward pass, gradient and Hessian.

For an input x in R^d the network computes

    pre_j = (1/sqrt(d)) * <a_j, h(x)>,      u_j = sigma(pre_j),
    f(x)  = (1/sqrt(m)) * sum_j <c_j, h(u_j)>,

where h(v) stacks the p basis values of every coordinate of v. Gradients and
Hessians are the closed forms of this composition, not automatic
differentiation, so finite differences remain an independent check.

Flattening order: the a-block comes first (unit, then input index, then basis
index), followed by the c-block (unit, then basis index).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .basis import (
    ActivationFamily,
    ActivationSpec,
    BasisFamily,
    BasisSpec,
    eval_activation_jet,
    eval_basis,
    eval_basis_jet,
)
from .errors import ConfigurationError, DataFormatError, InputError, SizeGuardError

logger = logging.getLogger(__name__)

DEFAULT_HESSIAN_MAX_PARAMS = 5000


@dataclass(frozen=True)
class ModelSpec:
    """Architecture of a two-layer KAN; both layers share one basis on [-1, 1]."""

    d: int
    m: int
    p: int = 8
    basis: BasisFamily = BasisFamily.CUBIC_BSPLINE
    activation: ActivationFamily = ActivationFamily.TANH

    def __post_init__(self) -> None:
        if self.d < 1 or self.m < 1:
            raise ConfigurationError(f"need d >= 1 and m >= 1, got d={self.d}, m={self.m}")
        # BasisSpec/ActivationSpec validate p and the family names
        object.__setattr__(self, "basis", self.basis_spec.family)
        object.__setattr__(self, "activation", self.activation_spec.family)

    @cached_property
    def basis_spec(self) -> BasisSpec:
        return BasisSpec(self.basis, self.p, -1.0, 1.0)

    @cached_property
    def activation_spec(self) -> ActivationSpec:
        return ActivationSpec(self.activation)

    @property
    def n_params(self) -> int:
        return self.m * self.p * (self.d + 1)

    @property
    def n_a(self) -> int:
        return self.m * self.d * self.p

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "m": self.m,
            "p": self.p,
            "basis": self.basis.value,
            "activation": self.activation.value,
        }

    @classmethod
    def from_dict(cls, data: dict) -> ModelSpec:
        return cls(
            d=int(data["d"]),
            m=int(data["m"]),
            p=int(data.get("p", 8)),
            basis=BasisFamily(data.get("basis", BasisFamily.CUBIC_BSPLINE)),
            activation=ActivationFamily(data.get("activation", ActivationFamily.TANH)),
        )


@dataclass
class ParamVector:
    """Trainable parameters: ``a`` has shape (m, d*p), ``c`` has shape (m, p)."""

    a: np.ndarray
    c: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.a.reshape(-1), self.c.reshape(-1)])

    @classmethod
    def from_flat(cls, spec: ModelSpec, flat: np.ndarray) -> ParamVector:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise InputError(f"expected {spec.n_params} parameters, got shape {flat.shape}")
        a = flat[: spec.n_a].reshape(spec.m, spec.d * spec.p).copy()
        c = flat[spec.n_a :].reshape(spec.m, spec.p).copy()
        return cls(a, c)

    def copy(self) -> ParamVector:
        return ParamVector(self.a.copy(), self.c.copy())

    def check(self, spec: ModelSpec) -> None:
        if self.a.shape != (spec.m, spec.d * spec.p) or self.c.shape != (spec.m, spec.p):
            raise InputError(
                f"parameter shapes a={self.a.shape}, c={self.c.shape} do not match "
                f"d={spec.d}, m={spec.m}, p={spec.p}"
            )

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.a).all() and np.isfinite(self.c).all())


@dataclass
class HessianBlocks:
    """Per-unit Hessian blocks of f; the cc block is identically zero.

    ``aa`` has shape (m, d*p, d*p), ``ac`` has shape (m, d*p, p).
    """

    aa: np.ndarray
    ac: np.ndarray

    @property
    def m(self) -> int:
        return self.aa.shape[0]

    def unit_block(self, j: int) -> np.ndarray:
        """The ((d+1)p x (d+1)p) Hessian restricted to unit j's (a_j, c_j)."""
        dp, p = self.ac.shape[1], self.ac.shape[2]
        block = np.zeros((dp + p, dp + p))
        block[:dp, :dp] = self.aa[j]
        block[:dp, dp:] = self.ac[j]
        block[dp:, :dp] = self.ac[j].T
        return block

    def assemble(self) -> np.ndarray:
        """Dense Hessian in the ParamVector flattening order."""
        m, dp, p = self.ac.shape
        n_a = m * dp
        full = np.zeros((n_a + m * p, n_a + m * p))
        for j in range(m):
            ra = slice(j * dp, (j + 1) * dp)
            rc = slice(n_a + j * p, n_a + (j + 1) * p)
            full[ra, ra] = self.aa[j]
            full[ra, rc] = self.ac[j]
            full[rc, ra] = self.ac[j].T
        return full

    def spectral_norm(self) -> float:
        # units decouple, so the full operator norm is the largest per-unit norm
        norms = [np.abs(np.linalg.eigvalsh(self.unit_block(j))).max() for j in range(self.m)]
        return float(max(norms))


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Standard Gaussian initialization of every coefficient."""
    rng = np.random.default_rng(seed)
    flat = rng.standard_normal(spec.n_params)
    return ParamVector.from_flat(spec, flat)


def _as_batch(spec: ModelSpec, x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[None, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != spec.d:
        raise InputError(f"expected inputs of dimension {spec.d}, got shape {arr.shape}")
    return batch, single


def input_features(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    """h(x) for a batch: shape (n, d*p), input index major."""
    return eval_basis(spec.basis_spec, X).reshape(X.shape[0], spec.d * spec.p)


@dataclass
class _Pass:
    H: np.ndarray  # (n, d*p)
    pre: np.ndarray  # (n, m)
    ds: np.ndarray  # sigma'(pre)
    d2s: np.ndarray  # sigma''(pre)
    G: np.ndarray  # h(u), (n, m, p)
    dG: np.ndarray  # h'(u)
    d2G: np.ndarray  # h''(u)
    f: np.ndarray  # (n,)


def _forward_pass(spec: ModelSpec, params: ParamVector, X: np.ndarray) -> _Pass:
    params.check(spec)
    H = input_features(spec, X)
    pre = H @ params.a.T / math.sqrt(spec.d)
    s, ds, d2s = eval_activation_jet(spec.activation_spec, pre)
    G, dG, d2G = eval_basis_jet(spec.basis_spec, s)
    f = np.einsum("nmp,mp->n", G, params.c) / math.sqrt(spec.m)
    return _Pass(H, pre, ds, d2s, G, dG, d2G, f)


def predict(spec: ModelSpec, params: ParamVector, X) -> np.ndarray:
    """f(x) for every row of ``X``."""
    batch, _ = _as_batch(spec, X)
    params.check(spec)
    H = input_features(spec, batch)
    s, _, _ = eval_activation_jet(spec.activation_spec, H @ params.a.T / math.sqrt(spec.d))
    G = eval_basis(spec.basis_spec, s)
    return np.einsum("nmp,mp->n", G, params.c) / math.sqrt(spec.m)


def forward(spec: ModelSpec, params: ParamVector, x) -> float:
    """f(x) for a single input vector."""
    batch, single = _as_batch(spec, x)
    if not single:
        raise InputError("forward takes one input vector; use predict for batches")
    norm = float(np.linalg.norm(batch[0]))
    if norm > 1.0 + 1e-12:
        logger.debug("input norm %.6g exceeds 1; evaluating anyway", norm)
    return float(predict(spec, params, batch)[0])


def grad_factors(
    spec: ModelSpec, params: ParamVector, X
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Factored per-sample gradients (H, coef, grad_c, f).

    The a-part of sample i for unit j is ``coef[i, j] * H[i]``; it is left
    unexpanded so wide inputs never materialise an (n, m, d*p) tensor.
    """
    batch, _ = _as_batch(spec, X)
    fp = _forward_pass(spec, params, batch)
    grad_c = fp.G / math.sqrt(spec.m)
    coef = np.einsum("nmp,mp->nm", fp.dG, params.c) * fp.ds / math.sqrt(spec.m * spec.d)
    return fp.H, coef, grad_c, fp.f


def grad_batch(spec: ModelSpec, params: ParamVector, X) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample gradients: a-part (n, m, d*p) and c-part (n, m, p)."""
    H, coef, grad_c, _ = grad_factors(spec, params, X)
    return coef[:, :, None] * H[:, None, :], grad_c


def grad_f(spec: ModelSpec, params: ParamVector, x) -> ParamVector:
    """Gradient of f at a single input, in ParamVector layout."""
    batch, single = _as_batch(spec, x)
    if not single:
        raise InputError("grad_f takes one input vector")
    grad_a, grad_c = grad_batch(spec, params, batch)
    return ParamVector(grad_a[0], grad_c[0])


def hessian_f(
    spec: ModelSpec,
    params: ParamVector,
    x,
    max_params: int = DEFAULT_HESSIAN_MAX_PARAMS,
) -> HessianBlocks:
    """Exact Hessian of f at one input (verification scale only)."""
    if spec.n_params > max_params:
        raise SizeGuardError(
            f"dense Hessian refused: {spec.n_params} parameters exceeds guard {max_params}"
        )
    batch, single = _as_batch(spec, x)
    if not single:
        raise InputError("hessian_f takes one input vector")
    fp = _forward_pass(spec, params, batch)
    h = fp.H[0]
    # w_j = sigma''(pre_j) h'(u_j) + sigma'(pre_j)^2 h''(u_j)
    w = fp.d2s[0][:, None] * fp.dG[0] + (fp.ds[0] ** 2)[:, None] * fp.d2G[0]
    scale_aa = np.einsum("mp,mp->m", params.c, w) / (spec.d * math.sqrt(spec.m))
    aa = scale_aa[:, None, None] * np.outer(h, h)[None, :, :]
    scale_ac = fp.ds[0] / math.sqrt(spec.m * spec.d)
    ac = scale_ac[:, None, None] * h[None, :, None] * fp.dG[0][:, None, :]
    return HessianBlocks(aa=aa, ac=ac)


def save_params(path: str | Path, spec: ModelSpec, params: ParamVector) -> Path:
    """Write parameters with their architecture header.

    ``.json`` paths get a single JSON document; any other suffix gets one JSON
    header line followed by the little-endian float64 payload.
    """
    path = Path(path)
    params.check(spec)
    header = {**spec.to_dict(), "n_params": spec.n_params, "order": "a(unit,input,basis),c"}
    flat = params.flatten()
    if path.suffix == ".json":
        path.write_text(json.dumps({"header": header, "params": flat.tolist()}))
    else:
        with path.open("wb") as fh:
            fh.write(json.dumps(header).encode() + b"\n")
            fh.write(flat.astype("<f8").tobytes())
    return path


def load_params(path: str | Path) -> tuple[ModelSpec, ParamVector]:
    path = Path(path)
    try:
        if path.suffix == ".json":
            doc = json.loads(path.read_text())
            header, flat = doc["header"], np.asarray(doc["params"], dtype=np.float64)
        else:
            raw = path.read_bytes()
            line, _, payload = raw.partition(b"\n")
            header = json.loads(line)
            flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"{path}: not a parameter file ({exc})") from exc
    spec = ModelSpec.from_dict(header)
    if flat.size != spec.n_params:
        raise DataFormatError(f"{path}: payload has {flat.size} values, expected {spec.n_params}")
    return spec, ParamVector.from_flat(spec, flat)
