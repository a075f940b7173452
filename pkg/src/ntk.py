"""NTK features at initialization, the empirical NTK margin and reference points."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import SampleSet, require_samples
from .errors import InputError, SizeGuardError
from .gd import ReferencePoint
from .loss import DEFAULT_BATCH_SIZE, empirical_risk
from .model import ModelSpec, ParamVector, grad_factors

logger = logging.getLogger(__name__)

DEFAULT_MARGIN_ITERS = 2000
DEFAULT_MARGIN_TOL = 1e-6
DENSE_FEATURE_LIMIT = 50_000_000


@dataclass(frozen=True, eq=False)
class NTKFeatures:
    """Rows grad f_{Theta(0)}(x_i), stored in factored form.

    The a-block of row i for unit j is ``coef[i, j] * H[i]``; the c-block is
    ``grad_c[i]``. :attr:`phi` materialises the dense (n, n_params) matrix in
    ParamVector flattening order.
    """

    spec: ModelSpec
    H: np.ndarray
    coef: np.ndarray
    grad_c: np.ndarray

    @property
    def n(self) -> int:
        return self.H.shape[0]

    @property
    def dim(self) -> int:
        return self.spec.n_params

    @property
    def phi(self) -> np.ndarray:
        if self.n * self.dim > DENSE_FEATURE_LIMIT:
            raise SizeGuardError(
                f"dense NTK features of shape ({self.n}, {self.dim}) exceed {DENSE_FEATURE_LIMIT}"
            )
        a = (self.coef[:, :, None] * self.H[:, None, :]).reshape(self.n, -1)
        return np.concatenate([a, self.grad_c.reshape(self.n, -1)], axis=1)

    def matvec(self, w: np.ndarray) -> np.ndarray:
        """phi @ w without forming phi."""
        theta = ParamVector.from_flat(self.spec, w)
        a_part = np.einsum("nm,nm->n", self.coef, self.H @ theta.a.T)
        return a_part + np.einsum("nmp,mp->n", self.grad_c, theta.c)

    def rmatvec(self, v: np.ndarray) -> np.ndarray:
        """phi.T @ v without forming phi."""
        a = (v[:, None] * self.coef).T @ self.H
        c = np.einsum("n,nmp->mp", v, self.grad_c)
        return np.concatenate([a.reshape(-1), c.reshape(-1)])

    def scaled(self, factor: float) -> NTKFeatures:
        return NTKFeatures(self.spec, self.H, self.coef * factor, self.grad_c * factor)

    def row_norms(self) -> np.ndarray:
        a2 = (self.coef**2) * (self.H**2).sum(axis=1)[:, None]
        return np.sqrt(a2.sum(axis=1) + (self.grad_c**2).sum(axis=(1, 2)))


def ntk_features(
    spec: ModelSpec,
    params0: ParamVector,
    data: SampleSet,
    batch_size: int = DEFAULT_BATCH_SIZE,
) -> NTKFeatures:
    require_samples(data)
    if data.d != spec.d:
        raise InputError(f"data dimension {data.d} does not match model d={spec.d}")
    parts = [
        grad_factors(spec, params0, data.x[i : i + batch_size])
        for i in range(0, data.n, batch_size)
    ]
    H = np.concatenate([p[0] for p in parts])
    coef = np.concatenate([p[1] for p in parts])
    grad_c = np.concatenate([p[2] for p in parts])
    return NTKFeatures(spec, H, coef, grad_c)


def save_features(path: str | Path, features: NTKFeatures) -> Path:
    """Dump the dense feature matrix as ``.npy`` for offline analysis."""
    path = Path(path)
    np.save(path, features.phi)
    return path


@dataclass
class MarginResult:
    gamma_hat: float
    theta0: np.ndarray
    separable: bool
    iters: int
    tau_suggested: float | None = None

    def to_dict(self) -> dict:
        return {
            "gamma_hat": self.gamma_hat,
            "separable": self.separable,
            "tau_suggested": self.tau_suggested,
            "iters": self.iters,
        }


class _Signed:
    """The labelled rows z_i = y_i * phi_i behind a dense array or NTKFeatures."""

    def __init__(self, features, labels: np.ndarray):
        self._features = features
        self._y = labels

    def margins(self, w: np.ndarray) -> np.ndarray:
        if isinstance(self._features, NTKFeatures):
            return self._y * self._features.matvec(w)
        return self._y * (self._features @ w)

    def combine(self, weights: np.ndarray) -> np.ndarray:
        """sum_i weights_i z_i"""
        if isinstance(self._features, NTKFeatures):
            return self._features.rmatvec(weights * self._y)
        return self._features.T @ (weights * self._y)

    def row_norms(self) -> np.ndarray:
        if isinstance(self._features, NTKFeatures):
            return self._features.row_norms()
        return np.linalg.norm(self._features, axis=1)


def _validate_labels(labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != (n,):
        raise InputError(f"expected {n} labels, got shape {y.shape}")
    if n < 2 or not ((y > 0).any() and (y < 0).any()):
        raise InputError("margin estimation needs at least one sample of each class")
    return y


def estimate_margin(
    features: NTKFeatures | np.ndarray,
    labels,
    iters: int = DEFAULT_MARGIN_ITERS,
    tol: float = DEFAULT_MARGIN_TOL,
) -> MarginResult:
    """Approximate max_{||w||=1} min_i y_i <phi_i, w> by projected subgradient ascent.

    Starts from the normalised mean of y_i phi_i and keeps the best unit
    direction seen. The reported margin is recomputed from the features at
    that direction, never taken from the optimizer state.
    """
    if not isinstance(features, NTKFeatures):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise InputError(f"features must be a matrix, got shape {features.shape}")
    n = features.n if isinstance(features, NTKFeatures) else features.shape[0]
    z = _Signed(features, _validate_labels(labels, n))

    scale = float(z.row_norms().max())
    if scale == 0.0:
        raise InputError("all feature rows are zero")
    w = z.combine(np.full(n, 1.0 / n))
    if not np.linalg.norm(w) > 1e-12 * scale:
        # the labelled mean cancels; start from the first labelled row
        first = np.zeros(n)
        first[0] = 1.0
        w = z.combine(first)
    w = w / np.linalg.norm(w)

    best_w, best_gamma = w, -math.inf
    for t in range(iters + 1):
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            break
        unit = w / norm
        mg = z.margins(unit)
        if mg.min() > best_gamma:
            best_w, best_gamma = unit, float(mg.min())
        if t == iters:
            break
        pick = np.zeros(n)
        pick[int(np.argmin(mg))] = 1.0
        w = w + z.combine(pick) / (scale * math.sqrt(t + 1.0))
        # project back onto the unit ball
        w = w / max(1.0, float(np.linalg.norm(w)))

    theta0 = best_w / np.linalg.norm(best_w)
    gamma_hat = float(z.margins(theta0).min())
    logger.info("NTK margin estimate %.6g after %d iterations", gamma_hat, iters)
    return MarginResult(gamma_hat=gamma_hat, theta0=theta0, separable=gamma_hat > tol, iters=iters)


def suggest_tau(gamma_hat: float, T: int, n: int, delta: float | None = None) -> float:
    """(log T + sqrt(log(n/delta))) / gamma_hat with unit constants; delta defaults to 1/n."""
    if not gamma_hat > 0:
        raise InputError(f"tau needs a positive margin, got {gamma_hat}")
    delta = 1.0 / n if delta is None else delta
    return (math.log(max(T, 1)) + math.sqrt(math.log(n / delta))) / gamma_hat


def reference_point(
    spec: ModelSpec,
    params0: ParamVector,
    result: MarginResult,
    tau: float,
    eta_t: float,
    data: SampleSet | None = None,
    loss_star: float | None = None,
) -> ReferencePoint:
    """Theta* = Theta(0) + tau * theta0, so ||Theta(0) - Theta*|| = tau.

    L_S(Theta*) is evaluated on ``data`` unless ``loss_star`` is given.
    """
    if not result.separable:
        raise InputError(f"reference point needs a separable margin, got {result.gamma_hat}")
    if not tau > 0:
        raise InputError(f"tau must be positive, got {tau}")
    if (data is None) == (loss_star is None):
        raise InputError("pass exactly one of data or loss_star")
    flat = params0.flatten() + tau * result.theta0
    theta_star = ParamVector.from_flat(spec, flat)
    if loss_star is None:
        loss_star = empirical_risk(spec, theta_star, data)
    return ReferencePoint(theta_star=theta_star, lam=float(tau), loss_star=loss_star, eta_t=eta_t)
