"""Logistic loss, empirical risk, accuracy and the full-batch loss gradient."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

from .data import SampleSet, require_samples
from .model import ModelSpec, ParamVector, grad_factors, predict

DEFAULT_BATCH_SIZE = 2048


class LossFamily(str, Enum):
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class LossSpec:
    """Constants of a self-bounded loss: |l'| <= d1_bound, l'' <= d2_bound, |l'| <= alpha*l."""

    family: LossFamily = LossFamily.LOGISTIC
    d1_bound: float = 1.0
    d2_bound: float = 0.25
    alpha: float = 1.0


LOGISTIC = LossSpec()


def loss_jet(u):
    """``(l(u), l'(u), l''(u))`` for l(u) = log(1 + exp(-u)), stable for large |u|."""
    u = np.asarray(u, dtype=np.float64)
    value = np.logaddexp(0.0, -u)
    d1 = -expit(-u)
    d2 = expit(u) * expit(-u)
    if u.ndim == 0:
        return float(value), float(d1), float(d2)
    return value, d1, d2


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def margins(
    spec: ModelSpec, params: ParamVector, data: SampleSet, batch_size: int = DEFAULT_BATCH_SIZE
) -> np.ndarray:
    """y_i * f(x_i) for every sample."""
    require_samples(data)
    out = np.empty(data.n)
    for sl in _chunks(data.n, batch_size):
        out[sl] = data.y[sl] * predict(spec, params, data.x[sl])
    return out


def empirical_risk(
    spec: ModelSpec, params: ParamVector, data: SampleSet, batch_size: int = DEFAULT_BATCH_SIZE
) -> float:
    """L_S = mean of l(y_i f(x_i))."""
    value, _, _ = loss_jet(margins(spec, params, data, batch_size))
    return float(value.mean())


def accuracy(
    spec: ModelSpec, params: ParamVector, data: SampleSet, batch_size: int = DEFAULT_BATCH_SIZE
) -> float:
    """Fraction with y_i f(x_i) > 0; ties count as errors."""
    return float((margins(spec, params, data, batch_size) > 0).mean())


def evaluate(
    spec: ModelSpec, params: ParamVector, data: SampleSet, batch_size: int = DEFAULT_BATCH_SIZE
) -> tuple[float, float]:
    """(loss, accuracy) from a single pass."""
    mg = margins(spec, params, data, batch_size)
    value, _, _ = loss_jet(mg)
    return float(value.mean()), float((mg > 0).mean())


def loss_gradient(
    spec: ModelSpec, params: ParamVector, data: SampleSet, batch_size: int = DEFAULT_BATCH_SIZE
) -> tuple[float, ParamVector]:
    """Return L_S and its gradient (1/n) sum_i l'(y_i f(x_i)) y_i grad f(x_i)."""
    require_samples(data)
    total = 0.0
    grad_a = np.zeros_like(params.a)
    grad_c = np.zeros_like(params.c)
    for sl in _chunks(data.n, batch_size):
        H, coef, gc, f = grad_factors(spec, params, data.x[sl])
        value, d1, _ = loss_jet(data.y[sl] * f)
        weight = d1 * data.y[sl]
        total += float(value.sum())
        grad_a += (weight[:, None] * coef).T @ H
        grad_c += np.einsum("n,nmp->mp", weight, gc)
    n = data.n
    return total / n, ParamVector(grad_a / n, grad_c / n)


def gradient_norm(grad: ParamVector) -> float:
    return math.sqrt(float((grad.a**2).sum() + (grad.c**2).sum()))
