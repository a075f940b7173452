"""Univariate basis families and activations, with their jets and bound constants.

Both basis families are clamped uniform B-splines evaluated with the
Cox-de Boor recurrence: ``HAT`` is the degree-1 case (triangles centred on
uniformly spaced knots), ``CUBIC_BSPLINE`` the degree-3 case. Every function
here accepts scalars or arrays; array inputs gain a trailing axis of length p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError


class BasisFamily(str, Enum):
    HAT = "hat"
    CUBIC_BSPLINE = "cubic_bspline"


class ActivationFamily(str, Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"


_DEGREE = {BasisFamily.HAT: 1, BasisFamily.CUBIC_BSPLINE: 3}
_MIN_P = {BasisFamily.HAT: 2, BasisFamily.CUBIC_BSPLINE: 4}

# sup |sigma|, sup |sigma'|, sup |sigma''| over the real line
_ACTIVATION_SUPREMA = {
    ActivationFamily.TANH: (1.0, 1.0, 4.0 / (3.0 * math.sqrt(3.0))),
    ActivationFamily.SIGMOID: (1.0, 0.25, 1.0 / (6.0 * math.sqrt(3.0))),
}

# Relative slack on sampled maxima of piecewise polynomials of degree >= 2,
# whose extrema can fall between grid points.
GRID_MARGIN = 1e-6


@dataclass(frozen=True)
class BasisSpec:
    """A clamped uniform B-spline basis of ``p`` functions on ``[lo, hi]``."""

    family: BasisFamily = BasisFamily.CUBIC_BSPLINE
    p: int = 8
    lo: float = -1.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "family", BasisFamily(self.family))
        except ValueError as exc:
            raise ConfigurationError(f"unknown basis family {self.family!r}") from exc
        if self.p < _MIN_P[self.family]:
            raise ConfigurationError(
                f"{self.family.value} basis needs p >= {_MIN_P[self.family]}, got {self.p}"
            )
        if not self.lo < self.hi:
            raise ConfigurationError(f"basis domain [{self.lo}, {self.hi}] is empty")

    @property
    def degree(self) -> int:
        return _DEGREE[self.family]

    @cached_property
    def breakpoints(self) -> np.ndarray:
        """The distinct knot positions, strictly increasing from lo to hi."""
        return np.linspace(self.lo, self.hi, self.p - self.degree + 1)

    @cached_property
    def knots(self) -> np.ndarray:
        """Clamped knot vector: endpoints repeated ``degree + 1`` times."""
        k = self.degree
        return np.concatenate([np.full(k, self.lo), self.breakpoints, np.full(k, self.hi)])


@dataclass(frozen=True)
class ActivationSpec:
    family: ActivationFamily = ActivationFamily.TANH

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "family", ActivationFamily(self.family))
        except ValueError as exc:
            raise ConfigurationError(f"unknown activation {self.family!r}") from exc


@dataclass(frozen=True)
class BoundConstants:
    """Uniform bounds on basis/activation values and derivatives.

    ``violations`` names every constant that does not exist as a finite
    bound (the hat basis has no bounded second derivative).
    """

    b_bound: float
    b1_bound: float
    b2_bound: float
    sigma_bound: float
    sigma1_bound: float
    sigma2_bound: float
    violations: tuple[str, ...] = field(default=())

    @property
    def smooth(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        def finite(value: float) -> float | None:
            return value if math.isfinite(value) else None

        return {
            "b_bound": finite(self.b_bound),
            "b1_bound": finite(self.b1_bound),
            "b2_bound": finite(self.b2_bound),
            "sigma_bound": self.sigma_bound,
            "sigma1_bound": self.sigma1_bound,
            "sigma2_bound": self.sigma2_bound,
            "violations": list(self.violations),
        }


def _inverse(den: np.ndarray) -> np.ndarray:
    # 0/0 := 0 on repeated knots
    return np.divide(1.0, den, out=np.zeros_like(den), where=den > 0)


def _cox_de_boor(knots: np.ndarray, degree: int, v: np.ndarray) -> list[np.ndarray]:
    """Return basis tables for degrees 0..degree at the (clamped) points ``v``."""
    t = knots
    table = ((v[:, None] >= t[None, :-1]) & (v[:, None] < t[None, 1:])).astype(np.float64)
    last_span = np.flatnonzero(t[:-1] < t[1:])[-1]
    at_end = v >= t[-1]
    table[at_end] = 0.0
    table[at_end, last_span] = 1.0

    tables = [table]
    for k in range(1, degree + 1):
        left = (v[:, None] - t[None, : -(k + 1)]) * _inverse(t[k:-1] - t[: -(k + 1)])
        right = (t[None, k + 1 :] - v[:, None]) * _inverse(t[k + 1 :] - t[1:-k])
        table = left * table[:, :-1] + right * table[:, 1:]
        tables.append(table)
    return tables


def _differentiate(lower: np.ndarray, knots: np.ndarray, k: int) -> np.ndarray:
    """Derivative of the degree-``k`` basis from the degree-``k-1`` level below."""
    t = knots
    return k * (
        lower[:, :-1] * _inverse(t[k:-1] - t[: -(k + 1)])
        - lower[:, 1:] * _inverse(t[k + 1 :] - t[1:-k])
    )


def _prepare(spec: BasisSpec, v) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    arr = np.asarray(v, dtype=np.float64)
    flat = arr.reshape(-1)
    return np.clip(flat, spec.lo, spec.hi), flat, arr.shape


def eval_basis(spec: BasisSpec, v) -> np.ndarray:
    """Evaluate ``(b_1(v), ..., b_p(v))``; inputs outside the domain are clamped."""
    clamped, _, shape = _prepare(spec, v)
    values = _cox_de_boor(spec.knots, spec.degree, clamped)[-1]
    return values.reshape(*shape, spec.p)


def eval_basis_jet(spec: BasisSpec, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values, first and second derivatives of every basis function at ``v``.

    Derivatives are right-sided at knots and zero outside ``[lo, hi]`` (the
    clamped extension is flat there). The hat family's second derivative is
    reported as zero away from knots.
    """
    clamped, raw, shape = _prepare(spec, v)
    k = spec.degree
    tables = _cox_de_boor(spec.knots, k, clamped)
    values = tables[-1]
    first = _differentiate(tables[-2], spec.knots, k)
    if k >= 2:
        second = _differentiate(_differentiate(tables[-3], spec.knots, k - 1), spec.knots, k)
    else:
        second = np.zeros_like(values)

    outside = (raw < spec.lo) | (raw > spec.hi)
    if outside.any():
        first[outside] = 0.0
        second[outside] = 0.0
    out_shape = (*shape, spec.p)
    return values.reshape(out_shape), first.reshape(out_shape), second.reshape(out_shape)


def eval_activation_jet(spec: ActivationSpec, u):
    """Return ``(sigma(u), sigma'(u), sigma''(u))``."""
    u = np.asarray(u, dtype=np.float64)
    if spec.family is ActivationFamily.TANH:
        s = np.tanh(u)
        ds = 1.0 - s * s
        d2s = -2.0 * s * ds
    else:
        s = expit(u)
        ds = s * (1.0 - s)
        d2s = ds * (1.0 - 2.0 * s)
    if s.ndim == 0:
        return float(s), float(ds), float(d2s)
    return s, ds, d2s


def _basis_grid(spec: BasisSpec, points: int, offset: float) -> np.ndarray:
    step = (spec.hi - spec.lo) / (points - 1)
    grid = spec.lo + step * (np.arange(points) + offset)
    # knots and their left neighbours catch both one-sided limits of the derivatives
    edges = np.concatenate([spec.breakpoints, np.nextafter(spec.breakpoints, -np.inf)])
    return np.clip(np.concatenate([grid, edges]), spec.lo, spec.hi)


def bound_constants(
    basis: BasisSpec,
    act: ActivationSpec,
    points: int = 20001,
    offset: float = 0.0,
) -> BoundConstants:
    """Uniform bounds over a dense grid of the basis domain and the activation range.

    ``offset`` shifts the grid by a fraction of its step, which is how a fresh
    re-sampling is drawn when checking that the reported constants dominate.
    """
    if points < 10_000:
        raise ConfigurationError(f"bound sampling needs at least 10^4 points, got {points}")
    values, first, second = eval_basis_jet(basis, _basis_grid(basis, points, offset))
    slack = 1.0 + (GRID_MARGIN if basis.degree >= 2 else 0.0)

    b_bound = min(1.0, float(np.abs(values).max()) * slack)
    b1_bound = float(np.abs(first).max()) * slack
    violations: tuple[str, ...] = ()
    if basis.degree >= 2:
        b2_bound = float(np.abs(second).max()) * slack
    else:
        b2_bound = math.inf
        violations = ("b2_bound",)

    u = np.linspace(-20.0, 20.0, 4 * points + 1) + offset * 1e-3
    s, ds, d2s = eval_activation_jet(act, u)
    sup = _ACTIVATION_SUPREMA[act.family]
    return BoundConstants(
        b_bound=b_bound,
        b1_bound=b1_bound,
        b2_bound=b2_bound,
        sigma_bound=max(sup[0], float(np.abs(s).max())),
        sigma1_bound=max(sup[1], float(np.abs(ds).max())),
        sigma2_bound=max(sup[2], float(np.abs(d2s).max())),
        violations=violations,
    )
