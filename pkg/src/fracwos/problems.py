"""Benchmark exterior-value problems on the unit ball.

Each problem bundles the fractional order, the domain, the interior source
f, the exterior data g (defined on the whole complement, not just the
boundary), and, where known, the exact solution for error reporting.
Scalar fields are vectorized callables mapping an (N, 2) point array to an
(N,) value array; g must accept arbitrary finite points since the
alpha-stable exit overshoots the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Callable

import numpy as np
from scipy.special import gamma

from .geometry import Domain, unit_ball
from .sampling import StableParams, _check_alpha, make_params


def _r2(pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    return pts[..., 0] ** 2 + pts[..., 1] ** 2


class _ConstantField:
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, pts):
        return np.full(np.asarray(pts).shape[:-1], self.value)


class _BallPolyField:
    """c * (1 - |x|^2)_+^p  (zero outside the unit ball)."""

    def __init__(self, coeff: float, power: float):
        self.coeff = float(coeff)
        self.power = float(power)

    def __call__(self, pts):
        return self.coeff * np.maximum(1.0 - _r2(pts), 0.0) ** self.power


class _Example2Source:
    def __init__(self, alpha: float):
        self.alpha = alpha
        self.scale = 2.0 ** alpha * gamma(2.0 + alpha / 2.0) * gamma(1.0 + alpha / 2.0)

    def __call__(self, pts):
        return (1.0 - (1.0 + self.alpha / 2.0) * _r2(pts)) * self.scale


class _Example3Exterior:
    def __call__(self, pts):
        return np.sin(_r2(pts))


class _Example3Source:
    def __call__(self, pts):
        return 2.0 + _r2(pts)


@dataclass(frozen=True)
class Problem:
    """One exterior-value problem instance."""

    alpha: float
    domain: Domain
    f: Callable
    g: Callable
    exact: Callable | None = None
    name: str = "custom"
    params: StableParams = dfield(init=False)

    def __post_init__(self):
        _check_alpha(self.alpha)
        object.__setattr__(self, "params", make_params(self.alpha))


def example1(alpha: float) -> Problem:
    """Unit source, zero exterior data, on the unit ball.

    The solution is the mean first-exit time of the alpha-stable process:
    u(x) = (1 - |x|^2)^(alpha/2) / (2^alpha Gamma(1 + alpha/2)^2).
    """
    _check_alpha(alpha)
    coeff = 1.0 / (2.0 ** alpha * gamma(1.0 + alpha / 2.0) ** 2)
    return Problem(alpha=alpha, domain=unit_ball(),
                   f=_ConstantField(1.0), g=_ConstantField(0.0),
                   exact=_BallPolyField(coeff, alpha / 2.0), name="example1")


def example2(alpha: float) -> Problem:
    """Polynomial source whose solution is u(x) = (1 - |x|^2)^(1 + alpha/2)."""
    _check_alpha(alpha)
    return Problem(alpha=alpha, domain=unit_ball(),
                   f=_Example2Source(alpha), g=_ConstantField(0.0),
                   exact=_BallPolyField(1.0, 1.0 + alpha / 2.0), name="example2")


def example3(alpha: float) -> Problem:
    """Oscillatory exterior data g = sin(|x|^2) with source f = 2 + |x|^2.

    Less regular coefficients; no closed-form solution is attached.
    """
    _check_alpha(alpha)
    return Problem(alpha=alpha, domain=unit_ball(),
                   f=_Example3Source(), g=_Example3Exterior(), name="example3")


def custom(alpha: float, domain: Domain, f: Callable, g: Callable,
           exact: Callable | None = None) -> Problem:
    return Problem(alpha=alpha, domain=domain, f=f, g=g, exact=exact)


BY_NAME = {"example1": example1, "example2": example2, "example3": example3}


def by_name(name: str, alpha: float) -> Problem:
    try:
        return BY_NAME[name](alpha)
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; "
                         f"choose from {sorted(BY_NAME)} or build a custom one")
