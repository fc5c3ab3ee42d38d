"""Quasi-parabolic compactification of R^n onto the open unit ball of p_alpha.

A point ``y`` is sent to ``x`` with ``y_j = kappa**alpha_j * x_j`` where
``kappa = 1 / (1 - p2c(x))``.  The boundary ``p2c == 1`` (the horizon)
is the image of infinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

HORIZON_TOL = 1e-12


class HorizonError(ArithmeticError):
    """The point lies on (or numerically at) the horizon, i.e. at infinity."""


@dataclass(frozen=True)
class EmbeddingSpec:
    alpha: tuple[int, ...]
    beta: tuple[int, ...]
    c: int

    @classmethod
    def from_alpha(cls, alpha: Sequence[int]) -> "EmbeddingSpec":
        alpha = tuple(int(a) for a in alpha)
        positive = [a for a in alpha if a > 0]
        if not positive:
            raise ValueError("type must have at least one positive entry")
        c = math.lcm(*positive)
        beta = tuple(c // a if a > 0 else 0 for a in alpha)
        return cls(alpha, beta, c)

    @property
    def n(self) -> int:
        return len(self.alpha)

    @property
    def active(self) -> tuple[int, ...]:
        """Indices with a positive type exponent."""
        return tuple(i for i, a in enumerate(self.alpha) if a > 0)


@dataclass(frozen=True)
class EmbeddedPoint:
    t: float
    x: tuple[float, ...]
    p2c: float
    kappa_inv: float

    @property
    def on_horizon(self) -> bool:
        return abs(self.p2c - 1.0) <= HORIZON_TOL


def p2c(spec: EmbeddingSpec, x: Sequence[float]) -> float:
    """The 2c-th power of p_alpha: sum of x_i**(2 beta_i) over active indices."""
    return float(sum(float(x[i]) ** (2 * spec.beta[i]) for i in spec.active))


def p_alpha(spec: EmbeddingSpec, y: Sequence[float]) -> float:
    return p2c(spec, y) ** (1.0 / (2 * spec.c))


def grad_p2c(spec: EmbeddingSpec, x: Sequence[float]) -> np.ndarray:
    g = np.zeros(spec.n)
    for i in spec.active:
        b = spec.beta[i]
        g[i] = 2 * b * float(x[i]) ** (2 * b - 1)
    return g


def scale(spec: EmbeddingSpec, s: float, y: Sequence[float]) -> np.ndarray:
    """Apply the quasi-homogeneous dilation s**Lambda to ``y``."""
    return np.array([s ** a * float(v) for a, v in zip(spec.alpha, y)])


def kappa_of(spec: EmbeddingSpec, y: Sequence[float]) -> float:
    """Solve kappa**(2c) - kappa**(2c-1) = p2c(y) for kappa >= 1.

    Works in u = kappa - 1, where the equation reads (1+u)**(2c-1) * u = rhs;
    this keeps full relative precision for points close to the origin.
    """
    rhs = p2c(spec, y)
    if rhs == 0.0:
        return 1.0
    m = 2 * spec.c - 1

    def phi(u: float) -> float:
        return (1.0 + u) ** m * u - rhs

    lo, hi = 0.0, max(1.0, rhs ** (1.0 / (2 * spec.c)))
    while phi(hi) < 0.0:
        hi *= 2.0
    u = min(rhs, hi) if rhs < 1.0 else 0.5 * (lo + hi)
    tol = 1e-14 * (1.0 + rhs)
    for _ in range(200):
        f = phi(u)
        if abs(f) <= tol:
            break
        if f > 0.0:
            hi = u
        else:
            lo = u
        df = (1.0 + u) ** (m - 1) * (1.0 + (m + 1) * u)
        step = u - f / df
        u = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * hi:
            break
    return 1.0 + u


def embed(spec: EmbeddingSpec, t: float, y: Sequence[float]) -> EmbeddedPoint:
    kappa = kappa_of(spec, y)
    x = tuple(float(v) * kappa ** (-a) for a, v in zip(spec.alpha, y))
    return EmbeddedPoint(float(t), x, p2c(spec, x), 1.0 / kappa)


def make_point(spec: EmbeddingSpec, t: float, x: Sequence[float]) -> EmbeddedPoint:
    x = tuple(float(v) for v in x)
    q = p2c(spec, x)
    return EmbeddedPoint(float(t), x, q, 1.0 - q)


def unembed(spec: EmbeddingSpec, pt: EmbeddedPoint) -> tuple[float, np.ndarray]:
    q = p2c(spec, pt.x)
    if q >= 1.0 - 1e-15:
        raise HorizonError(f"point with p2c={q!r} is on the horizon")
    kappa = 1.0 / (1.0 - q)
    return pt.t, np.array([kappa ** a * v for a, v in zip(spec.alpha, pt.x)])


def to_horizon(spec: EmbeddingSpec, x: Sequence[float]) -> np.ndarray:
    """Radially rescale x (along the dilation orbit) so that p2c == 1."""
    q = p2c(spec, x)
    if q <= 0.0:
        raise ValueError("cannot project the origin onto the horizon")
    lam = q ** (-1.0 / (2 * spec.c))
    return scale(spec, lam, x)
