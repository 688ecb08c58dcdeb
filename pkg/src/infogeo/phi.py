"""Convex generators for phi-divergences.

A :class:`PhiFunction` bundles ``phi``, its first two derivatives and the
inverse of ``phi'``.  The hedging solvers only ever call
``derivative_inverse`` inside ``derivative_range``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import xlogy

from .errors import ValidationError

Array = np.ndarray


@dataclass(frozen=True)
class PhiFunction:
    name: str
    value: Callable[[Array], Array]
    derivative: Callable[[Array], Array]
    derivative_inverse: Callable[[Array], Array]
    second_derivative: Callable[[Array], Array]
    domain: tuple[float, float] = (0.0, math.inf)
    include_lower: bool = False
    # image of the domain under phi'
    derivative_range: tuple[float, float] = (-math.inf, math.inf)
    # g -> phi'^-1(hi - g) for g > 0, where hi = derivative_range[1] is finite.
    # Lets solvers approach the pole without forming hi - g in floating point.
    margin_inverse: Callable[[Array], Array] | None = None

    def inverse_from_margin(self, g) -> Array:
        """``phi'^-1(hi - g)`` for the finite upper end ``hi`` of ``phi'``."""
        if self.margin_inverse is not None:
            return self.margin_inverse(np.asarray(g, dtype=float))
        return self.derivative_inverse(self.derivative_range[1] - np.asarray(g, dtype=float))

    def in_domain(self, u) -> bool:
        u = np.asarray(u, dtype=float)
        lo, hi = self.domain
        above = u >= lo if self.include_lower else u > lo
        return bool(np.all(above) and np.all(u < hi))

    def check(self, samples=None, tol: float = 1e-10) -> None:
        """Sample-based validation of ``phi(1) = 0``, convexity and the inverse."""
        if abs(float(self.value(np.array([1.0]))[0])) > tol:
            raise ValidationError(f"{self.name}: phi(1) != 0")
        if samples is None:
            samples = np.geomspace(0.05, 20.0, 101)
        u = np.asarray(samples, dtype=float)
        u = u[(u > self.domain[0]) & (u < self.domain[1])]
        d = self.derivative(u)
        if not np.all(np.diff(d) > 0):
            raise ValidationError(f"{self.name}: phi' is not strictly increasing")
        back = self.derivative_inverse(d)
        if np.max(np.abs(back - u) / np.maximum(1.0, np.abs(u))) > tol:
            raise ValidationError(f"{self.name}: derivative_inverse does not invert phi'")


def kl() -> PhiFunction:
    """``u ln u``; the divergence is the relative entropy."""
    return PhiFunction(
        name="kl",
        value=lambda u: xlogy(u, u),
        derivative=lambda u: np.log(u) + 1.0,
        derivative_inverse=lambda v: np.exp(np.asarray(v) - 1.0),
        second_derivative=lambda u: 1.0 / np.asarray(u),
        domain=(0.0, math.inf),
        include_lower=True,
    )


def reverse_kl() -> PhiFunction:
    return PhiFunction(
        name="reverse-kl",
        value=lambda u: -np.log(u),
        derivative=lambda u: -1.0 / np.asarray(u),
        derivative_inverse=lambda v: -1.0 / np.asarray(v),
        second_derivative=lambda u: 1.0 / np.asarray(u) ** 2,
        domain=(0.0, math.inf),
        derivative_range=(-math.inf, 0.0),
        margin_inverse=lambda g: 1.0 / g,
    )


def chi_squared() -> PhiFunction:
    """``(u - 1)^2 / 2``.  Defined on the whole line; solvers check ``H >= 0``."""
    return PhiFunction(
        name="chi2",
        value=lambda u: 0.5 * (np.asarray(u) - 1.0) ** 2,
        derivative=lambda u: np.asarray(u) - 1.0,
        derivative_inverse=lambda v: np.asarray(v) + 1.0,
        second_derivative=lambda u: np.ones_like(np.asarray(u, dtype=float)),
        domain=(-math.inf, math.inf),
    )


def alpha_family(alpha: float) -> PhiFunction:
    """``(u^a - a u + a - 1) / (a (a - 1))``.

    The limits ``a -> 1`` and ``a -> 0`` are the KL and reverse-KL generators
    and are returned as such.
    """
    a = float(alpha)
    if abs(a - 1.0) < 1e-12:
        return kl()
    if abs(a) < 1e-12:
        return reverse_kl()
    k = a - 1.0
    scale = a * k

    def value(u):
        u = np.asarray(u, dtype=float)
        return (u**a - a * u + a - 1.0) / scale

    def derivative(u):
        return (np.asarray(u, dtype=float) ** k - 1.0) / k

    def derivative_inverse(v):
        return (1.0 + k * np.asarray(v, dtype=float)) ** (1.0 / k)

    def second_derivative(u):
        return np.asarray(u, dtype=float) ** (a - 2.0)

    if k > 0:
        rng = (-1.0 / k, math.inf)
    else:
        rng = (-math.inf, -1.0 / k)
    return PhiFunction(
        name=f"alpha={a:g}",
        value=value,
        derivative=derivative,
        derivative_inverse=derivative_inverse,
        second_derivative=second_derivative,
        domain=(0.0, math.inf),
        include_lower=a > 0,
        derivative_range=rng,
        margin_inverse=(lambda g: (-k * g) ** (1.0 / k)) if k < 0 else None,
    )


def from_utility(utility) -> PhiFunction:
    """``phi(u) = U(1) - U(u)``: the generator that turns a hedge into an investment."""
    u1 = float(utility.value(np.array([1.0]))[0])
    return PhiFunction(
        name=f"-U[{utility.name}]",
        value=lambda u: u1 - utility.value(u),
        derivative=lambda u: -utility.marginal(u),
        derivative_inverse=lambda v: utility.marginal_inverse(-np.asarray(v, dtype=float)),
        second_derivative=lambda u: -utility.marginal_derivative(u),
        domain=(0.0, math.inf),
        derivative_range=(-math.inf, 0.0),
        margin_inverse=utility.marginal_inverse,
    )


BUILTIN = {
    "kl": kl,
    "reverse-kl": reverse_kl,
    "chi2": chi_squared,
}


def by_name(name: str, **params) -> PhiFunction:
    if name in ("alpha", "alpha-family"):
        return alpha_family(params["alpha"])
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ValidationError(f"unknown phi function {name!r}") from None
