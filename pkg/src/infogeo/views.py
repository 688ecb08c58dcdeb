"""Believed distributions from data, soft evidence or moment targets.

Every constructor returns the posterior together with the likelihood
product that turns the prior into it, ``posterior = product * prior``.
The product has unit price under the prior.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .errors import SupportViolation, TargetUnreachable, ValidationError, ZeroEvidence
from .measures import DENSITY_FLOOR, Distribution, Grid, as_vector, normalize
from .products import Payoff, fmt


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Conditional densities ``P(y|x)``: row ``i`` is the density in ``y`` given ``x_i``."""

    y_grid: Grid
    kernel: np.ndarray

    def __post_init__(self):
        K = np.array(self.kernel, dtype=float)
        if K.ndim != 2 or K.shape[1] != len(self.y_grid):
            raise ValidationError("kernel must have one column per y-grid point")
        if not np.all(np.isfinite(K)) or np.any(K < 0):
            raise ValidationError("kernel entries must be finite and nonnegative")
        mass = K @ self.y_grid.weights
        if np.max(np.abs(mass - 1.0)) > 1e-8:
            raise ValidationError("each conditional P(.|x) must integrate to 1 over y")
        K.setflags(write=False)
        object.__setattr__(self, "kernel", K)

    @classmethod
    def from_function(cls, x_grid: Grid, y_grid: Grid, density) -> "ObservationModel":
        """Tabulate ``density(x, y)`` and renormalise each row on ``y_grid``."""
        K = np.asarray(density(x_grid.points[:, None], y_grid.points[None, :]), dtype=float)
        mass = K @ y_grid.weights
        if np.any(mass <= 0):
            raise ValidationError("conditional density vanishes on the y grid")
        return cls(y_grid, K / mass[:, None])

    @classmethod
    def gaussian(cls, x_grid: Grid, y_grid: Grid, noise: float) -> "ObservationModel":
        """``y = x + noise * eps`` with standard normal ``eps``."""
        if not noise > 0:
            raise ValidationError("noise must be positive")
        return cls.from_function(
            x_grid, y_grid, lambda x, y: np.exp(-0.5 * ((y - x) / noise) ** 2)
        )

    def marginal(self, prior: Distribution) -> np.ndarray:
        """``P(y) = E_prior[P(y|x)]`` on the y grid."""
        if prior.grid.points.shape[0] != self.kernel.shape[0]:
            raise ValidationError("kernel rows do not match the prior grid")
        return prior.mass @ self.kernel

    def write_csv(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([fmt(y) for y in self.y_grid.points])
            for row in self.kernel:
                writer.writerow([fmt(v) for v in row])

    @classmethod
    def read_csv(cls, path, x_grid: Grid) -> "ObservationModel":
        """Header row holds the y points; one row per x-grid point follows."""
        with Path(path).open(encoding="utf-8", newline="") as fh:
            rows = [row for row in csv.reader(fh) if row]
        try:
            ys = np.array([float(v) for v in rows[0]])
            K = np.array([[float(v) for v in row] for row in rows[1:]])
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"{path}: malformed kernel CSV ({exc})") from None
        if K.shape != (len(x_grid), ys.size):
            raise ValidationError(f"{path}: kernel must be {len(x_grid)} x {ys.size}")
        return cls(Grid.from_points(ys), K)


def _with_product(prior: Distribution, L: np.ndarray) -> tuple[Distribution, Payoff]:
    posterior = normalize(L * prior.density, prior.grid)
    return posterior, Payoff(prior.grid, L)


def bayes_likelihood(prior: Distribution, likelihood_of_data) -> tuple[Distribution, Payoff]:
    """``L_B = P(D|x) / P(D)`` with evidence ``P(D) = E_prior[P(D|x)]``."""
    like = np.array(as_vector(prior.grid, likelihood_of_data, "likelihood"), dtype=float)
    if not np.all(np.isfinite(like)) or np.any(like < 0):
        raise ValidationError("data likelihood must be finite and nonnegative")
    evidence = float(np.dot(prior.mass, like))
    if not evidence > 0:
        raise ZeroEvidence("data has zero probability under the prior")
    return _with_product(prior, like / evidence)


def jeffrey_likelihood(prior: Distribution, model: ObservationModel,
                       soft_evidence: Distribution) -> tuple[Distribution, Payoff]:
    """``L_J(x) = int e(y) P(y|x) / P(y) dy`` for soft evidence ``e``."""
    if not soft_evidence.grid.compatible(model.y_grid):
        raise ValidationError("soft evidence must live on the observation grid")
    marginal = model.marginal(prior)
    active = soft_evidence.density > 0
    if np.any(marginal[active] < DENSITY_FLOOR):
        raise SupportViolation(
            "soft evidence puts weight where the prior predicts nothing",
            points=model.y_grid.points[active & (marginal < DENSITY_FLOOR)].tolist(),
        )
    ratio = np.zeros_like(marginal)
    ratio[active] = soft_evidence.density[active] / marginal[active]
    L = model.kernel @ (model.y_grid.weights * ratio)
    return _with_product(prior, L)


def point_evidence(y_grid: Grid, y0: float) -> Distribution:
    """All soft-evidence mass on the y-grid node nearest ``y0``."""
    j = int(np.argmin(np.abs(y_grid.points - y0)))
    e = np.zeros(len(y_grid))
    e[j] = 1.0 / y_grid.weights[j]
    return Distribution(y_grid, e)


def _tilted_mean(log_base: np.ndarray, g: np.ndarray, c: float) -> float:
    a = log_base + c * g
    w = np.exp(a - a.max())
    return float(np.dot(w, g) / w.sum())


def canonical_likelihood(prior: Distribution, g, target: float,
                         ) -> tuple[Distribution, Payoff, float]:
    """Exponential tilt ``L_C ~ e^(c g)`` with ``E_posterior[g] = target``."""
    g = np.array(as_vector(prior.grid, g, "statistic"), dtype=float)
    support = prior.density > 0
    gs = g[support]
    target = float(target)
    if not gs.min() < target < gs.max():
        raise TargetUnreachable(
            f"target {target:g} is outside ({gs.min():g}, {gs.max():g})"
        )
    log_base = np.log(prior.mass[support])

    def gap(c):
        return _tilted_mean(log_base, gs, c) - target

    lo, hi = -1.0, 1.0
    for _ in range(200):
        if gap(lo) <= 0 <= gap(hi):
            break
        lo, hi = 2 * lo, 2 * hi
    else:
        raise TargetUnreachable("could not bracket the tilt parameter")
    c = brentq(gap, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)

    a = c * gs
    tilt = np.exp(a - a.max())
    L = np.zeros(len(prior))
    L[support] = tilt / float(np.dot(prior.mass[support], tilt))
    posterior, product = _with_product(prior, L)
    return posterior, product, float(c)
