"""Payoffs, prices and the payoff <-> implied-view correspondence.

A payoff ``F`` priced under the market density ``m`` maps to its implied
view ``beta_F = F m / Price[F]``; conversely a believed density ``b`` maps
to the likelihood product ``b / m``.  Payoffs are only meaningful up to a
positive notional, so comparisons go through :func:`unit_price`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DomainViolation,
    FamilyEvaluationError,
    SupportViolation,
    ValidationError,
    ZeroPrice,
)
from .measures import (
    DENSITY_FLOOR,
    Distribution,
    Grid,
    as_vector,
    check_grids,
    normalize,
    normalize_log,
)


@dataclass(frozen=True, eq=False)
class Payoff:
    """Nonnegative payoff sampled on a grid (defined up to notional)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(as_vector(self.grid, self.values, "payoff"), dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValidationError("payoff values must be finite")
        if np.any(values < 0):
            raise ValidationError("payoffs are assets: values must be nonnegative")
        if not np.any(values > 0):
            raise ValidationError("payoff is identically zero")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def scaled(self, notional: float) -> "Payoff":
        if not notional > 0:
            raise ValidationError("notional must be positive")
        return Payoff(self.grid, notional * self.values)

    def __add__(self, other: "Payoff") -> "Payoff":
        check_grids(self.grid, other.grid)
        return Payoff(self.grid, self.values + other.values)


# --------------------------------------------------------------------------- #
# Constructors
# --------------------------------------------------------------------------- #


def constant(grid: Grid, value: float = 1.0) -> Payoff:
    return Payoff(grid, np.full(len(grid), float(value)))


def forward(grid: Grid) -> Payoff:
    return Payoff(grid, grid.points.copy())


def call(grid: Grid, strike: float) -> Payoff:
    return Payoff(grid, np.maximum(grid.points - strike, 0.0))


def put(grid: Grid, strike: float) -> Payoff:
    return Payoff(grid, np.maximum(strike - grid.points, 0.0))


def digital(grid: Grid, strike: float) -> Payoff:
    return Payoff(grid, (grid.points > strike).astype(float))


def piecewise_linear(grid: Grid, xs, ys) -> Payoff:
    """Linear interpolation of a table, flat beyond its ends."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2:
        raise ValidationError("piecewise-linear table needs matching x/y columns")
    if not np.all(np.diff(xs) > 0):
        raise ValidationError("piecewise-linear knots must be increasing")
    return Payoff(grid, np.interp(grid.points, xs, ys))


# --------------------------------------------------------------------------- #
# Pricing and views
# --------------------------------------------------------------------------- #


def price(F: Payoff, m: Distribution) -> float:
    check_grids(F.grid, m.grid)
    value = float(np.dot(m.mass, F.values))
    if not value > 0:
        raise ZeroPrice("payoff has zero price under the market")
    return value


def unit_price(F: Payoff, m: Distribution) -> Payoff:
    """Rescale ``F`` to unit price."""
    return Payoff(F.grid, F.values / price(F, m))


def implied_view(F: Payoff, m: Distribution) -> Distribution:
    """Growth-optimal view ``F m / Price[F]`` of a payoff."""
    p = price(F, m)
    return normalize(F.values * m.density / p, m.grid)


def likelihood_product(b: Distribution, m: Distribution) -> Payoff:
    """Likelihood product ``b / m`` at unit price."""
    check_grids(b.grid, m.grid)
    support = b.density > 0
    if np.any(m.density[support] < DENSITY_FLOOR):
        raise SupportViolation(
            "market density vanishes inside the support of the view",
            points=b.grid.points[support & (m.density < DENSITY_FLOOR)].tolist(),
        )
    f = np.zeros(len(b))
    f[support] = b.density[support] / m.density[support]
    return unit_price(Payoff(b.grid, f), m)


def log_positive(F: Payoff, what: str) -> np.ndarray:
    if np.any(F.values <= 0):
        raise DomainViolation(
            f"{what} must be strictly positive on the grid",
            points=F.grid.points[F.values <= 0].tolist(),
        )
    return np.log(F.values)


def payoff_from_log(grid: Grid, log_values, m: Distribution) -> Payoff:
    """Unit-price payoff ``exp(log_values)`` computed without overflow."""
    log_values = as_vector(grid, log_values)
    shifted = np.exp(log_values - np.max(log_values))
    return unit_price(Payoff(grid, shifted), m)


def power_product(f: Payoff, R: float, m: Distribution) -> Payoff:
    """Constant-risk-aversion product ``f^(1/R)`` at unit price."""
    if not R > 0:
        raise ValidationError("risk aversion must be positive")
    log_f = log_positive(f, "likelihood product")
    return payoff_from_log(f.grid, log_f / R, m)


def reciprocal_product(S: Payoff, m: Distribution) -> Payoff:
    """Unit-price payoff proportional to ``1 / S``."""
    return payoff_from_log(S.grid, -log_positive(S, "scenario product"), m)


# --------------------------------------------------------------------------- #
# Parametric market families
# --------------------------------------------------------------------------- #

FAMILY_KINDS = ("lognormal", "normal", "histogram")


@dataclass(frozen=True, eq=False)
class MarketFamily:
    """One-parameter family of market densities on a fixed grid.

    ``sigma`` is the width (volatility for ``lognormal``, standard deviation
    for ``normal``); ``anchor`` is the forward (``lognormal``) or the mean
    (``normal``).  ``vary`` names the parameter that sensitivities bump.
    A ``histogram`` family is a fixed tabulated density and does not depend
    on any parameter.
    """

    kind: str
    grid: Grid
    sigma: float = 0.2
    anchor: float = 1.0
    vary: str = "sigma"
    table: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValidationError(f"unknown market family {self.kind!r}")
        if self.vary not in ("sigma", "anchor"):
            raise ValidationError("vary must be 'sigma' or 'anchor'")
        if self.kind == "histogram" and self.table is None:
            raise ValidationError("histogram family needs a (x, density) table")
        if self.kind == "lognormal" and self.grid.lo <= 0:
            raise ValidationError("lognormal family needs a positive grid")

    @property
    def parameter(self) -> float:
        return self.sigma if self.vary == "sigma" else self.anchor

    def _log_raw(self, sigma: float, anchor: float) -> np.ndarray:
        x = self.grid.points
        if self.kind == "normal":
            if not sigma > 0:
                raise FamilyEvaluationError("normal family needs sigma > 0")
            z = (x - anchor) / sigma
            return -0.5 * z * z - math.log(sigma)
        if self.kind == "lognormal":
            if not (sigma > 0 and anchor > 0):
                raise FamilyEvaluationError("lognormal family needs sigma > 0 and anchor > 0")
            mu = math.log(anchor) - 0.5 * sigma * sigma
            z = (np.log(x) - mu) / sigma
            return -0.5 * z * z - math.log(sigma) - np.log(x)
        xs, ys = self.table
        dens = np.interp(x, xs, ys)
        if np.any(dens <= 0):
            raise FamilyEvaluationError("histogram density must be positive on the grid")
        return np.log(dens)

    def log_density(self, theta: float | None = None) -> np.ndarray:
        """Log of the grid-normalized density at parameter value ``theta``."""
        sigma, anchor = self.sigma, self.anchor
        if theta is not None:
            if self.vary == "sigma":
                sigma = float(theta)
            else:
                anchor = float(theta)
        raw = self._log_raw(sigma, anchor)
        top = np.max(raw)
        log_mass = top + math.log(float(np.dot(self.grid.weights, np.exp(raw - top))))
        return raw - log_mass

    def density(self, theta: float | None = None) -> Distribution:
        log_p = self.log_density(theta)
        if np.min(log_p) < math.log(DENSITY_FLOOR):
            raise FamilyEvaluationError("market density underflows on the grid")
        return normalize_log(log_p, self.grid)

    def with_parameter(self, theta: float) -> "MarketFamily":
        key = "sigma" if self.vary == "sigma" else "anchor"
        params = dict(kind=self.kind, grid=self.grid, sigma=self.sigma,
                      anchor=self.anchor, vary=self.vary, table=self.table)
        params[key] = float(theta)
        return MarketFamily(**params)


def default_bump(theta: float) -> float:
    return 1e-4 * max(abs(theta), 1e-8)


def score(family: MarketFamily, theta: float | None = None, bump: float | None = None) -> np.ndarray:
    """Central-difference ``d ln m_theta / d theta`` on the grid.

    The O(bump^2) bias of the difference quotient leaves a small nonzero
    mean; it is removed so that ``E_m[Score] = 0`` holds to rounding.  A
    constant shift does not change the score product.
    """
    theta = family.parameter if theta is None else float(theta)
    h = default_bump(theta) if bump is None else float(bump)
    if not h > 0:
        raise FamilyEvaluationError("bump must be positive")
    up = family.log_density(theta + h)
    down = family.log_density(theta - h)
    s = (up - down) / (2.0 * h)
    return s - float(np.dot(family.density(theta).mass, s))


def score_product(family: MarketFamily, theta: float | None = None,
                  bump: float | None = None) -> Payoff:
    """Exponential score product ``e^Score / Price[e^Score]`` under ``m_theta``."""
    theta = family.parameter if theta is None else float(theta)
    m = family.density(theta)
    return payoff_from_log(family.grid, score(family, theta, bump), m)


# --------------------------------------------------------------------------- #
# CSV
# --------------------------------------------------------------------------- #


def fmt(value: float) -> str:
    """Round-trippable float text (17 significant digits)."""
    return format(float(value), ".17g")


def write_columns(path, grid: Grid, columns: dict[str, np.ndarray]) -> None:
    """Write ``x`` followed by the given columns in insertion order."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", *columns])
        cols = [np.asarray(c, dtype=float) for c in columns.values()]
        for i, x in enumerate(grid.points):
            writer.writerow([fmt(x), *(fmt(c[i]) for c in cols)])


def read_columns(path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValidationError(f"{path}: CSV has no data rows")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in row] for row in body if row], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric CSV entry ({exc})") from None
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ValidationError(f"{path}: ragged CSV")
    return data[:, 0], {name: data[:, j] for j, name in enumerate(header[1:], start=1)}


def write_payoff_csv(path, F: Payoff) -> None:
    write_columns(path, F.grid, {"value": F.values})


def read_payoff_csv(path, grid: Grid) -> Payoff:
    xs, cols = read_columns(path)
    if len(cols) != 1:
        raise ValidationError(f"{path}: payoff CSV needs exactly two columns")
    if xs.shape != grid.points.shape or np.max(np.abs(xs - grid.points)) > 1e-12 * max(1.0, abs(grid.hi)):
        raise ValidationError(f"{path}: x column does not match the scenario grid")
    return Payoff(grid, next(iter(cols.values())))
