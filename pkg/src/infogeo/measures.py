"""Outcome grids, discrete densities, expectations and divergences.

Everything downstream integrates against the trapezoid weights of a
one-dimensional :class:`Grid`.  A :class:`Distribution` is a density
sampled on the grid, normalized so that ``sum(w * p) == 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DomainViolation,
    GridMismatch,
    InvalidRange,
    SupportViolation,
    ValidationError,
    ZeroMass,
)

#: Densities below this value are treated as zero inside logarithms.
DENSITY_FLOOR = 1e-300

NORMALIZATION_TOL = 1e-10


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def trapezoid_weights(points: np.ndarray) -> np.ndarray:
    """Trapezoid quadrature weights for arbitrary (sorted) nodes."""
    points = np.asarray(points, dtype=float)
    dx = np.diff(points)
    w = np.zeros_like(points)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered outcome nodes with positive quadrature weights."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = _frozen(self.points)
        weights = _frozen(self.weights)
        if points.ndim != 1 or points.size < 3:
            raise InvalidRange("a grid needs at least 3 points")
        if weights.shape != points.shape:
            raise InvalidRange("points and weights differ in length")
        if not np.all(np.diff(points) > 0):
            raise InvalidRange("grid points must be strictly increasing")
        if not np.all(weights > 0):
            raise InvalidRange("quadrature weights must be strictly positive")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def from_points(cls, points) -> "Grid":
        return cls(points, trapezoid_weights(points))

    def __len__(self) -> int:
        return self.points.size

    @property
    def lo(self) -> float:
        return float(self.points[0])

    @property
    def hi(self) -> float:
        return float(self.points[-1])

    def compatible(self, other: "Grid") -> bool:
        if self is other:
            return True
        return np.array_equal(self.points, other.points) and np.array_equal(
            self.weights, other.weights
        )

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))


def check_grids(*grids: Grid) -> Grid:
    """Return the common grid or raise :class:`GridMismatch`."""
    first = grids[0]
    for g in grids[1:]:
        if not first.compatible(g):
            raise GridMismatch("objects live on different grids")
    return first


def as_vector(grid: Grid, values, name: str = "vector") -> np.ndarray:
    """Coerce ``values`` to a float vector matching ``grid`` (scalars broadcast)."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 0:
        return np.full(len(grid), float(arr))
    if arr.shape != (len(grid),):
        raise GridMismatch(f"{name} has shape {arr.shape}, grid has {len(grid)} points")
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """A normalized density on a grid."""

    grid: Grid
    density: np.ndarray

    def __post_init__(self):
        density = _frozen(self.density)
        if density.shape != (len(self.grid),):
            raise GridMismatch("density length does not match the grid")
        if not np.all(np.isfinite(density)) or np.any(density < 0):
            raise ValidationError("density must be finite and nonnegative")
        mass = self.grid.integrate(density)
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise ValidationError(f"density integrates to {mass!r}, not 1")
        object.__setattr__(self, "density", density)

    def __len__(self) -> int:
        return self.density.size

    def log_density(self) -> np.ndarray:
        """Natural log of the density; raises if any node is below the floor."""
        if np.any(self.density < DENSITY_FLOOR):
            raise SupportViolation("density vanishes on the grid; logarithm undefined")
        return np.log(self.density)

    @property
    def mass(self) -> np.ndarray:
        """Quadrature mass ``w_i * p_i`` of every node."""
        return self.grid.weights * self.density

    def allclose(self, other: "Distribution", atol: float = 1e-10) -> bool:
        check_grids(self.grid, other.grid)
        return bool(np.max(np.abs(self.density - other.density)) <= atol)


def make_grid(lo: float, hi: float, n: int, scheme: str = "uniform") -> Grid:
    """Build a grid on ``[lo, hi]`` with trapezoid weights.

    ``scheme`` is ``"uniform"`` or ``"log-uniform"`` (geometric spacing,
    requires ``lo > 0``).
    """
    if not (np.isfinite(lo) and np.isfinite(hi)) or not lo < hi:
        raise InvalidRange(f"need lo < hi, got [{lo}, {hi}]")
    if int(n) != n or n < 3:
        raise InvalidRange(f"need at least 3 points, got {n}")
    n = int(n)
    if scheme == "uniform":
        points = np.linspace(lo, hi, n)
    elif scheme in ("log-uniform", "log_uniform", "log"):
        if lo <= 0:
            raise InvalidRange("log-uniform grids need lo > 0")
        points = np.geomspace(lo, hi, n)
        points[0], points[-1] = lo, hi
    else:
        raise InvalidRange(f"unknown grid scheme {scheme!r}")
    return Grid.from_points(points)


def normalize(raw, grid: Grid) -> Distribution:
    raw = as_vector(grid, raw, "raw density")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ValidationError("raw density must be finite and nonnegative")
    mass = grid.integrate(raw)
    if not mass > 0:
        raise ZeroMass("raw density has zero mass on the grid")
    return Distribution(grid, raw / mass)


def normalize_log(log_raw, grid: Grid) -> Distribution:
    """Normalize ``exp(log_raw)`` without overflow."""
    log_raw = as_vector(grid, log_raw, "log density")
    top = np.max(log_raw)
    if not np.isfinite(top):
        raise ZeroMass("log density has no finite maximum")
    return normalize(np.exp(log_raw - top), grid)


def expectation(p: Distribution, g) -> float:
    g = as_vector(p.grid, g, "integrand")
    return float(np.dot(p.mass, g))


def variance(p: Distribution, g) -> float:
    g = as_vector(p.grid, g, "integrand")
    # centred form avoids cancellation for large offsets
    centred = g - expectation(p, g)
    return float(np.dot(p.mass, centred * centred))


def _log_ratio(p: Distribution, q: Distribution) -> tuple[np.ndarray, np.ndarray]:
    """Log ratio on the support of ``p`` plus the support mask."""
    support = p.density > 0
    if np.any(q.density[support] < DENSITY_FLOOR):
        bad = p.grid.points[support & (q.density < DENSITY_FLOOR)]
        raise SupportViolation(
            "reference density vanishes where the other is positive",
            points=bad.tolist(),
        )
    ratio = np.zeros(len(p))
    ratio[support] = np.log(p.density[support]) - np.log(q.density[support])
    return ratio, support


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """Relative entropy ``D(p || q) = sum w p ln(p/q)``."""
    check_grids(p.grid, q.grid)
    ratio, _ = _log_ratio(p, q)
    return float(np.dot(p.mass, ratio))


def phi_divergence(phi, p: Distribution, q: Distribution) -> float:
    """``D_phi(p || q) = sum w q phi(p/q)``.

    Nodes where ``q`` carries no mass are skipped; ``p`` must vanish there.
    """
    check_grids(p.grid, q.grid)
    live = q.density > 0
    if np.any(p.density[~live] > 0):
        raise DomainViolation("p is positive where q vanishes")
    u = p.density[live] / q.density[live]
    if not phi.in_domain(u):
        raise DomainViolation(f"likelihood ratio leaves the domain of {phi.name}")
    return float(np.dot(q.mass[live], phi.value(u)))
