"""Dual geodesics through the market density and iso-risk projections.

The mixture geodesic ``(1 - t) m + t beta`` is proportional liquidation
of a portfolio into cash; the exponential geodesic ``m S^t / Price[S^t]``
rescales risk aversion on the scenario product.  Risk against ``S``
grows monotonically along the latter, which makes iso-risk projections a
one-dimensional root find.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    GridMismatch,
    Infeasible,
    InvalidRange,
    MaxIterations,
    OverflowRisk,
    TargetUnreachable,
)
from .measures import (
    Distribution,
    check_grids,
    kl_divergence,
    normalize,
    normalize_log,
    variance,
)
from .products import Payoff, fmt, implied_view, log_positive, unit_price
from .risk import risk_scalar_product

log = logging.getLogger(__name__)

#: Largest admissible ``|t| * max|ln S|`` on an exponential geodesic.
EXPONENT_BUDGET = 200.0

# ``ln S`` spread below which a scenario is treated as constant
FLAT_SCENARIO = 1e-13


@dataclass(frozen=True)
class SolverResult:
    """Outcome of an iterative solve."""

    distribution: Distribution
    multipliers: tuple[float, ...]
    residuals: tuple[float, ...]
    iterations: int
    converged: bool = True
    method: str = ""
    diagnostics: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max((abs(r) for r in self.residuals), default=0.0)


@dataclass(frozen=True)
class TangentPair:
    bra: np.ndarray
    ket: np.ndarray
    weights: np.ndarray

    def scalar_product(self) -> float:
        return float(np.sum(self.weights * self.bra * self.ket))


@dataclass(frozen=True)
class RiskConstraint:
    """``Risk_S[beta] = target`` with ``S`` held at unit price."""

    scenario: Payoff
    target: float

    @classmethod
    def under(cls, m: Distribution, scenario: Payoff, target: float) -> "RiskConstraint":
        return cls(unit_price(scenario, m), float(target))


# --------------------------------------------------------------------------- #
# Geodesics
# --------------------------------------------------------------------------- #


def m_geodesic(m: Distribution, beta: Distribution, t: float) -> Distribution:
    check_grids(m.grid, beta.grid)
    if not 0.0 <= t <= 1.0:
        raise InvalidRange("mixture geodesics are evaluated for t in [0, 1]")
    return normalize((1.0 - t) * m.density + t * beta.density, m.grid)


def _check_budget(t: float, log_ratio: np.ndarray, budget: float) -> None:
    scale = float(np.max(np.abs(log_ratio)))
    if abs(t) * scale > budget:
        raise OverflowRisk(
            f"|t| * max|ln S| = {abs(t) * scale:.3g} exceeds the exponent budget {budget:g}",
            t=t,
        )


def e_geodesic(m: Distribution, beta_s: Distribution, t: float,
               budget: float = EXPONENT_BUDGET) -> Distribution:
    """Normalized ``m^(1-t) beta_s^t``; ``t`` may lie outside ``[0, 1]``."""
    check_grids(m.grid, beta_s.grid)
    log_m = m.log_density()
    log_ratio = beta_s.log_density() - log_m
    _check_budget(t, log_ratio, budget)
    return normalize_log(log_m + t * log_ratio, m.grid)


def e_geodesic_payoff(m: Distribution, S: Payoff, t: float,
                      budget: float = EXPONENT_BUDGET) -> Distribution:
    """``m S^t / Price[S^t]`` for a scenario payoff ``S``."""
    check_grids(m.grid, S.grid)
    log_s = log_positive(S, "scenario product")
    log_s = log_s - math.log(float(np.dot(m.mass, S.values)))
    _check_budget(t, log_s, budget)
    return normalize_log(m.log_density() + t * log_s, m.grid)


@dataclass(frozen=True)
class Geodesic:
    kind: str
    endpoint_a: Distribution
    endpoint_b: Distribution
    t_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("mixture", "exponential"):
            raise InvalidRange(f"unknown geodesic kind {self.kind!r}")
        check_grids(self.endpoint_a.grid, self.endpoint_b.grid)
        if self.kind == "mixture" and (self.t_range[0] < 0 or self.t_range[1] > 1):
            raise InvalidRange("mixture geodesics cannot be extrapolated")
        if self.kind == "exponential":
            # fail early on non-positive endpoints
            self.endpoint_a.log_density()
            self.endpoint_b.log_density()

    def evaluate(self, t: float) -> Distribution:
        lo, hi = self.t_range
        if not lo <= t <= hi:
            raise InvalidRange(f"t={t} outside {self.t_range}")
        if self.kind == "mixture":
            return m_geodesic(self.endpoint_a, self.endpoint_b, t)
        return e_geodesic(self.endpoint_a, self.endpoint_b, t)

    def trace(self, ts) -> np.ndarray:
        """Densities at each ``t``, one row per parameter value."""
        return np.array([self.evaluate(float(t)).density for t in ts])

    def write_csv(self, path, ts) -> None:
        rows = self.trace(ts)
        grid = self.endpoint_a.grid
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(["t", *(fmt(x) for x in grid.points)]) + "\n")
            for t, row in zip(ts, rows):
                fh.write(",".join([fmt(t), *(fmt(v) for v in row)]) + "\n")


def tangent_pair(base: Distribution, toward_mix: Distribution,
                 toward_exp: Distribution) -> TangentPair:
    check_grids(base.grid, toward_mix.grid, toward_exp.grid)
    bra = toward_mix.density - base.density
    ket = toward_exp.log_density() - base.log_density()
    return TangentPair(bra=bra, ket=ket, weights=base.grid.weights)


# --------------------------------------------------------------------------- #
# Risk along the exponential geodesic
# --------------------------------------------------------------------------- #


def risk_along_geodesic(m: Distribution, S: Payoff, t: float,
                        budget: float = EXPONENT_BUDGET) -> tuple[float, float]:
    """Risk of the geodesic point ``beta_t`` and ``Var_{beta_t}[ln S]``.

    The derivative of the first with respect to ``t`` is the second.
    """
    beta_s = implied_view(S, m)
    beta_t = e_geodesic_payoff(m, S, t, budget)
    risk = risk_scalar_product(beta_t, m, beta_s)
    return risk, variance(beta_t, log_positive(S, "scenario product"))


def _unit_log_scenario(m: Distribution, S: Payoff) -> np.ndarray:
    check_grids(m.grid, S.grid)
    log_s = log_positive(S, "scenario product")
    return log_s - math.log(float(np.dot(m.mass, S.values)))


def _risk_on_geodesic(m: Distribution, log_s: np.ndarray, t: float) -> float:
    # cheap path for the root finder: E_{beta_t}[ln S] - E_m[ln S]
    a = t * log_s
    a = a - a.max()
    q = m.mass * np.exp(a)
    return float(np.dot(q, log_s) / q.sum() - np.dot(m.mass, log_s))


def _t_limit(log_s: np.ndarray, budget: float) -> float:
    return budget / float(np.max(np.abs(log_s)))


def e_project_iso_risk(m: Distribution, constraint: RiskConstraint,
                       budget: float = EXPONENT_BUDGET,
                       tol: float = 1e-10) -> tuple[Distribution, float]:
    """Point of the exponential geodesic through ``m`` carrying the target risk.

    Returns ``(beta, t_star)``.
    """
    log_s = _unit_log_scenario(m, constraint.scenario)
    r = float(constraint.target)
    if np.ptp(log_s) < FLAT_SCENARIO:
        if r == 0.0:
            return m, 0.0
        raise Infeasible("constant scenario carries no risk; only r = 0 is attainable")
    if r == 0.0:
        return m, 0.0

    t_max = _t_limit(log_s, budget)
    gap = lambda t: _risk_on_geodesic(m, log_s, t) - r  # noqa: E731
    direction = 1.0 if r > 0 else -1.0
    # geometric expansion of the initial [-8, 8] bracket, clamped to the budget
    inner, outer = 0.0, direction * min(8.0, t_max)
    while gap(outer) * direction < 0:
        if abs(outer) >= t_max:
            lim = _risk_on_geodesic(m, log_s, outer)
            raise TargetUnreachable(
                f"risk {r:g} beyond the clamped geodesic (reachable up to {lim:.6g})",
                limit=lim,
            )
        inner, outer = outer, direction * min(2.0 * abs(outer), t_max)
    lo, hi = sorted((inner, outer))
    t_star = brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    beta = normalize_log(m.log_density() + t_star * log_s, m.grid)
    residual = _risk_on_geodesic(m, log_s, t_star) - r
    if abs(residual) > max(tol, 1e-10):
        raise MaxIterations(f"projection residual {residual:.3g} above tolerance")
    return beta, float(t_star)


def e_project_multi(m: Distribution, constraints, budget: float = EXPONENT_BUDGET,
                    tol: float = 1e-11, max_iter: int = 200) -> SolverResult:
    """KL projection of ``m`` onto the intersection of several iso-risk sets.

    The solution has the form ``m exp(sum_k mu_k ln S_k - A(mu))``.  The
    multipliers minimise the convex dual ``A(mu) - sum_k mu_k c_k`` with
    ``c_k = r_k + E_m[ln S_k]``; its gradient is the vector of constraint
    residuals and its Hessian the covariance of ``ln S`` under the current
    point.  Damped Newton with backtracking; falls back to cyclic
    one-constraint updates when Newton stalls.
    """
    constraints = list(constraints)
    if not constraints:
        raise InvalidRange("at least one constraint is required")
    for c in constraints:
        if not m.grid.compatible(c.scenario.grid):
            raise GridMismatch("constraint scenario lives on a different grid")
    L = np.array([_unit_log_scenario(m, c.scenario) for c in constraints])  # (K, n)
    targets = np.array([float(c.target) for c in constraints])
    base = m.mass
    m_mean = L @ base
    c = targets + m_mean
    K = len(constraints)

    flat = np.ptp(L, axis=1) < FLAT_SCENARIO
    if np.any(flat & (targets != 0.0)):
        raise Infeasible("a constant scenario can only carry zero risk")
    scale = np.max(np.abs(L), axis=1)

    def state(mu):
        a = mu @ L
        top = a.max()
        e = base * np.exp(a - top)
        z = e.sum()
        p = e / z
        dual = top + math.log(z) - mu @ c
        mean = L @ p
        grad = mean - c
        cent = L - mean[:, None]
        hess = (cent * p) @ cent.T
        return dual, grad, hess

    def out_of_budget(mu) -> bool:
        return float(np.abs(mu) @ scale) > budget

    mu = np.zeros(K)
    dual, grad, hess = state(mu)
    method = "newton"
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            break
        evals, evecs = np.linalg.eigh(hess)
        null = evecs[:, evals <= 1e-12 * max(evals.max(), 1e-300)]
        if null.size:
            # a residual along a flat direction of the dual cannot be removed:
            # the scenarios are dependent and their targets disagree
            stuck = null @ (null.T @ grad)
            if np.max(np.abs(stuck)) >= tol and np.max(np.abs(grad - stuck)) < tol:
                raise Infeasible(
                    "dependent scenarios carry inconsistent targets",
                    residuals=grad.tolist(),
                )
        step = -np.linalg.lstsq(hess, grad, rcond=1e-12)[0]
        slope = float(grad @ step)
        if not slope < 0:
            step, slope = -grad, -float(grad @ grad)
        alpha = 1.0
        while True:
            trial = mu + alpha * step
            if not out_of_budget(trial):
                d_new, g_new, h_new = state(trial)
                if d_new <= dual + 1e-4 * alpha * slope:
                    break
            alpha *= 0.5
            if alpha < 1e-12:
                break
        if alpha < 1e-12:
            method = "newton+cyclic"
            trial = _cyclic_sweep(mu, L, base, c, budget / np.maximum(scale, FLAT_SCENARIO))
            if trial is None or out_of_budget(trial):
                raise Infeasible(
                    "constraint set is empty within the exponent budget",
                    multipliers=mu.tolist(),
                )
            d_new, g_new, h_new = state(trial)
            if d_new > dual + 1e-14 * max(1.0, abs(dual)):
                raise Infeasible("dual objective cannot be decreased; constraints inconsistent")
        mu, dual, grad, hess = trial, d_new, g_new, h_new
    if np.max(np.abs(grad)) >= tol:
        raise MaxIterations(
            f"no convergence after {max_iter} iterations",
            residuals=grad.tolist(),
        )

    beta = normalize_log(m.log_density() + mu @ L, m.grid)
    residuals = tuple(
        risk_scalar_product(beta, m, normalize_log(m.log_density() + row, m.grid)) - r
        for row, r in zip(L, targets)
    )
    log.debug("multi-projection converged in %d iterations (%s)", it, method)
    return SolverResult(
        distribution=beta,
        multipliers=tuple(float(v) for v in mu),
        residuals=tuple(float(v) for v in residuals),
        iterations=it,
        method=method,
        diagnostics={"kl_to_market": kl_divergence(beta, m)},
    )


def _cyclic_sweep(mu, L, base, c, limits):
    """One pass of coordinate-wise exact dual minimisation."""
    mu = mu.copy()
    for k in range(len(mu)):
        others = mu @ L - mu[k] * L[k]

        def gap(v, k=k, others=others):
            a = others + v * L[k]
            e = base * np.exp(a - a.max())
            return float(np.dot(e, L[k]) / e.sum() - c[k])

        lo, hi = -limits[k], limits[k]
        try:
            if gap(lo) > 0 or gap(hi) < 0:
                return None
            mu[k] = brentq(gap, lo, hi, xtol=1e-15, maxiter=200)
        except (ValueError, RuntimeError):
            return None
    return mu


def orthogonality_check(beta_pi: Distribution, m: Distribution, S: Payoff,
                        budget: float = EXPONENT_BUDGET) -> dict:
    """Angles at the iso-risk foot point of ``beta_pi``.

    Both scalar products vanish when the exponential geodesic meets the
    iso-risk surface at a right angle.
    """
    beta_s = implied_view(S, m)
    r = risk_scalar_product(beta_pi, m, beta_s)
    foot, t_r = e_project_iso_risk(m, RiskConstraint.under(m, S, r), budget)
    toward_s = tangent_pair(foot, beta_pi, beta_s).scalar_product()
    toward_m = tangent_pair(foot, beta_pi, m).scalar_product()
    return {
        "risk": r,
        "t_r": t_r,
        "foot": foot,
        "product_scenario": toward_s,
        "product_market": toward_m,
    }
