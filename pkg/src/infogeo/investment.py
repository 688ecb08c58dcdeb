"""Expected-utility products, the payoff-elasticity equation and risk recycling.

An investor with belief ``b`` and utility ``U`` facing the market ``m`` buys
``F = U'^-1(lam0 / f)`` with ``f = b / m``.  The same payoff is a pure hedge
for the generator ``phi = U(1) - U`` and the scenario ``S ~ exp(-1/f)``,
which :func:`duality_check` verifies numerically.  Conversely a pure hedge
can be sold to investors whose belief and risk aversion :func:`recycle`
reconstructs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (
    BudgetInfeasible,
    Infeasible,
    MaxIterations,
    StiffProfile,
    TargetUnreachable,
    ValidationError,
    ZeroExposure,
)
from .hedging import HedgeResult, elasticity, pure_hedge, pure_hedge_from_log
from .measures import Distribution, check_grids
from .phi import PhiFunction, from_utility
from .products import (
    Payoff,
    fmt,
    implied_view,
    likelihood_product,
    log_positive,
    reciprocal_product,
    unit_price,
    write_columns,
)
from .risk import specific_risk

Array = np.ndarray


# --------------------------------------------------------------------------- #
# Utilities
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Utility:
    """Increasing, strictly concave utility on ``F > 0``.

    ``marginal_derivative`` is ``U''``; the relative risk aversion is
    ``R(F) = -F U''(F) / U'(F)``.
    """

    name: str
    value: Callable[[Array], Array]
    marginal: Callable[[Array], Array]
    marginal_inverse: Callable[[Array], Array]
    marginal_derivative: Callable[[Array], Array]

    def relative_risk_aversion(self, F):
        F = np.asarray(F, dtype=float)
        return -F * self.marginal_derivative(F) / self.marginal(F)

    def check(self, samples=None, tol: float = 1e-10) -> None:
        if samples is None:
            samples = np.geomspace(0.05, 20.0, 101)
        F = np.asarray(samples, dtype=float)
        up = self.marginal(F)
        if np.any(up <= 0) or not np.all(np.diff(up) < 0):
            raise ValidationError(f"{self.name}: U' must be positive and decreasing")
        back = self.marginal_inverse(up)
        if np.max(np.abs(back - F) / np.maximum(1.0, F)) > tol:
            raise ValidationError(f"{self.name}: marginal_inverse does not invert U'")


def crra(R: float) -> Utility:
    """Constant relative risk aversion ``R``; ``R = 1`` is log utility."""
    R = float(R)
    if not R > 0:
        raise ValidationError("risk aversion must be positive")
    if abs(R - 1.0) < 1e-12:
        return log_utility()
    k = 1.0 - R

    def value(F):
        F = np.asarray(F, dtype=float)
        return np.expm1(k * np.log(F)) / k

    return Utility(
        name=f"crra(R={R:g})",
        value=value,
        marginal=lambda F: np.asarray(F, dtype=float) ** -R,
        marginal_inverse=lambda v: np.asarray(v, dtype=float) ** (-1.0 / R),
        marginal_derivative=lambda F: -R * np.asarray(F, dtype=float) ** (-R - 1.0),
    )


def log_utility() -> Utility:
    return Utility(
        name="log",
        value=lambda F: np.log(np.asarray(F, dtype=float)),
        marginal=lambda F: 1.0 / np.asarray(F, dtype=float),
        marginal_inverse=lambda v: 1.0 / np.asarray(v, dtype=float),
        marginal_derivative=lambda F: -1.0 / np.asarray(F, dtype=float) ** 2,
    )


def mixed_crra(R1: float, R2: float, weight: float = 0.5) -> Utility:
    """``U' = (1-w) F^-R1 + w F^-R2``: risk aversion moves from ``R2`` to ``R1`` as F grows.

    The relative risk aversion is a state-dependent average of ``R1`` and
    ``R2``.  ``U'`` has no closed-form inverse; it is inverted by Newton
    iteration on ``ln F``, which converges globally because ``ln U'`` is
    convex and strictly decreasing in ``ln F``.
    """
    R1, R2, w = float(R1), float(R2), float(weight)
    if not (R1 > 0 and R2 > 0 and 0 < w < 1):
        raise ValidationError("mixed CRRA needs R1, R2 > 0 and 0 < weight < 1")
    c = np.array([1.0 - w, w])
    rs = np.array([R1, R2])

    def _power_integral(F, r):
        if abs(r - 1.0) < 1e-12:
            return np.log(F)
        return np.expm1((1.0 - r) * np.log(F)) / (1.0 - r)

    def value(F):
        F = np.asarray(F, dtype=float)
        return c[0] * _power_integral(F, R1) + c[1] * _power_integral(F, R2)

    def marginal(F):
        F = np.asarray(F, dtype=float)
        return c[0] * F**-R1 + c[1] * F**-R2

    def marginal_derivative(F):
        F = np.asarray(F, dtype=float)
        return -R1 * c[0] * F ** (-R1 - 1.0) - R2 * c[1] * F ** (-R2 - 1.0)

    def marginal_inverse(v):
        target = np.log(np.asarray(v, dtype=float))
        y = -target / float(np.dot(c, rs))
        for _ in range(100):
            terms = np.log(c)[:, None] - rs[:, None] * np.atleast_1d(y)[None, :]
            top = terms.max(axis=0)
            weights = np.exp(terms - top)
            total = weights.sum(axis=0)
            g = top + np.log(total) - np.atleast_1d(target)
            slope = -(rs[:, None] * weights).sum(axis=0) / total
            step = g / slope
            y = np.atleast_1d(y) - step
            if np.max(np.abs(step) / np.maximum(1.0, np.abs(y))) < 1e-15:
                break
        y = y.reshape(np.shape(target))
        return np.exp(y)

    return Utility(
        name=f"mixed-crra(R1={R1:g},R2={R2:g},w={w:g})",
        value=value,
        marginal=marginal,
        marginal_inverse=marginal_inverse,
        marginal_derivative=marginal_derivative,
    )


def utility_by_name(name: str, **params) -> Utility:
    if name == "log":
        return log_utility()
    if name == "crra":
        return crra(params["R"])
    if name == "mixed-crra":
        return mixed_crra(params["R1"], params["R2"], params.get("weight", 0.5))
    raise ValidationError(f"unknown utility {name!r}")


# --------------------------------------------------------------------------- #
# Unconstrained investment
# --------------------------------------------------------------------------- #


def _log_price(log_F: Array, m: Distribution) -> float:
    top = float(np.max(log_F))
    return top + math.log(float(np.dot(m.mass, np.exp(log_F - top))))


def _solve_increasing(fn, lo: float = -1.0, hi: float = 1.0, what: str = "budget") -> float:
    """Root of an increasing scalar map, expanding the bracket geometrically."""
    flo, fhi = fn(lo), fn(hi)
    for _ in range(60):
        if flo <= 0 <= fhi:
            break
        width = hi - lo
        if flo > 0:
            lo, flo = lo - 2 * width, fn(lo - 2 * width)
        else:
            hi, fhi = hi + 2 * width, fn(hi + 2 * width)
    else:
        raise BudgetInfeasible(f"no {what} multiplier reaches unit price")
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    return brentq(fn, lo, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=300)


def utility_optimal_product(b: Distribution, m: Distribution, U: Utility) -> Payoff:
    """``F = U'^-1(lam0 / f)`` with ``lam0`` fixed by ``Price[F] = 1``."""
    f = likelihood_product(b, m)
    log_f = log_positive(f, "likelihood product")

    def log_payoff(log_lam):
        with np.errstate(over="ignore", divide="ignore"):
            return np.log(U.marginal_inverse(np.exp(log_lam - log_f)))

    def gap(log_lam):
        # price falls as lam0 grows; negate to get an increasing map
        lf = log_payoff(log_lam)
        if not np.all(np.isfinite(lf)):
            return math.inf if np.any(lf == -math.inf) else -math.inf
        return -_log_price(lf, m)

    log_lam = _solve_increasing(gap, what="lam0")
    return Payoff(m.grid, np.exp(log_payoff(log_lam)))


# --------------------------------------------------------------------------- #
# Payoff elasticity equation
# --------------------------------------------------------------------------- #


def elasticity_ode_product(f: Payoff, R_profile, m: Distribution, argument: str = "F",
                           rtol: float = 1e-12, atol: float = 1e-13) -> Payoff:
    """Integrate ``d ln F / d ln f = 1 / R`` and normalise to unit price.

    ``F`` is treated as a function of the value of ``f`` (not of ``x``), so
    the equation is integrated along the sorted distinct values of ``ln f``.
    ``argument`` says whether ``R_profile`` takes ``F`` or ``f``.
    """
    if argument not in ("F", "f"):
        raise ValidationError("argument must be 'F' or 'f'")
    check_grids(f.grid, m.grid)
    log_f = log_positive(f, "likelihood product")
    nodes, where = np.unique(log_f, return_inverse=True)
    if nodes.size < 2:
        return unit_price(Payoff(f.grid, np.ones(len(f.grid))), m)

    def rhs(z, y):
        arg = math.exp(y[0]) if argument == "F" else math.exp(z)
        R = float(R_profile(arg))
        if not (math.isfinite(R) and R > 1e-12):
            raise StiffProfile(f"risk aversion {R!r} is not positive at {argument}={arg:.6g}")
        return [1.0 / R]

    def integrate(y0):
        ys = np.empty(nodes.size)
        ys[0] = y0
        # restart at each node so a kink in R stays inside a single step
        for i in range(nodes.size - 1):
            sol = solve_ivp(rhs, (nodes[i], nodes[i + 1]), [ys[i]], method="DOP853",
                            rtol=rtol, atol=atol)
            if not sol.success:
                raise StiffProfile(f"elasticity integration failed: {sol.message}")
            ys[i + 1] = sol.y[0, -1]
        return ys

    if argument == "f":
        # R does not depend on F: one pass, then a constant shift fixes the price
        log_F = integrate(0.0)[where]
        return Payoff(f.grid, np.exp(log_F - _log_price(log_F, m)))

    def gap(y0):
        with np.errstate(over="ignore"):
            return _log_price(integrate(y0)[where], m)

    y0 = _solve_increasing(gap, what="integration constant")
    log_F = integrate(y0)[where]
    return Payoff(f.grid, np.exp(log_F))


# --------------------------------------------------------------------------- #
# Risk-constrained investment
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PartiallyHedgedResult:
    payoff: Payoff
    multipliers: tuple[float, float]
    alpha_r: float
    modified_aversion: np.ndarray
    residual_price: float
    residual_risk: float
    iterations: int
    method: str = "newton"

    def to_dict(self) -> dict:
        finite = self.modified_aversion[np.isfinite(self.modified_aversion)]
        return {
            "nu": self.multipliers[0],
            "rho": self.multipliers[1],
            "alpha_r": self.alpha_r,
            "residual_price": self.residual_price,
            "residual_risk": self.residual_risk,
            "iterations": self.iterations,
            "method": self.method,
            "modified_aversion_min": float(finite.min()) if finite.size else math.nan,
            "modified_aversion_max": float(finite.max()) if finite.size else math.nan,
        }

    def to_json(self) -> str:
        return _json(self.to_dict())


def _json(d: dict) -> str:
    parts = []
    for k, v in d.items():
        text = fmt(v) if isinstance(v, float) else json.dumps(v)
        parts.append(f'"{k}": {text}')
    return "{" + ", ".join(parts) + "}"


def _constrained_payoff(U: Utility, f: Array, log_s: Array, nu: float, rho: float):
    k = nu + rho * log_s
    if np.any(k <= 0):
        return None
    return U.marginal_inverse(k / f)


def partially_hedged_product(b: Distribution, m: Distribution, U: Utility, S: Payoff,
                             r: float, tol: float = 1e-13,
                             max_iter: int = 100) -> PartiallyHedgedResult:
    """Maximise ``E_b[U(F)]`` subject to ``Price[F] = 1`` and ``Risk_S[F] = r``.

    The solution is ``F = U'^-1((nu + rho ln S) / f)`` with ``S`` taken at
    unit price.  ``(nu, rho)`` come from Newton's method on the two
    constraints (the Jacobian is exact: ``dF/dk = 1/U''(F)``), with nested
    bracketed root finding as a fallback.
    """
    check_grids(S.grid, m.grid)
    f = likelihood_product(b, m).values
    if np.any(f <= 0):
        raise ValidationError("belief must be positive wherever the market is")
    S = unit_price(S, m)
    log_s = log_positive(S, "scenario product")
    q = m.mass
    centred = log_s - float(np.dot(q, log_s))
    r = float(r)

    mean_log_s = float(np.dot(q, log_s))

    def residual(F):
        return np.array([np.dot(q, F) - 1.0, np.dot(q, F * centred) - r])

    def dual(theta):
        # convex dual of the utility problem; its gradient is minus the residuals
        F = _constrained_payoff(U, f, log_s, *theta)
        if F is None or not np.all(np.isfinite(F)):
            return math.inf, None
        k = theta[0] + theta[1] * log_s
        value = float(np.dot(q, f * U.value(F) - k * F)) + theta[0] + theta[1] * (r + mean_log_s)
        return value, F

    # start from the unconstrained optimum: rho = 0, nu = lam0
    F0 = utility_optimal_product(b, m, U).values
    theta = np.array([float(np.median(U.marginal(F0) * f)), 0.0])
    method = "newton"
    iterations = 0
    solved = None
    value, F = dual(theta)
    res = residual(F)
    for iterations in range(1, max_iter + 1):
        if np.max(np.abs(res)) < tol:
            solved = F
            break
        grad = -np.array([res[0], res[1] + mean_log_s * res[0]])
        dFdk = 1.0 / (U.marginal_derivative(F) * f)
        basis = np.vstack([np.ones_like(log_s), log_s])
        hess = -(basis * (q * dFdk)) @ basis.T
        try:
            step = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        slope = float(grad @ step)
        alpha = 1.0
        norm = np.max(np.abs(res))
        while alpha > 1e-12:
            trial = theta + alpha * step
            t_value, t_F = dual(trial)
            if t_F is not None:
                t_res = residual(t_F)
                # near the optimum the dual is flat to rounding; fall back on the residuals
                if t_value <= value + 1e-4 * alpha * slope or np.max(np.abs(t_res)) < 0.5 * norm:
                    break
            alpha *= 0.5
        else:
            break
        theta, value, F, res = trial, t_value, t_F, t_res
    else:
        if np.max(np.abs(res)) < tol:
            solved = F

    k = None
    if solved is None:
        method = "nested-bisection"
        theta, k, iterations = _nested_multipliers(U, f, log_s, centred, q, r)
        solved = U.marginal_inverse(k / f)

    nu, rho = float(theta[0]), float(theta[1])
    if k is None:
        k = nu + rho * log_s
    payoff = Payoff(m.grid, solved)
    res = residual(solved)
    if np.max(np.abs(res)) > 1e-9:
        raise MaxIterations(
            "constraints not met to 1e-9; nu + rho ln S is close to vanishing",
            nu=nu, rho=rho, residual_price=float(res[0]), residual_risk=float(res[1]),
        )
    log_f = np.log(f)
    ratio = elasticity(np.log(k), log_f, m.grid.points)
    r_star = U.relative_risk_aversion(solved) / (1.0 - ratio)
    return PartiallyHedgedResult(
        payoff=payoff,
        multipliers=(nu, rho),
        alpha_r=rho / nu,
        modified_aversion=r_star,
        residual_price=float(np.dot(q, solved)) - 1.0,
        residual_risk=specific_risk(payoff, S, m) - r,
        iterations=iterations,
        method=method,
    )


def _offset_denominator(log_s, t: float, rho: float) -> Array:
    """``nu + rho ln S`` written as ``e^t + rho (ln S - ln S_ref)``.

    ``ln S_ref`` is the node where ``rho ln S`` is smallest, so the margin
    there is exactly ``e^t`` even when it is far below rounding of ``nu``.
    """
    if rho == 0.0:
        return np.full(len(log_s), math.exp(t))
    ref = log_s.min() if rho > 0 else log_s.max()
    return math.exp(t) + rho * (log_s - ref)


def _nested_multipliers(U: Utility, f, log_s, centred, q, r):
    """Inner: margin ``t`` for unit price at fixed ``rho``; outer: ``rho`` for the risk."""
    calls = 0

    def price_gap(t, rho):
        k = _offset_denominator(log_s, t, rho)
        with np.errstate(invalid="ignore", over="ignore"):
            return 1.0 - float(np.dot(q, U.marginal_inverse(k / f)))

    def t_for(rho):
        # price falls as the margin grows
        try:
            return _solve_increasing(lambda t: price_gap(t, rho), what="nu")
        except BudgetInfeasible:
            raise Infeasible("no nu makes nu + rho ln S positive at unit price") from None

    def risk_gap(rho):
        nonlocal calls
        calls += 1
        k = _offset_denominator(log_s, t_for(rho), rho)
        F = U.marginal_inverse(k / f)
        # risk falls as rho grows
        return r - float(np.dot(q, F * centred))

    try:
        rho = _solve_increasing(risk_gap, lo=-0.1, hi=0.1, what="rho")
    except (BudgetInfeasible, Infeasible, TargetUnreachable) as exc:
        raise Infeasible(f"risk-constrained investment is infeasible: {exc}") from None
    if calls > 5000:
        raise MaxIterations("nested multiplier search did not settle")
    t = t_for(rho)
    k = _offset_denominator(log_s, t, rho)
    ref = 0.0 if rho == 0.0 else (log_s.min() if rho > 0 else log_s.max())
    return np.array([math.exp(t) - rho * ref, rho]), k, calls


# --------------------------------------------------------------------------- #
# Hedge-investment duality
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class DualityReport:
    investment: Payoff
    hedge: HedgeResult
    risk: float
    max_deviation: float

    def to_dict(self) -> dict:
        return {
            "risk": self.risk,
            "max_deviation": self.max_deviation,
            "lambda": self.hedge.lam,
            "mu": self.hedge.mu,
            "residual_price": self.hedge.residual_price,
            "residual_risk": self.hedge.residual_risk,
        }

    def to_json(self) -> str:
        return _json(self.to_dict())


def duality_check(U: Utility, b: Distribution, m: Distribution,
                  tol: float = 1e-7) -> DualityReport:
    """Rebuild the optimal investment as a pure hedge and compare.

    The scenario is ``S ~ exp(-1/f)`` (kept in log space), the generator is
    ``phi = U(1) - U`` and the required risk is ``Risk_S[F]``.
    """
    F = unit_price(utility_optimal_product(b, m, U), m)
    f = likelihood_product(b, m)
    log_s = -1.0 / f.values
    q = m.mass
    log_s = log_s - _log_price(log_s, m)
    risk = float(np.dot(q, F.values * log_s) / np.dot(q, F.values) - np.dot(q, log_s))
    hedge = pure_hedge_from_log(log_s, m, from_utility(U), risk)
    H = hedge.payoff.values / float(np.dot(q, hedge.payoff.values))
    deviation = float(np.max(np.abs(H - F.values)))
    if deviation > tol:
        raise ValidationError(
            f"hedge and investment differ by {deviation:.3g} (tolerance {tol:g})",
            max_deviation=deviation,
        )
    return DualityReport(investment=F, hedge=hedge, risk=risk, max_deviation=deviation)


# --------------------------------------------------------------------------- #
# Risk recycling
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class RecyclePlan:
    """A pure hedge packaged as a rational investment for a client.

    ``implied_belief`` and ``implied_risk_aversion`` describe an investor
    for whom ``hedge`` is the optimal purchase.
    """

    hedge: Payoff
    implied_belief: Distribution
    implied_risk_aversion: np.ndarray
    direction: str
    risk: float
    multipliers: tuple[float, float] = (math.nan, math.nan)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        R = self.implied_risk_aversion
        return {
            "direction": self.direction,
            "risk": self.risk,
            "lambda": self.multipliers[0],
            "mu": self.multipliers[1],
            "implied_risk_aversion_min": float(R.min()),
            "implied_risk_aversion_max": float(R.max()),
        }

    def write_term_sheet(self, payoff_csv, belief_csv) -> str:
        """Write the payoff and belief CSVs; return the JSON term sheet."""
        grid = self.hedge.grid
        write_columns(payoff_csv, grid, {"value": self.hedge.values})
        write_columns(belief_csv, grid, {
            "density": self.implied_belief.density,
            "risk_aversion": self.implied_risk_aversion,
        })
        sheet = dict(self.to_dict())
        sheet["payoff_csv"] = str(payoff_csv)
        sheet["belief_csv"] = str(belief_csv)
        return _json(sheet)

    def to_json(self) -> str:
        return _json(self.to_dict())


def recycle(A: Payoff, S: Payoff, m: Distribution, phi: PhiFunction,
            zero_tol: float = 1e-14) -> RecyclePlan:
    """Package the ``S``-exposure of ``A`` as an investment product to sell.

    The hedge ``H`` carries the same risk as ``A``; a buyer of ``H`` with
    belief ``beta_S`` (long exposure) or ``beta_Sbar`` (short exposure) and
    risk aversion ``H phi''(H) / |mu|`` would hold it as an optimal
    investment.
    """
    check_grids(A.grid, S.grid, m.grid)
    r = specific_risk(A, S, m)
    if abs(r) <= zero_tol:
        raise ZeroExposure("asset has no exposure to the scenario product")
    result = pure_hedge(S, m, phi, r)
    H = result.payoff
    if r > 0:
        direction, view_product = "long-scenario", unit_price(S, m)
    else:
        direction, view_product = "short-scenario", reciprocal_product(S, m)
    belief = implied_view(view_product, m)
    aversion = H.values * phi.second_derivative(H.values) / abs(result.mu)
    if not np.all(aversion > 0):
        raise ValidationError("implied risk aversion is not positive everywhere")
    return RecyclePlan(
        hedge=H,
        implied_belief=belief,
        implied_risk_aversion=np.asarray(aversion, dtype=float),
        direction=direction,
        risk=r,
        multipliers=result.multipliers,
        diagnostics={"residual_price": result.residual_price,
                     "residual_risk": result.residual_risk},
    )
