"""Cost-optimal and pure hedging products.

``c_projection`` moves a portfolio-implied view onto the zero-risk surface
at minimal local trading cost.  ``pure_hedge`` builds the unit-price
payoff that carries a prescribed risk while staying as close to the market
as a chosen phi-divergence allows; its shape is ``phi'^-1(lam + mu ln S)``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    DivisionByZero,
    MaxIterations,
    NegativeDensity,
    PayoffDomainViolation,
    SingularSystem,
    TargetUnreachable,
    ValidationError,
)
from .measures import Distribution, as_vector, check_grids
from .phi import PhiFunction
from .products import (
    Payoff,
    fmt,
    implied_view,
    log_positive,
    price,
    unit_price,
)
from .risk import specific_risk

log = logging.getLogger(__name__)

_EPS4 = 4 * np.finfo(float).eps


@dataclass(frozen=True)
class HedgeResult:
    payoff: Payoff
    multipliers: tuple[float, float]
    residual_price: float
    residual_risk: float
    iterations: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def lam(self) -> float:
        return self.multipliers[0]

    @property
    def mu(self) -> float:
        return self.multipliers[1]

    def to_dict(self) -> dict:
        return {
            "lambda": self.multipliers[0],
            "mu": self.multipliers[1],
            "residual_price": self.residual_price,
            "residual_risk": self.residual_risk,
            "iterations": self.iterations,
            **{k: v for k, v in self.diagnostics.items() if isinstance(v, (int, float, str))},
        }

    def to_json(self) -> str:
        parts = []
        for k, v in self.to_dict().items():
            text = fmt(v) if isinstance(v, float) else json.dumps(v)
            parts.append(f'"{k}": {text}')
        return "{" + ", ".join(parts) + "}"


# --------------------------------------------------------------------------- #
# Local cost models
# --------------------------------------------------------------------------- #


@dataclass(frozen=True, eq=False)
class CostModel:
    """Local cost ``C(x, y)`` of moving density ``y`` at outcome ``x``.

    ``weighted-quadratic``: ``w(x) y^2 / 2``;
    ``weighted-power``: ``w(x) |y|^p / p`` with ``p > 1``.
    """

    kind: str
    weight: np.ndarray
    exponent: float = 2.0

    def __post_init__(self):
        w = np.array(self.weight, dtype=float)
        if np.any(~np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("cost weights must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "weight", w)
        if self.kind == "weighted-quadratic":
            object.__setattr__(self, "exponent", 2.0)
        elif self.kind == "weighted-power":
            if not self.exponent > 1:
                raise ValidationError("power cost needs exponent > 1")
        else:
            raise ValidationError(f"unknown cost model {self.kind!r}")

    @classmethod
    def quadratic(cls, weight) -> "CostModel":
        return cls("weighted-quadratic", weight)

    @classmethod
    def power(cls, weight, exponent: float) -> "CostModel":
        return cls("weighted-power", weight, float(exponent))

    def value(self, y):
        y = np.asarray(y, dtype=float)
        p = self.exponent
        return self.weight * np.abs(y) ** p / p

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        return self.weight * np.sign(y) * np.abs(y) ** (self.exponent - 1.0)

    def derivative_inverse(self, v):
        v = np.asarray(v, dtype=float)
        return np.sign(v) * (np.abs(v) / self.weight) ** (1.0 / (self.exponent - 1.0))

    def derivative_inverse_slope(self, v):
        v = np.asarray(v, dtype=float)
        k = 1.0 / (self.exponent - 1.0)
        a = np.maximum(np.abs(v), 1e-300) / self.weight
        return k * a ** (k - 1.0) / self.weight

    def conjugate(self, v):
        """Convex conjugate ``C*(v)``; its derivative is ``derivative_inverse``."""
        v = np.asarray(v, dtype=float)
        return (1.0 - 1.0 / self.exponent) * np.abs(v) * np.abs(self.derivative_inverse(v))

    def total(self, grid_weights, y) -> float:
        return float(np.dot(grid_weights, self.value(y)))


def c_projection(Pi: Payoff, S: Payoff, m: Distribution, cost: CostModel,
                 tol: float = 1e-12, max_iter: int = 100) -> HedgeResult:
    """Cheapest zero-risk, price-preserving move of the view of ``Pi``.

    The density change is ``C'^-1(x, lam + mu ln S(x))``; a negative
    resulting density is reported, never clamped.
    """
    check_grids(Pi.grid, S.grid, m.grid)
    Pi = unit_price(Pi, m)
    if cost.weight.shape != (len(m.grid),):
        raise ValidationError("cost weight length does not match the grid")
    g = m.grid.weights
    beta = implied_view(Pi, m)
    S = unit_price(S, m)
    log_raw = log_positive(S, "scenario product")
    # work with ln S - E_m ln S; the shift only moves lam
    shift = float(np.dot(m.mass, log_raw))
    log_s = log_raw - shift
    r_pi = float(np.dot(g, beta.density * log_s))
    basis = np.vstack([np.ones_like(log_s), log_s])

    inv_w = 1.0 / cost.weight
    gram = (basis * (g * inv_w)) @ basis.T
    if abs(np.linalg.det(gram)) <= 1e-14 * np.trace(gram) ** 2:
        raise SingularSystem("scenario product is constant on the grid")
    lam, mu = np.linalg.solve(gram, np.array([0.0, -r_pi]))
    iterations = 0

    if cost.kind == "weighted-power":
        theta = np.array([lam, mu])

        def dual(th):
            v = th[0] + th[1] * log_s
            delta = cost.derivative_inverse(v)
            val = float(np.dot(g, cost.conjugate(v))) + th[1] * r_pi
            grad = basis @ (g * delta) + np.array([0.0, r_pi])
            hess = (basis * (g * cost.derivative_inverse_slope(v))) @ basis.T
            return val, grad, hess

        val, grad, hess = dual(theta)
        for iterations in range(1, max_iter + 1):
            if np.max(np.abs(grad)) < tol:
                break
            reg = 1e-14 * max(1.0, np.trace(hess))
            step = -np.linalg.solve(hess + reg * np.eye(2), grad)
            slope = float(grad @ step)
            alpha = 1.0
            while alpha > 1e-14:
                trial = theta + alpha * step
                t_val, t_grad, t_hess = dual(trial)
                if t_val <= val + 1e-4 * alpha * slope:
                    break
                alpha *= 0.5
            theta, val, grad, hess = trial, t_val, t_grad, t_hess
        else:
            if np.max(np.abs(grad)) >= tol:
                raise MaxIterations("c-projection multipliers did not converge")
        lam, mu = theta

    delta = cost.derivative_inverse(lam + mu * log_s)
    new_density = beta.density + delta
    if np.any(new_density < 0):
        bad = m.grid.points[new_density < 0]
        raise NegativeDensity(
            "cost-optimal hedge needs a negative density (short beyond inventory)",
            points=bad.tolist(),
            x_range=(float(bad.min()), float(bad.max())),
        )
    hedged = Payoff(m.grid, new_density / m.density)
    return HedgeResult(
        payoff=hedged,
        multipliers=(float(lam - mu * shift), float(mu)),
        residual_price=price(hedged, m) - 1.0,
        residual_risk=specific_risk(hedged, S, m),
        iterations=iterations,
        diagnostics={
            "cost": cost.total(g, delta),
            "initial_risk": r_pi,
            "delta_density": delta,
        },
    )


# --------------------------------------------------------------------------- #
# Pure hedges
# --------------------------------------------------------------------------- #


def _bracket_increasing(fn, start: float, lo_lim: float, hi_lim: float,
                        max_steps: int = 200) -> tuple[float, float]:
    """Find ``a < b`` inside ``(lo_lim, hi_lim)`` with ``fn(a) < 0 < fn(b)``."""
    x = start
    fx = fn(x)
    if fx == 0:
        return x, x
    direction = 1.0 if fx < 0 else -1.0
    limit = hi_lim if direction > 0 else lo_lim
    step = max(1.0, abs(x))
    prev = x
    for _ in range(max_steps):
        if math.isinf(limit):
            cand = x + direction * step
            step *= 2.0
        else:
            cand = limit - 0.25 * (limit - x)
            if cand == x:
                break
        fc = fn(cand)
        # an infinite value means H overflowed at the edge: not a usable sign change
        if not np.isfinite(fc):
            break
        prev, x = x, cand
        if fc * direction >= 0:
            return (prev, x) if direction > 0 else (x, prev)
    raise TargetUnreachable("no sign change before the edge of the admissible region")


class _Arguments:
    """Arguments of ``phi'^-1`` for a given ``mu``, parametrised by a level ``s``.

    With an unbounded ``phi'`` the level is ``lam`` itself and the argument is
    ``lam + mu c``.  When ``phi'`` is bounded above by ``hi`` the hedge has a
    pole there; the level is then ``t`` with margin ``hi - (lam + mu c) =
    e^t + mu (c_ref - c)`` where ``c_ref`` maximises ``mu c``.  The margin at
    the pole-side node is exactly ``e^t``, so payoffs far beyond ``1/eps`` stay
    accurate.  Price is increasing in ``lam`` and decreasing in ``t``.
    """

    def __init__(self, phi: PhiFunction, centred: np.ndarray, mu: float):
        self.phi, self.centred, self.mu = phi, centred, mu
        self.hi = phi.derivative_range[1]
        self.bounded = math.isfinite(self.hi)
        if self.bounded:
            ref = float(centred.max() if mu >= 0 else centred.min())
            self.ref = ref
            self.spread = mu * (ref - centred)  # >= 0, exactly 0 at the reference node

    def payoff(self, level: float) -> np.ndarray:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            if self.bounded:
                return self.phi.inverse_from_margin(math.exp(level) + self.spread)
            return self.phi.derivative_inverse(level + self.mu * self.centred)

    def lam(self, level: float) -> float:
        """Intercept of ``phi'(H) = lam + mu c``."""
        if self.bounded:
            return self.hi - math.exp(level) - self.mu * self.ref
        return level

    def level_of(self, lam: float) -> float | None:
        if not self.bounded:
            return lam
        margin = self.hi - lam - self.mu * self.ref
        return math.log(margin) if margin > 0 else None

    def limits(self) -> tuple[float, float]:
        if self.bounded:
            return -math.inf, math.inf
        a, b = self.phi.derivative_range
        shift = self.mu * self.centred
        return a - shift.min(), b - shift.max()

    def slopes(self, level: float, H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``dH/dlevel`` and ``dH/dmu`` at fixed level."""
        inv2 = 1.0 / self.phi.second_derivative(H)
        if self.bounded:
            return -math.exp(level) * inv2, (self.centred - self.ref) * inv2
        return inv2, self.centred * inv2


def _solve_level(args: _Arguments, q: np.ndarray, guess: float) -> tuple[float, np.ndarray]:
    """Level with ``sum q H = 1``; returns ``(level, H)``."""
    lo_lim, hi_lim = args.limits()
    if not lo_lim < hi_lim:
        raise TargetUnreachable("phi'^-1 has no admissible argument for this mu")
    sign = -1.0 if args.bounded else 1.0

    def gap(level):
        # oriented so that the gap increases with the level
        return sign * (float(np.dot(q, args.payoff(level))) - 1.0)

    start = guess
    if not lo_lim < start < hi_lim:
        if math.isinf(lo_lim):
            start = hi_lim - 1.0
        elif math.isinf(hi_lim):
            start = lo_lim + 1.0
        else:
            start = 0.5 * (lo_lim + hi_lim)
    lo, hi = _bracket_increasing(gap, start, lo_lim, hi_lim)
    level = lo if lo == hi else brentq(gap, lo, hi, xtol=1e-15, rtol=_EPS4, maxiter=300)
    return level, args.payoff(level)


def _polish(phi: PhiFunction, centred: np.ndarray, q: np.ndarray, r: float,
            level: float, mu: float, steps: int = 6) -> tuple[float, float, np.ndarray]:
    """Joint Newton refinement of the bracketed ``(level, mu)``.

    Near the edge of ``phi'``'s range ``H`` is very sensitive to the
    multipliers and bisection alone leaves visible constraint residuals.
    A step is kept only if it keeps ``mu``'s sign, stays admissible and
    shrinks the residual.
    """
    def state(level, mu):
        args = _Arguments(phi, centred, mu)
        H = args.payoff(level)
        if not np.all(np.isfinite(H)):
            return None, None, None
        if not args.bounded:
            a, b = phi.derivative_range
            v = level + mu * centred
            if not (np.all(v > a) and np.all(v < b)):
                return None, None, None
        return args, H, np.array([np.dot(q, H) - 1.0, np.dot(q, H * centred) - r])

    args, H, res = state(level, mu)
    for _ in range(steps):
        d_level, d_mu = args.slopes(level, H)
        J = np.array([[np.dot(q, d_level), np.dot(q, d_mu)],
                      [np.dot(q, d_level * centred), np.dot(q, d_mu * centred)]])
        try:
            d = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError:
            break
        new_level, new_mu = level + d[0], mu + d[1]
        if np.sign(new_mu) != np.sign(mu):
            break
        new_args, H_new, res_new = state(new_level, new_mu)
        if res_new is None or np.max(np.abs(res_new)) >= np.max(np.abs(res)):
            break
        level, mu, args, H, res = new_level, new_mu, new_args, H_new, res_new
    return args.lam(level), mu, H


def _pure_hedge_log(log_s: np.ndarray, m: Distribution, phi: PhiFunction, r: float,
                    tol: float = 1e-10):
    """Solve for ``(H, lam, mu, evaluations)`` given ``ln S`` on the grid."""
    q = m.mass
    lam0 = float(phi.derivative(np.array([1.0]))[0])
    if r == 0.0:
        return np.ones_like(log_s), lam0, 0.0, 0
    if np.ptp(log_s) < 1e-13:
        raise TargetUnreachable("constant scenario carries no risk")
    centred = log_s - np.dot(q, log_s)
    var = float(np.dot(q, centred * centred))
    curvature = float(phi.second_derivative(np.array([1.0]))[0])

    calls = 0
    last_lam = [lam0]

    def solve(mu):
        args = _Arguments(phi, centred, mu)
        guess = args.level_of(last_lam[0])
        level, H = _solve_level(args, q, 0.0 if guess is None else guess)
        last_lam[0] = args.lam(level)
        return level, H

    def risk_gap(mu):
        nonlocal calls
        calls += 1
        _, H = solve(mu)
        return float(np.dot(q, H * centred)) - r

    direction = 1.0 if r > 0 else -1.0
    good = 0.0
    mu = direction * abs(r) * curvature / var
    for _ in range(200):
        try:
            gap = risk_gap(mu)
        except TargetUnreachable:
            # stepped outside the solvable region; retreat toward the last good mu
            if abs(mu - good) < 1e-14 * max(1.0, abs(mu)):
                raise TargetUnreachable(f"risk {r:g} is not attainable with {phi.name}") from None
            mu = good + 0.5 * (mu - good)
            continue
        if gap * direction >= 0:
            break
        good, mu = mu, 2.0 * mu
    else:
        raise TargetUnreachable(f"risk {r:g} is not attainable with {phi.name}")

    lo, hi = sorted((good, mu))
    mu_star = brentq(risk_gap, lo, hi, xtol=1e-15, rtol=_EPS4, maxiter=300)
    level, _ = solve(mu_star)
    lam_c, mu_star, H = _polish(phi, centred, q, r, level, mu_star)
    # report lam against the caller's ln S (undo the centring)
    lam = lam_c - mu_star * float(np.dot(q, log_s))
    return H, float(lam), float(mu_star), calls


def pure_hedge(S: Payoff, m: Distribution, phi: PhiFunction, r: float) -> HedgeResult:
    """Unit-price payoff with ``Risk_S = r`` minimising ``D_phi(beta_H || m)``.

    Parameters
    ----------
    S : Payoff
        Strictly positive scenario product.
    m : Distribution
        Market density.
    phi : PhiFunction
        Generator of the divergence.
    r : float
        Required specific risk.

    Returns
    -------
    HedgeResult
        ``multipliers`` are ``(lam, mu)`` with ``phi'(H) = lam + mu ln S``,
        where ``S`` is taken at unit price.
    """
    check_grids(S.grid, m.grid)
    S = unit_price(S, m)
    return pure_hedge_from_log(log_positive(S, "scenario product"), m, phi, r)


def pure_hedge_from_log(log_s, m: Distribution, phi: PhiFunction, r: float) -> HedgeResult:
    """Same as :func:`pure_hedge` but with the scenario supplied as ``ln S``.

    Useful when ``S`` itself would underflow.
    """
    log_s = as_vector(m.grid, log_s, "log scenario")
    H, lam, mu, calls = _pure_hedge_log(log_s, m, phi, float(r))
    if not np.all(np.isfinite(H)):
        raise TargetUnreachable("hedge payoff is not finite")
    if np.any(H < 0):
        bad = m.grid.points[H < 0]
        raise PayoffDomainViolation(
            f"{phi.name} hedge goes negative on [{bad.min():.6g}, {bad.max():.6g}]",
            x_range=(float(bad.min()), float(bad.max())),
            points=bad.tolist(),
        )
    q = m.mass
    payoff = Payoff(m.grid, H)
    risk = float(np.dot(q, H * log_s) / np.dot(q, H) - np.dot(q, log_s))
    return HedgeResult(
        payoff=payoff,
        multipliers=(lam, mu),
        residual_price=float(np.dot(q, H)) - 1.0,
        residual_risk=risk - r,
        iterations=calls,
        diagnostics={"objective": float(np.dot(q, phi.value(H))), "phi": phi.name},
    )


def elasticity(log_num, log_den, x) -> np.ndarray:
    """Pointwise ``d log_num / d log_den`` by second-order differences in ``x``.

    Points where ``log_den`` is locally flat come back as NaN.
    """
    dn = np.gradient(np.asarray(log_num, dtype=float), x, edge_order=2)
    dd = np.gradient(np.asarray(log_den, dtype=float), x, edge_order=2)
    scale = np.max(np.abs(dd)) if dd.size else 0.0
    out = np.full_like(dn, np.nan)
    ok = np.abs(dd) > 1e-12 * max(scale, 1.0)
    out[ok] = dn[ok] / dd[ok]
    return out


def hedge_elasticity(H: Payoff, f: Payoff) -> np.ndarray:
    """``d ln H / d ln f`` along the grid; undefined points are NaN."""
    check_grids(H.grid, f.grid)
    log_h = log_positive(H, "hedge")
    log_f = log_positive(f, "likelihood product")
    e = elasticity(log_h, log_f, H.grid.points)
    if np.all(np.isnan(e)):
        raise DivisionByZero("ln f is flat everywhere; elasticity undefined")
    return e

