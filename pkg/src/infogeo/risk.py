"""Specific risk of a portfolio against a scenario product.

Three routes compute the same number and are kept deliberately separate:

* :func:`specific_risk` -- spread of expected log-returns on ``S`` between
  the portfolio-implied view and the market;
* :func:`risk_triangle` -- sum/difference of the three relative entropies
  of the (portfolio view, market, scenario view) triangle;
* :func:`risk_scalar_product` -- pairing of the mixture tangent vector
  toward the portfolio view with the exponential tangent toward the
  scenario view.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import SupportViolation
from .measures import DENSITY_FLOOR, Distribution, check_grids, kl_divergence
from .products import (
    MarketFamily,
    Payoff,
    log_positive,
    default_bump,
    fmt,
    implied_view,
    price,
    score_product,
)

ANGLE_TOL = 1e-9


def classify_angle(risk: float, tol: float = ANGLE_TOL) -> str:
    if risk > tol:
        return "acute"
    if risk < -tol:
        return "obtuse"
    return "right"


@dataclass(frozen=True)
class RiskReport:
    risk_spread: float
    risk_triangle: float
    risk_scalar: float
    d_pi_m: float
    d_m_s: float
    d_pi_s: float
    angle: str

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        body = ", ".join(
            f'"{k}": {fmt(v) if isinstance(v, float) else json.dumps(v)}'
            for k, v in self.to_dict().items()
        )
        return "{" + body + "}"


def specific_risk(Pi: Payoff, S: Payoff, m: Distribution) -> float:
    """Risk per unit price: ``E_{beta_Pi}[ln S] - E_m[ln S]``."""
    check_grids(Pi.grid, S.grid, m.grid)
    log_s = log_positive(S, "scenario product")
    w = m.grid.weights
    # beta_Pi = Pi m / Price[Pi], expanded in place
    portfolio_side = np.dot(w, Pi.values * m.density * log_s) / price(Pi, m)
    market_side = np.dot(w, m.density * log_s)
    return float(portfolio_side - market_side)


def _require_positive(*dists: Distribution) -> None:
    for d in dists:
        if np.any(d.density < DENSITY_FLOOR):
            raise SupportViolation("distribution must be strictly positive on the grid")


def risk_scalar_product(beta_pi: Distribution, m: Distribution, beta_s: Distribution) -> float:
    """``< m, beta_pi | m, beta_s > = sum w (beta_pi - m)(ln beta_s - ln m)``."""
    check_grids(beta_pi.grid, m.grid, beta_s.grid)
    _require_positive(m, beta_s)
    bra = beta_pi.density - m.density
    ket = np.log(beta_s.density) - np.log(m.density)
    return float(np.sum(m.grid.weights * bra * ket))


def _spread_from_views(beta_pi: Distribution, m: Distribution, beta_s: Distribution) -> float:
    # ln S recovered from the scenario view (any notional cancels in the spread)
    log_s = np.log(beta_s.density / m.density)
    w = m.grid.weights
    return float(np.sum(w * beta_pi.density * log_s) - np.sum(w * m.density * log_s))


def risk_triangle(beta_pi: Distribution, m: Distribution, beta_s: Distribution) -> RiskReport:
    """Populate a :class:`RiskReport` from the three views of the triangle."""
    check_grids(beta_pi.grid, m.grid, beta_s.grid)
    _require_positive(m, beta_s)
    d_pi_m = kl_divergence(beta_pi, m)
    d_m_s = kl_divergence(m, beta_s)
    d_pi_s = kl_divergence(beta_pi, beta_s)
    spread = _spread_from_views(beta_pi, m, beta_s)
    return RiskReport(
        risk_spread=spread,
        risk_triangle=d_pi_m + d_m_s - d_pi_s,
        risk_scalar=risk_scalar_product(beta_pi, m, beta_s),
        d_pi_m=d_pi_m,
        d_m_s=d_m_s,
        d_pi_s=d_pi_s,
        angle=classify_angle(spread),
    )


def risk_report(Pi: Payoff, S: Payoff, m: Distribution) -> RiskReport:
    """Full report for payoffs; the spread comes straight from the payoffs."""
    tri = risk_triangle(implied_view(Pi, m), m, implied_view(S, m))
    spread = specific_risk(Pi, S, m)
    return RiskReport(
        risk_spread=spread,
        risk_triangle=tri.risk_triangle,
        risk_scalar=tri.risk_scalar,
        d_pi_m=tri.d_pi_m,
        d_m_s=tri.d_m_s,
        d_pi_s=tri.d_pi_s,
        angle=classify_angle(spread),
    )


def sensitivity_check(family: MarketFamily, Pi: Payoff, theta: float | None = None,
                      bump: float | None = None) -> tuple[float, float]:
    """Return ``(fd, spread)``.

    ``fd`` is the central difference of ``ln Price[Pi]`` in the family
    parameter; ``spread`` is the specific risk of ``Pi`` against the
    exponential score product.  They agree to second order in ``bump``.
    """
    theta = family.parameter if theta is None else float(theta)
    h = default_bump(theta) if bump is None else float(bump)
    up = np.log(price(Pi, family.density(theta + h)))
    down = np.log(price(Pi, family.density(theta - h)))
    fd = float((up - down) / (2.0 * h))
    spread = specific_risk(Pi, score_product(family, theta, h), family.density(theta))
    return fd, spread
