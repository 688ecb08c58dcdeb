"""Discrete-measure engine for risks, returns and hedges on a 1-D outcome grid."""

from .measures import Distribution, Grid, expectation, kl_divergence, make_grid, normalize, variance
from .products import MarketFamily, Payoff, implied_view, likelihood_product, price, unit_price
from .risk import RiskReport, risk_report, specific_risk

__version__ = "0.1.0"

__all__ = [
    "Distribution", "Grid", "expectation", "kl_divergence", "make_grid", "normalize", "variance",
    "MarketFamily", "Payoff", "implied_view", "likelihood_product", "price", "unit_price",
    "RiskReport", "risk_report", "specific_risk",
]
