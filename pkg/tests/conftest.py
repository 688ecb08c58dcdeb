from __future__ import annotations

import numpy as np
import pytest

from infogeo.measures import Distribution, make_grid, normalize
from infogeo.products import MarketFamily, Payoff

DESK_N = 512


@pytest.fixture(scope="session")
def desk_grid():
    return make_grid(0.25, 4.0, DESK_N, "log-uniform")


@pytest.fixture(scope="session")
def market(desk_grid):
    return MarketFamily("lognormal", desk_grid, sigma=0.3).density()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# --------------------------------------------------------------------------- #
# Random objects used by property tests
# --------------------------------------------------------------------------- #


def random_market(rng, grid) -> Distribution:
    sigma = rng.uniform(0.15, 0.4)
    anchor = rng.uniform(0.85, 1.15)
    return MarketFamily("lognormal", grid, sigma=sigma, anchor=anchor).density()


def random_payoff(rng, grid, floor: float = 0.05) -> Payoff:
    """Positive mix of cash, forward, calls and puts with random strikes."""
    x = grid.points
    values = floor + rng.uniform(0, 1) * np.ones_like(x) + rng.uniform(0, 0.5) * x
    for _ in range(rng.integers(1, 4)):
        k = rng.uniform(0.6, 1.6)
        if rng.uniform() < 0.5:
            values = values + rng.uniform(0, 2) * np.maximum(x - k, 0)
        else:
            values = values + rng.uniform(0, 2) * np.maximum(k - x, 0)
    return Payoff(grid, values)


def random_smooth_scenario(rng, grid) -> Payoff:
    """Strictly positive scenario with a smooth, moderate ``ln S``."""
    z = np.log(grid.points)
    coeffs = rng.normal(0, 0.4, size=3)
    return Payoff(grid, np.exp(coeffs[0] * z + coeffs[1] * z**2 / 2 + coeffs[2] * np.tanh(2 * z)))


def random_distribution(rng, grid) -> Distribution:
    raw = np.exp(np.cumsum(rng.normal(0, 0.15, len(grid))))
    raw = raw * np.exp(-0.5 * ((grid.points - rng.uniform(0.7, 1.4)) / rng.uniform(0.2, 0.8)) ** 2)
    return normalize(raw + 1e-6, grid)


def shifted_view(grid, sigma: float, anchor: float) -> Distribution:
    return MarketFamily("lognormal", grid, sigma=sigma, anchor=anchor).density()


# --------------------------------------------------------------------------- #
# Acceptance summary: one line per criterion at the end of the run
# --------------------------------------------------------------------------- #

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    criterion = marker.kwargs["criterion"]
    title = marker.kwargs["title"]
    status = "PASS" if call.excinfo is None else "FAIL"
    prev = _ACCEPTANCE.get(criterion)
    if prev is None or prev[0] == "PASS":
        _ACCEPTANCE[criterion] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE):
        status, title = _ACCEPTANCE[criterion]
        terminalreporter.write_line(f"criterion {criterion:2d} {status}  {title}")
