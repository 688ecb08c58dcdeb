from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import random_distribution, random_market, random_payoff, random_smooth_scenario
from infogeo.errors import Infeasible, InvalidRange, OverflowRisk, SupportViolation, TargetUnreachable
from infogeo.geometry import (
    Geodesic,
    RiskConstraint,
    e_geodesic,
    e_geodesic_payoff,
    e_project_iso_risk,
    e_project_multi,
    m_geodesic,
    orthogonality_check,
    risk_along_geodesic,
    tangent_pair,
)
from infogeo.measures import Distribution, kl_divergence, make_grid
from infogeo.products import (
    MarketFamily,
    Payoff,
    call,
    constant,
    implied_view,
    price,
    put,
    reciprocal_product,
)
from infogeo.risk import risk_scalar_product, specific_risk


@pytest.fixture
def S(desk_grid):
    return call(desk_grid, 1.1) + constant(desk_grid, 0.2)


def risk_of(beta, m, S):
    return risk_scalar_product(beta, m, implied_view(S, m))


class TestMixtureGeodesic:
    def test_endpoints(self, rng, market, desk_grid):
        b = random_distribution(rng, desk_grid)
        assert m_geodesic(market, b, 0.0).allclose(market, 1e-14)
        assert m_geodesic(market, b, 1.0).allclose(b, 1e-14)

    def test_half_cash_portfolio(self, rng, market, desk_grid):
        Pi = random_payoff(rng, desk_grid)
        half = Payoff(desk_grid, 0.5 * price(Pi, market) + 0.5 * Pi.values)
        mid = m_geodesic(market, implied_view(Pi, market), 0.5)
        assert mid.allclose(implied_view(half, market), 1e-10)

    def test_normalized(self, rng, market, desk_grid):
        b = random_distribution(rng, desk_grid)
        mid = m_geodesic(market, b, 0.37)
        assert abs(np.dot(desk_grid.weights, mid.density) - 1.0) < 1e-12

    def test_no_extrapolation(self, market):
        with pytest.raises(InvalidRange):
            m_geodesic(market, market, 1.5)


class TestExponentialGeodesic:
    def test_endpoints(self, rng, market, desk_grid):
        b = random_distribution(rng, desk_grid)
        assert e_geodesic(market, b, 0.0).allclose(market, 1e-12)
        assert e_geodesic(market, b, 1.0).allclose(b, 1e-10)

    def test_minus_one_is_reciprocal_view(self, market, S):
        back = e_geodesic(market, implied_view(S, market), -1.0)
        assert back.allclose(implied_view(reciprocal_product(S, market), market), 1e-10)

    def test_payoff_form_matches_view_form(self, market, S):
        for t in (-0.7, 0.3, 1.8):
            a = e_geodesic(market, implied_view(S, market), t)
            b = e_geodesic_payoff(market, S, t)
            assert a.allclose(b, 1e-10)

    def test_gaussian_closure(self):
        g = make_grid(-6.0, 6.0, 513)
        m = MarketFamily("normal", g, sigma=1.0, anchor=0.0).density()
        b = MarketFamily("normal", g, sigma=1.0, anchor=0.8).density()
        for t in (-0.5, 0.25, 0.5, 1.5):
            expected = MarketFamily("normal", g, sigma=1.0, anchor=0.8 * t).density()
            assert e_geodesic(m, b, t).allclose(expected, 1e-8)

    def test_exponent_budget(self, market, S):
        with pytest.raises(OverflowRisk):
            e_geodesic_payoff(market, S, 1e4)

    def test_requires_positive_endpoints(self, market, desk_grid):
        beta_call = implied_view(call(desk_grid, 1.0), market)
        with pytest.raises(SupportViolation):
            e_geodesic(market, beta_call, 0.5)

    def test_exponent_composition(self, market, desk_grid, S):
        # the point at exponent s*t equals the point at t built from S^s
        s = 1.7
        Ss = Payoff(desk_grid, S.values**s)
        for t in (-0.4, 0.6):
            assert e_geodesic_payoff(market, S, s * t).allclose(e_geodesic_payoff(market, Ss, t), 1e-10)

    def test_geodesic_object(self, tmp_path, rng, market, desk_grid):
        b = random_distribution(rng, desk_grid)
        geo = Geodesic("exponential", market, b, (-1.0, 2.0))
        assert geo.evaluate(1.0).allclose(b, 1e-10)
        rows = geo.trace([0.0, 0.5, 1.0])
        assert rows.shape == (3, len(desk_grid))
        path = tmp_path / "trace.csv"
        geo.write_csv(path, [0.0, 1.0])
        lines = path.read_text().splitlines()
        assert len(lines) == 3 and lines[0].startswith("t,")
        with pytest.raises(InvalidRange):
            Geodesic("mixture", market, b, (0.0, 2.0))


class TestTangents:
    def test_zero_vectors(self, rng, market, desk_grid):
        b = random_distribution(rng, desk_grid)
        assert not np.any(tangent_pair(market, market, b).bra)
        assert not np.any(tangent_pair(market, b, market).ket)

    def test_bra_has_zero_mass(self, rng, market, desk_grid):
        b = random_distribution(rng, desk_grid)
        pair = tangent_pair(market, b, b)
        assert abs(np.dot(desk_grid.weights, pair.bra)) < 1e-10

    def test_reproduces_risk(self, rng, market, desk_grid, S):
        beta_pi = implied_view(random_payoff(rng, desk_grid), market)
        beta_s = implied_view(S, market)
        direct = risk_scalar_product(beta_pi, market, beta_s)
        assert abs(tangent_pair(market, beta_pi, beta_s).scalar_product() - direct) < 1e-12


class TestRiskAlongGeodesic:
    def test_origin(self, market, S):
        risk, var = risk_along_geodesic(market, S, 0.0)
        assert abs(risk) < 1e-15 and var > 0

    def test_monotone_ladder(self, market, S):
        risks = [risk_along_geodesic(market, S, t)[0] for t in np.linspace(-2, 2, 17)]
        assert np.all(np.diff(risks) > 0)

    def test_simpson_identity(self, market, S):
        ts = np.linspace(0.0, 1.0, 65)
        integral = oracles.simpson(ts, [risk_along_geodesic(market, S, t)[1] for t in ts])
        assert abs(risk_along_geodesic(market, S, 1.0)[0] - integral) < 1e-6

    def test_derivative_is_variance(self, market, S):
        dt = 1e-4
        for t in (-1.0, 0.0, 0.8):
            up = risk_along_geodesic(market, S, t + dt)[0]
            down = risk_along_geodesic(market, S, t - dt)[0]
            assert abs((up - down) / (2 * dt) - risk_along_geodesic(market, S, t)[1]) < 1e-6

    def test_iso_risk_sets_are_mixture_flat(self, rng, market, desk_grid, S):
        # two different distributions with the same risk
        r = 0.03
        a, _ = e_project_iso_risk(market, RiskConstraint.under(market, S, r))
        other = random_smooth_scenario(rng, desk_grid)
        b = e_project_multi(market, [RiskConstraint.under(market, S, r),
                                     RiskConstraint.under(market, other, 0.0)]).distribution
        assert abs(risk_of(a, market, S) - r) < 1e-10 and abs(risk_of(b, market, S) - r) < 1e-10
        for t in (0.25, 0.5, 0.75):
            assert abs(risk_of(m_geodesic(a, b, t), market, S) - r) < 1e-10


class TestIsoRiskProjection:
    def test_zero_target(self, market, S):
        beta, t = e_project_iso_risk(market, RiskConstraint.under(market, S, 0.0))
        assert t == 0.0 and beta is market

    def test_recovers_unit_exponent(self, market, S):
        r1 = risk_along_geodesic(market, S, 1.0)[0]
        beta, t = e_project_iso_risk(market, RiskConstraint.under(market, S, r1))
        assert abs(t - 1.0) < 1e-8
        assert beta.allclose(implied_view(S, market), 1e-8)

    def test_sign(self, market, S):
        _, t = e_project_iso_risk(market, RiskConstraint.under(market, S, -0.02))
        assert t < 0

    def test_unreachable(self, market, S):
        with pytest.raises(TargetUnreachable):
            e_project_iso_risk(market, RiskConstraint.under(market, S, 50.0))

    def test_constant_scenario(self, market, desk_grid):
        with pytest.raises(Infeasible):
            e_project_iso_risk(market, RiskConstraint.under(market, constant(desk_grid), 0.01))


def feasible_candidates(rng, beta, basis, weights, count, scale=0.3):
    """Distributions with the same linear moments as ``beta``.

    Random directions are made orthogonal (in the weighted inner product)
    to every row of ``basis``; only strictly positive results are kept.
    """
    B = np.asarray(basis) * np.sqrt(weights)
    Q, _ = np.linalg.qr(B.T)
    out = []
    while len(out) < count:
        z = rng.normal(size=len(weights)) * np.sqrt(weights)
        z = z - Q @ (Q.T @ z)
        delta = z / np.sqrt(weights)
        delta *= scale * np.min(beta) / np.max(np.abs(delta)) * rng.uniform(0.1, 1.0)
        cand = beta + delta
        if np.all(cand > 0):
            out.append(cand)
    return out


class TestMultiProjection:
    def test_single_matches_iso_risk(self, market, S):
        c = RiskConstraint.under(market, S, 0.015)
        beta, _ = e_project_iso_risk(market, c)
        res = e_project_multi(market, [c])
        assert res.distribution.allclose(beta, 1e-8)

    def test_redundant_constraint(self, market, S):
        c = RiskConstraint.under(market, S, 0.015)
        res = e_project_multi(market, [c, c])
        single = e_project_multi(market, [c])
        assert res.distribution.allclose(single.distribution, 1e-8)

    def test_two_scenarios_optimal(self, rng, market, desk_grid):
        S1 = call(desk_grid, 1.1) + constant(desk_grid, 0.2)
        S2 = put(desk_grid, 0.9) + constant(desk_grid, 0.3)
        res = e_project_multi(market, [RiskConstraint.under(market, S1, 0.01),
                                       RiskConstraint.under(market, S2, -0.02)])
        beta = res.distribution
        assert abs(risk_of(beta, market, S1) - 0.01) < 1e-8
        assert abs(risk_of(beta, market, S2) + 0.02) < 1e-8
        basis = [np.ones(len(desk_grid)), np.log(S1.values), np.log(S2.values)]
        best = kl_divergence(beta, market)
        for cand in feasible_candidates(rng, beta.density, basis, desk_grid.weights, 100):
            q = Distribution(desk_grid, cand)
            assert abs(risk_of(q, market, S1) - 0.01) < 1e-9
            assert kl_divergence(q, market) >= best - 1e-14

    def test_infeasible_constant(self, market, desk_grid, S):
        with pytest.raises(Infeasible):
            e_project_multi(market, [RiskConstraint.under(market, constant(desk_grid), 0.01)])

    def test_contradictory_constraints(self, market, S):
        # the same scenario cannot carry two different risks
        with pytest.raises((Infeasible, TargetUnreachable)):
            e_project_multi(market, [RiskConstraint.under(market, S, 0.01),
                                     RiskConstraint.under(market, S, 0.02)])

    def test_empty(self, market):
        with pytest.raises(InvalidRange):
            e_project_multi(market, [])


class TestOrthogonality:
    def test_market_view(self, market, S):
        rep = orthogonality_check(market, market, S)
        assert rep["t_r"] == 0.0
        assert rep["product_scenario"] == 0.0 and rep["product_market"] == 0.0

    def test_point_on_geodesic(self, market, S):
        beta = e_geodesic_payoff(market, S, 0.7)
        rep = orthogonality_check(beta, market, S)
        assert abs(rep["t_r"] - 0.7) < 1e-8
        assert abs(rep["product_scenario"]) < 1e-10 and abs(rep["product_market"]) < 1e-10

    def test_random_view(self, rng, market, desk_grid, S):
        Pi = random_payoff(rng, desk_grid)
        rep = orthogonality_check(implied_view(Pi, market), market, S)
        assert abs(rep["risk"] - specific_risk(Pi, S, market)) < 1e-9
        assert abs(rep["product_scenario"]) < 1e-8 and abs(rep["product_market"]) < 1e-8


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_orthogonality_property(seed):
    rng = np.random.default_rng(seed)
    grid = make_grid(0.25, 4.0, 128, "log-uniform")
    m = random_market(rng, grid)
    S = random_payoff(rng, grid)
    beta = implied_view(random_payoff(rng, grid), m)
    rep = orthogonality_check(beta, m, S)
    assert abs(rep["product_scenario"]) < 1e-8
    assert abs(rep["product_market"]) < 1e-8
