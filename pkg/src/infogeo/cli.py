"""Batch front end: ``infogeo <command> --scenario s.json [options]``.

A scenario file is JSON with a ``schema_version`` field, a grid, a market
and named payoffs, views, phi functions, utilities, cost models and
observation models.  Every command prints one JSON object (or writes it to
``--out``) and optionally a CSV trace.  Exit codes: 0 success, 1 usage,
2 invalid scenario or input, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry, hedging, investment, phi as phis, products, risk, views
from .errors import InfoGeoError, SolverError, ValidationError
from .measures import Distribution, Grid, expectation, kl_divergence, make_grid, normalize
from .products import MarketFamily, Payoff, fmt, read_columns, write_columns

SCHEMA_VERSION = 1
DEFAULT_GRID = {"lo": 0.25, "hi": 4.0, "scheme": "log-uniform"}
DEFAULT_N = 512

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- #
# Deterministic JSON
# --------------------------------------------------------------------------- #


def to_json(obj) -> str:
    """Compact JSON with floats at 17 significant digits; NaN/inf become null."""
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return to_json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            return "null"
        text = fmt(obj)
        # keep floats recognisable as floats: 1 -> 1.0
        return text if any(c in text for c in ".e") else text + ".0"
    if obj is None:
        return "null"
    return json.dumps(str(obj))


def _plain(d: dict) -> dict:
    """Drop array-valued entries (those go to CSV, not JSON)."""
    return {k: v for k, v in d.items() if not isinstance(v, np.ndarray)}


# --------------------------------------------------------------------------- #
# Scenario
# --------------------------------------------------------------------------- #


def _no_duplicates(pairs):
    out = {}
    for k, v in pairs:
        if k in out:
            raise ValidationError(f"duplicate key {k!r} in scenario")
        out[k] = v
    return out


def _need(entry: dict, key: str, where: str):
    if key not in entry:
        raise ValidationError(f"{where}: missing field {key!r}")
    return entry[key]


def grid_from_config(entry: dict | None) -> Grid:
    entry = dict(DEFAULT_GRID if entry is None else entry)
    n = entry.get("n")
    if n is None:
        env = os.environ.get("INFOGEO_GRID_N")
        try:
            n = int(env) if env else DEFAULT_N
        except ValueError:
            raise ValidationError(f"INFOGEO_GRID_N={env!r} is not an integer") from None
    return make_grid(float(_need(entry, "lo", "grid")), float(_need(entry, "hi", "grid")),
                     int(n), entry.get("scheme", "uniform"))


@dataclass
class Scenario:
    grid: Grid
    family: MarketFamily | None
    market: Distribution
    base_dir: Path
    entries_by_section: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict)

    SECTIONS = ("payoffs", "views", "phis", "utilities", "costs", "observations")

    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read scenario {path}: {exc.strerror}") from None
        try:
            data = json.loads(text, object_pairs_hook=_no_duplicates)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data, path.parent)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> "Scenario":
        if not isinstance(data, dict):
            raise ValidationError("scenario must be a JSON object")
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {version!r}")
        grid = grid_from_config(data.get("grid"))
        base_dir = Path(base_dir)
        scenario = cls(grid=grid, family=None, market=None, base_dir=base_dir,
                       parameters=dict(data.get("parameters", {})))
        seen = {}
        for section in cls.SECTIONS:
            entries = data.get(section, {})
            if not isinstance(entries, dict):
                raise ValidationError(f"section {section!r} must be an object")
            for name in entries:
                if name in seen:
                    raise ValidationError(f"name {name!r} used in both {seen[name]} and {section}")
                seen[name] = section
            scenario.entries_by_section[section] = entries
        market_entry = _need(data, "market", "scenario")
        scenario.family, scenario.market = scenario._density(market_entry, "market")
        # resolve everything up front so a broken scenario fails before any command runs
        for section in cls.SECTIONS:
            for name in scenario.entries_by_section[section]:
                scenario.get(section, name)
        return scenario

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def _density(self, entry: dict, where: str) -> tuple[MarketFamily | None, Distribution]:
        if "csv" in entry:
            xs, cols = read_columns(self.path(entry["csv"]))
            self._check_x(xs, entry["csv"])
            if len(cols) != 1:
                raise ValidationError(f"{where}: density CSV needs columns x,density")
            return None, normalize(next(iter(cols.values())), self.grid)
        kind = entry.get("family", "lognormal")
        table = None
        if kind == "histogram":
            t = _need(entry, "table", where)
            table = (tuple(_need(t, "x", where)), tuple(_need(t, "density", where)))
        family = MarketFamily(kind, self.grid, sigma=float(entry.get("sigma", 0.2)),
                              anchor=float(entry.get("anchor", 1.0)),
                              vary=entry.get("vary", "sigma"), table=table)
        return family, family.density()

    def _check_x(self, xs, name) -> None:
        pts = self.grid.points
        if xs.shape != pts.shape or np.max(np.abs(xs - pts)) > 1e-12 * max(1.0, abs(self.grid.hi)):
            raise ValidationError(f"{name}: x column does not match the scenario grid")

    def get(self, section: str, name: str, _stack=()):
        key = (section, name)
        if key in self._cache:
            return self._cache[key]
        if section == "phis" and name in phis.BUILTIN and name not in self.entries_by_section["phis"]:
            return phis.by_name(name)
        if name not in self.entries_by_section.get(section, {}):
            raise ValidationError(f"unknown name {name!r} in {section}")
        if key in _stack:
            raise ValidationError(f"circular reference through {name!r}")
        entry = self.entries_by_section[section][name]
        if not isinstance(entry, dict):
            raise ValidationError(f"{section}.{name} must be an object")
        build = getattr(self, f"_build_{section}")
        value = build(name, entry, _stack + (key,))
        self._cache[key] = value
        return value

    # builders ---------------------------------------------------------------

    def _build_payoffs(self, name, entry, stack):
        g = self.grid
        kind = _need(entry, "type", f"payoffs.{name}")
        if kind == "constant":
            return products.constant(g, float(entry.get("value", 1.0)))
        if kind == "forward":
            return products.forward(g)
        if kind in ("call", "put", "digital"):
            strike = float(_need(entry, "strike", f"payoffs.{name}"))
            return getattr(products, kind)(g, strike)
        if kind == "piecewise-linear":
            return products.piecewise_linear(g, _need(entry, "xs", name), _need(entry, "ys", name))
        if kind == "csv":
            return products.read_payoff_csv(self.path(_need(entry, "path", name)), g)
        if kind == "combination":
            terms = _need(entry, "terms", f"payoffs.{name}")
            total = np.zeros(len(g))
            for ref, weight in terms.items():
                if float(weight) < 0:
                    raise ValidationError(f"payoffs.{name}: weights must be nonnegative")
                total = total + float(weight) * self.get("payoffs", ref, stack).values
            return Payoff(g, total)
        if kind == "score":
            family = self.family
            if family is None:
                raise ValidationError(f"payoffs.{name}: score products need a parametric market")
            if "vary" in entry:
                family = MarketFamily(family.kind, g, family.sigma, family.anchor,
                                      entry["vary"], family.table)
            bump = entry.get("bump")
            return products.score_product(family, bump=None if bump is None else float(bump))
        if kind == "reciprocal":
            base = self.get("payoffs", _need(entry, "of", name), stack)
            return products.reciprocal_product(base, self.market)
        if kind == "likelihood":
            b = self.get("views", _need(entry, "view", name), stack)
            return products.likelihood_product(b, self.market)
        if kind == "power":
            base = self.get("payoffs", _need(entry, "of", name), stack)
            return products.power_product(base, float(_need(entry, "R", name)), self.market)
        raise ValidationError(f"payoffs.{name}: unknown type {kind!r}")

    def _build_views(self, name, entry, stack):
        return self._density(entry, f"views.{name}")[1]

    def _build_phis(self, name, entry, stack):
        kind = _need(entry, "type", f"phis.{name}")
        if kind == "utility":
            return phis.from_utility(self.get("utilities", _need(entry, "utility", name), stack))
        params = {k: v for k, v in entry.items() if k != "type"}
        return phis.by_name(kind, **params)

    def _build_utilities(self, name, entry, stack):
        kind = _need(entry, "type", f"utilities.{name}")
        params = {k: float(v) for k, v in entry.items() if k != "type"}
        try:
            return investment.utility_by_name(kind, **params)
        except KeyError as exc:
            raise ValidationError(f"utilities.{name}: missing parameter {exc}") from None

    def _build_costs(self, name, entry, stack):
        kind = _need(entry, "type", f"costs.{name}")
        w = entry.get("weight", 1.0)
        if w == "inverse-market":
            weight = 1.0 / self.market.density
        elif isinstance(w, (int, float)):
            weight = np.full(len(self.grid), float(w))
        else:
            weight = np.asarray(w, dtype=float)
        return hedging.CostModel(kind, weight, float(entry.get("exponent", 2.0)))

    def _build_observations(self, name, entry, stack):
        kind = _need(entry, "type", f"observations.{name}")
        if kind == "gaussian":
            y_grid = grid_from_config(_need(entry, "y_grid", name))
            return views.ObservationModel.gaussian(self.grid, y_grid, float(_need(entry, "noise", name)))
        if kind == "csv":
            return views.ObservationModel.read_csv(self.path(_need(entry, "path", name)), self.grid)
        raise ValidationError(f"observations.{name}: unknown type {kind!r}")

    # accessors ---------------------------------------------------------------

    def payoff(self, name):
        return self.get("payoffs", name)

    def view(self, name):
        if name in (None, "market"):
            return self.market
        return self.get("views", name)

    def param(self, value, key, default=None):
        if value is not None:
            return value
        if key in self.parameters:
            return self.parameters[key]
        if default is not None:
            return default
        raise UsageError(f"--{key.replace('_', '-')} is required (no scenario default)")


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #


def _floats(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_price(sc: Scenario, a):
    F = sc.payoff(a.payoff)
    return {"payoff": a.payoff, "price": products.price(F, sc.market)}


def cmd_view(sc: Scenario, a):
    F = sc.payoff(a.payoff)
    beta = products.implied_view(F, sc.market)
    if a.csv:
        write_columns(a.csv, sc.grid, {"density": beta.density})
    return {
        "payoff": a.payoff,
        "price": products.price(F, sc.market),
        "kl_to_market": kl_divergence(beta, sc.market),
        "mean": expectation(beta, sc.grid.points),
    }


def _risk_names(sc, a):
    return a.portfolio, sc.param(a.risk_product, "risk_product")


def cmd_risk(sc: Scenario, a):
    pi_name, s_name = _risk_names(sc, a)
    rep = risk.risk_report(sc.payoff(pi_name), sc.payoff(s_name), sc.market)
    return {
        "portfolio": pi_name,
        "risk_product": s_name,
        "risk_spread": rep.risk_spread,
        "risk_triangle": rep.risk_triangle,
        "risk_scalar": rep.risk_scalar,
        "angle": rep.angle,
    }


def cmd_triangle(sc: Scenario, a):
    pi_name, s_name = _risk_names(sc, a)
    rep = risk.risk_report(sc.payoff(pi_name), sc.payoff(s_name), sc.market)
    return {"portfolio": pi_name, "risk_product": s_name, **rep.to_dict()}


def cmd_geodesic(sc: Scenario, a):
    s_name = sc.param(a.risk_product, "risk_product")
    S = sc.payoff(s_name)
    ts = _floats(sc.param(a.t, "t_ladder"))
    m = sc.market
    if a.kind == "mixture":
        target = products.implied_view(S, m)
        path = geometry.Geodesic("mixture", m, target, (0.0, 1.0))
        beta_s = target
        rows = []
        for t in ts:
            bt = path.evaluate(t)
            rows.append({"t": t, "risk": risk.risk_scalar_product(bt, m, beta_s),
                         "kl_to_market": kl_divergence(bt, m)})
    else:
        beta_s = products.implied_view(S, m)
        lo, hi = min(ts + [0.0]), max(ts + [1.0])
        path = geometry.Geodesic("exponential", m, beta_s, (lo, hi))
        rows = []
        for t in ts:
            r, var = geometry.risk_along_geodesic(m, S, t)
            rows.append({"t": t, "risk": r, "variance": var})
    if a.csv:
        path.write_csv(a.csv, ts)
    return {"risk_product": s_name, "kind": a.kind, "points": rows}


def _parse_constraint(sc, text):
    name, sep, target = str(text).partition(":")
    if not sep:
        raise UsageError(f"constraint {text!r} must look like PAYOFF:TARGET")
    try:
        r = float(target)
    except ValueError:
        raise UsageError(f"constraint target {target!r} is not a number") from None
    return name, geometry.RiskConstraint.under(sc.market, sc.payoff(name), r)


def cmd_project(sc: Scenario, a):
    items = [_parse_constraint(sc, c) for c in (a.constraint or sc.param(None, "constraints"))]
    m = sc.market
    if len(items) == 1:
        name, con = items[0]
        beta, t = geometry.e_project_iso_risk(m, con)
        out = {"mode": "single", "constraints": [name], "t": t,
               "residual": risk.specific_risk(Payoff(sc.grid, beta.density / m.density),
                                              con.scenario, m) - con.target}
    else:
        res = geometry.e_project_multi(m, [c for _, c in items])
        beta = res.distribution
        out = {"mode": "multi", "constraints": [n for n, _ in items],
               "multipliers": list(res.multipliers), "residuals": list(res.residuals),
               "iterations": res.iterations, "method": res.method}
    out["kl_to_market"] = kl_divergence(beta, m)
    if a.csv:
        write_columns(a.csv, sc.grid, {"density": beta.density})
    return out


def cmd_hedge_cproj(sc: Scenario, a):
    pi_name, s_name = _risk_names(sc, a)
    cost = sc.get("costs", sc.param(a.cost, "cost"))
    res = hedging.c_projection(sc.payoff(pi_name), sc.payoff(s_name), sc.market, cost)
    if a.csv:
        products.write_payoff_csv(a.csv, res.payoff)
    return {"portfolio": pi_name, "risk_product": s_name, **_plain(res.to_dict())}


def cmd_hedge_pure(sc: Scenario, a):
    s_name = sc.param(a.risk_product, "risk_product")
    phi = sc.get("phis", sc.param(a.phi, "phi"))
    r = float(sc.param(a.target, "target"))
    res = hedging.pure_hedge(sc.payoff(s_name), sc.market, phi, r)
    if a.csv:
        products.write_payoff_csv(a.csv, res.payoff)
    return {"risk_product": s_name, "target": r, **_plain(res.to_dict())}


def _investor(sc, a):
    b_name = sc.param(a.view, "view")
    u_name = sc.param(a.utility, "utility")
    return b_name, sc.view(b_name), u_name, sc.get("utilities", u_name)


def cmd_invest(sc: Scenario, a):
    b_name, b, u_name, U = _investor(sc, a)
    F = investment.utility_optimal_product(b, sc.market, U)
    if a.csv:
        products.write_payoff_csv(a.csv, F)
    return {
        "view": b_name,
        "utility": u_name,
        "price": products.price(F, sc.market),
        "expected_utility": expectation(b, U.value(F.values)),
        "expected_log_return": expectation(b, np.log(F.values)),
    }


def cmd_invest_constrained(sc: Scenario, a):
    b_name, b, u_name, U = _investor(sc, a)
    s_name = sc.param(a.risk_product, "risk_product")
    r = float(sc.param(a.target, "target"))
    res = investment.partially_hedged_product(b, sc.market, U, sc.payoff(s_name), r)
    if a.csv:
        write_columns(a.csv, sc.grid, {"value": res.payoff.values,
                                       "modified_aversion": res.modified_aversion})
    return {"view": b_name, "utility": u_name, "risk_product": s_name, "target": r,
            **res.to_dict()}


def cmd_duality(sc: Scenario, a):
    b_name, b, u_name, U = _investor(sc, a)
    rep = investment.duality_check(U, b, sc.market)
    if a.csv:
        write_columns(a.csv, sc.grid, {"investment": rep.investment.values,
                                       "hedge": rep.hedge.payoff.values})
    return {"view": b_name, "utility": u_name, **rep.to_dict()}


def cmd_recycle(sc: Scenario, a):
    s_name = sc.param(a.risk_product, "risk_product")
    phi = sc.get("phis", sc.param(a.phi, "phi"))
    plan = investment.recycle(sc.payoff(a.asset), sc.payoff(s_name), sc.market, phi)
    out = {"asset": a.asset, "risk_product": s_name}
    if a.csv and a.belief_csv:
        sheet = json.loads(plan.write_term_sheet(a.csv, a.belief_csv))
        out.update(sheet)
    else:
        out.update(plan.to_dict())
    return out


def cmd_infer(sc: Scenario, a):
    prior = sc.view(a.prior)
    if a.method == "bayes":
        model = sc.get("observations", sc.param(a.observation, "observation"))
        y0 = float(sc.param(a.y0, "y0"))
        j = int(np.argmin(np.abs(model.y_grid.points - y0)))
        posterior, product = views.bayes_likelihood(prior, model.kernel[:, j])
        extra = {"y0": float(model.y_grid.points[j])}
    elif a.method == "jeffrey":
        model = sc.get("observations", sc.param(a.observation, "observation"))
        means = _floats(sc.param(a.evidence_mean, "evidence_mean"))
        sd = float(sc.param(a.evidence_sd, "evidence_sd"))
        y = model.y_grid.points
        raw = sum(np.exp(-0.5 * ((y - mu) / sd) ** 2) for mu in means)
        evidence = normalize(raw, model.y_grid)
        posterior, product = views.jeffrey_likelihood(prior, model, evidence)
        extra = {"evidence_mean": means, "evidence_sd": sd}
    else:
        stat = sc.param(a.statistic, "statistic")
        if stat == "x":
            g = sc.grid.points
        elif stat.startswith("ln:"):
            g = np.log(products.unit_price(sc.payoff(stat[3:]), sc.market).values)
        else:
            raise UsageError("--statistic must be 'x' or 'ln:<payoff>'")
        target = float(sc.param(a.target, "target"))
        posterior, product, c = views.canonical_likelihood(prior, g, target)
        extra = {"statistic": stat, "target": target, "c": c}
    if a.csv:
        write_columns(a.csv, sc.grid, {"posterior": posterior.density, "product": product.values})
    return {
        "method": a.method,
        **extra,
        "posterior_mean": expectation(posterior, sc.grid.points),
        "kl_to_prior": kl_divergence(posterior, prior),
    }


def cmd_sensitivity(sc: Scenario, a):
    if sc.family is None:
        raise ValidationError("sensitivity needs a parametric market family")
    family = sc.family
    if a.vary:
        family = MarketFamily(family.kind, sc.grid, family.sigma, family.anchor, a.vary, family.table)
    bump = sc.param(a.bump, "bump", products.default_bump(family.parameter))
    fd, spread = risk.sensitivity_check(family, sc.payoff(a.portfolio), bump=float(bump))
    return {"portfolio": a.portfolio, "parameter": family.vary, "bump": float(bump),
            "finite_difference": fd, "specific_risk": spread, "difference": fd - spread}


COMMANDS = {
    "price": cmd_price,
    "view": cmd_view,
    "risk": cmd_risk,
    "triangle": cmd_triangle,
    "geodesic": cmd_geodesic,
    "project": cmd_project,
    "hedge-cproj": cmd_hedge_cproj,
    "hedge-pure": cmd_hedge_pure,
    "invest": cmd_invest,
    "invest-constrained": cmd_invest_constrained,
    "duality": cmd_duality,
    "recycle": cmd_recycle,
    "infer": cmd_infer,
    "sensitivity": cmd_sensitivity,
}


# --------------------------------------------------------------------------- #
# Argument parsing
# --------------------------------------------------------------------------- #


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="infogeo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--out", help="write the JSON summary here instead of stdout")
        return p

    p = add("price", "price a payoff under the market")
    p.add_argument("--payoff", required=True)
    p = add("view", "implied view of a payoff")
    p.add_argument("--payoff", required=True)
    p.add_argument("--csv")
    for name, text in (("risk", "specific risk three ways"), ("triangle", "divergence triangle")):
        p = add(name, text)
        p.add_argument("--portfolio", required=True)
        p.add_argument("--risk-product")
    p = add("geodesic", "risk along a geodesic toward the scenario view")
    p.add_argument("--risk-product")
    p.add_argument("--kind", choices=("exponential", "mixture"), default="exponential")
    p.add_argument("--t", help="comma-separated parameter ladder")
    p.add_argument("--csv")
    p = add("project", "iso-risk e-projection (repeat --constraint for several)")
    p.add_argument("--constraint", action="append", help="PAYOFF:TARGET")
    p.add_argument("--csv")
    p = add("hedge-cproj", "cost-optimal zero-risk hedge")
    p.add_argument("--portfolio", required=True)
    p.add_argument("--risk-product")
    p.add_argument("--cost")
    p.add_argument("--csv")
    p = add("hedge-pure", "pure phi-divergence hedge")
    p.add_argument("--risk-product")
    p.add_argument("--phi")
    p.add_argument("--target", type=float)
    p.add_argument("--csv")
    for name, text in (("invest", "expected-utility optimal product"),
                       ("invest-constrained", "risk-constrained investment"),
                       ("duality", "hedge-investment duality check")):
        p = add(name, text)
        p.add_argument("--view")
        p.add_argument("--utility")
        p.add_argument("--csv")
        if name == "invest-constrained":
            p.add_argument("--risk-product")
            p.add_argument("--target", type=float)
    p = add("recycle", "package an exposure as an investment product")
    p.add_argument("--asset", required=True)
    p.add_argument("--risk-product")
    p.add_argument("--phi")
    p.add_argument("--csv", help="hedge payoff CSV")
    p.add_argument("--belief-csv", help="implied belief and risk aversion CSV")
    p = add("infer", "believed distribution from data or targets")
    p.add_argument("method", choices=("bayes", "jeffrey", "canonical"))
    p.add_argument("--prior", help="view name (default: market)")
    p.add_argument("--observation")
    p.add_argument("--y0", type=float)
    p.add_argument("--evidence-mean")
    p.add_argument("--evidence-sd", type=float)
    p.add_argument("--statistic")
    p.add_argument("--target", type=float)
    p.add_argument("--csv")
    p = add("sensitivity", "finite-difference sensitivity vs specific risk")
    p.add_argument("--portfolio", required=True)
    p.add_argument("--vary", choices=("sigma", "anchor"))
    p.add_argument("--bump", type=float)
    return parser


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def run_command(argv) -> int:
    out = None
    try:
        args = build_parser().parse_args(list(argv))
        if args.command is None:
            raise UsageError("a command is required")
        out = args.out
        scenario = Scenario.load(args.scenario)
        result = COMMANDS[args.command](scenario, args)
        _emit(to_json({"command": args.command, **result}), out)
        return EXIT_OK
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except SolverError as exc:
        # checked first: some solver failures are also domain errors
        _emit(to_json(_error_body(exc)), out)
        sys.stderr.write(f"solver error ({exc.reason}): {exc}\n")
        return EXIT_SOLVER
    except (InfoGeoError, ValueError) as exc:
        _emit(to_json(_error_body(exc)), out)
        sys.stderr.write(f"invalid input: {exc}\n")
        return EXIT_SCENARIO


def _error_body(exc) -> dict:
    details = getattr(exc, "details", {}) or {}
    return {
        "error": "solver" if isinstance(exc, SolverError) else "validation",
        "reason": getattr(exc, "reason", "invalid_input"),
        "message": str(exc),
        "diagnostics": {k: v for k, v in details.items()},
    }


def main(argv=None) -> int:
    return run_command(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
