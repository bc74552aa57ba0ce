"""The packaged finance scenarios: two self-financing portfolios whose
price processes solve backward equations with different generators,
compared in a stochastic order.

Scenarios are posed in discounted variables, exactly the form in which
the ordering conditions hold cleanly: discounting dX = x a(t,x) dt +
x b(t,x) dB against the rate r turns the hedging generator
g(t,x,y,z) = -ry - z (a-r)/b (+ constraint terms) into a discounted
generator whose driver is identically zero for the unconstrained
portfolio and a pure constraint penalty for the constrained ones.  At
time zero the discounted value equals the undiscounted price, so reports
carry both the discounted problem and the original generators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .expr import Expr, parse
from .model import (POSITIVE_HALFLINE, Box, DiffusionSpec, GeneratorSpec,
                    PayoffSpec, ProblemSpec, default_box)

__all__ = ["Scenario", "ParameterViolation", "SCENARIO_IDS", "build_scenario",
           "default_params", "scenario_to_file"]

SCENARIO_IDS = ("misspecified_vol", "alpha_abs_z", "borrow_one_side",
                "borrow_both", "short_sell")


class ParameterViolation(ValueError):
    """A scenario parameter constraint does not hold; names the constraint."""

    def __init__(self, constraint: str, detail: str = ""):
        self.constraint = constraint
        super().__init__(f"{constraint}" + (f": {detail}" if detail else ""))


_DEFAULTS = {
    "misspecified_vol": {"r": 0.05, "a1": None, "a2": None, "b1": 0.2, "b2": 0.3,
                         "x0": 100.0, "T": 1.0},
    "alpha_abs_z": {"alpha": 0.1, "a1": None, "a2": None, "b1": 0.2, "b2": 0.3,
                    "x0_1": 100.0, "x0_2": 100.0, "T": 1.0, "r": 0.05},
    "borrow_one_side": {"r": 0.05, "R": 0.07, "a1": None, "a2": None,
                        "b1": 0.2, "b2": 0.2, "x0": 100.0, "T": 1.0},
    "borrow_both": {"r": 0.05, "R": 0.07, "a1": None, "a2": None,
                    "b1": 0.2, "b2": 0.3, "x0": 100.0, "T": 1.0},
    "short_sell": {"r": 0.05, "R": 0.07, "a1": None, "a2": None,
                   "b1": 0.2, "b2": 0.25, "b3": 0.05, "theta_gap": 0.1,
                   "x0": 100.0, "T": 1.0},
}


def default_params(scenario_id: str) -> dict:
    """Default parameters; a_i default to r (the martingale case)."""
    if scenario_id not in _DEFAULTS:
        raise ParameterViolation("unknown scenario", scenario_id)
    params = dict(_DEFAULTS[scenario_id])
    r = params.get("r", 0.05)
    for key in ("a1", "a2"):
        if params.get(key) is None:
            params[key] = r
    return params


@dataclass
class Scenario:
    """One built scenario: the discounted problem pair plus metadata."""

    id: str
    params: dict
    problem_1: ProblemSpec
    problem_2: ProblemSpec
    zeta: Optional[Expr]
    expected_order_type: str
    expected_applied_result: str
    r: float
    discounted: bool
    # original (undiscounted) generator expressions, for the report
    raw_generators: tuple = ("", "")

    def payoff_transform(self, phi: PayoffSpec) -> PayoffSpec:
        """Discounted payoff e^{-rT} phi(x e^{rT}) for an undiscounted phi."""
        return _transform_payoff(phi, self.r, self.params["T"], self.discounted)

    def with_payoff(self, phi: PayoffSpec):
        """Problem pair carrying the (transformed) payoff."""
        phi_d = self.payoff_transform(phi)
        return (replace(self.problem_1, payoff=phi_d),
                replace(self.problem_2, payoff=phi_d))

    def default_box(self, sample_count: int = 512, seed: int = 12345) -> Box:
        return default_box(self.problem_1, sample_count=sample_count, seed=seed)


def _transform_payoff(phi: PayoffSpec, r: float, T: float,
                      discounted: bool) -> PayoffSpec:
    if not discounted or r == 0.0:
        return phi
    growth = math.exp(r * T)
    new = math.exp(-r * T) * phi.phi.substitute("x", parse("x") * growth)
    return replace(phi, phi=new)


def _coeff(value, name: str) -> Expr:
    """Coefficient parameter: a number or an expression in (t, x)."""
    e = parse(str(value)) if not isinstance(value, Expr) else value
    extra = e.free_vars - {"t", "x"}
    if extra:
        raise ParameterViolation("coefficient variables",
                                 f"{name} may only depend on (t, x)")
    return e


def _positive(e: Expr, name: str, x0: float, T: float):
    import numpy as np
    x = x0 * np.exp(np.linspace(-2.0, 2.0, 33))
    t = np.linspace(0.0, T, 33)
    vals = np.asarray(e.eval({"t": t, "x": x}), dtype=float)
    if not np.all(vals > 0):
        raise ParameterViolation("positive volatility", f"{name} <= 0 on samples")


def _ordered(lo: Expr, hi: Expr, name: str, x0: float, T: float):
    import numpy as np
    x = x0 * np.exp(np.linspace(-2.0, 2.0, 33))
    t = np.linspace(0.0, T, 33)
    a = np.asarray(lo.eval({"t": t, "x": x}), dtype=float)
    b = np.asarray(hi.eval({"t": t, "x": x}), dtype=float)
    if not np.all(a <= b + 1e-12):
        raise ParameterViolation(name)


def _discounted_argument(r: float) -> Expr:
    """x e^{rt}, the undiscounted state as seen by discounted coefficients."""
    if r == 0.0:
        return parse("x")
    return parse(f"x * exp({r!r} * t)")


def _discounted_diffusion(a: Expr, b: Expr, r: float, x0: float) -> DiffusionSpec:
    """d(x~) = x~ (a - r) dt + x~ b dB with coefficients read at x e^{rt}."""
    arg = _discounted_argument(r)
    x = parse("x")
    mu = x * (a.substitute("x", arg) - r)
    sigma = x * b.substitute("x", arg)
    return DiffusionSpec(mu=mu, sigma=sigma, x0=x0,
                         state_domain=POSITIVE_HALFLINE)


def _theta(a: Expr, b: Expr, r: float) -> Expr:
    return (a - r) / b


def _g_linear_hedge(theta_at: Expr) -> Expr:
    """Discounted unconstrained hedge generator -z * theta(t, x e^{rt})."""
    return -(parse("z") * theta_at)


def build_scenario(scenario_id: str, params: Optional[dict] = None) -> Scenario:
    """Construct the discounted problem pair for one packaged scenario.

    Raises ParameterViolation when a constraint of the underlying example
    fails (volatility order/positivity, R >= r, the theta order for the
    short-selling example, initial-state order).
    """
    base = default_params(scenario_id)
    overrides = dict(params or {})
    unknown = set(overrides) - set(base)
    if unknown:
        raise ParameterViolation("unknown parameter", ", ".join(sorted(unknown)))
    base.update(overrides)
    p = base
    r, T = float(p.get("r", 0.05)), float(p["T"])
    if T <= 0:
        raise ParameterViolation("horizon", "T must be positive")

    if scenario_id == "alpha_abs_z":
        return _build_alpha_abs_z(p, T)

    x0 = float(p["x0"])
    if x0 <= 0:
        raise ParameterViolation("initial state", "x0 must be positive")
    a1, a2 = _coeff(p["a1"], "a1"), _coeff(p["a2"], "a2")
    b1, b2 = _coeff(p["b1"], "b1"), _coeff(p["b2"], "b2")
    _positive(b1, "b1", x0, T)
    _positive(b2, "b2", x0, T)
    _ordered(b1, b2, "volatility order", x0, T)

    arg = _discounted_argument(r)
    th1 = _theta(a1, b1, r).substitute("x", arg)
    th2 = _theta(a2, b2, r).substitute("x", arg)
    d1 = _discounted_diffusion(a1, b1, r, x0)
    d2 = _discounted_diffusion(a2, b2, r, x0)
    y, z = parse("y"), parse("z")
    payoff = _transform_payoff(
        PayoffSpec(phi=parse(f"max(x - {x0!r}, 0)"), growth_exponent=1.0,
                   asserted_convex=True, asserted_nondecreasing=True),
        r, T, discounted=True)

    def finish(g1, g2, raw, expected):
        return Scenario(id=scenario_id, params=p,
                        problem_1=ProblemSpec(d1, GeneratorSpec.from_expr(g1),
                                              payoff, T),
                        problem_2=ProblemSpec(d2, GeneratorSpec.from_expr(g2),
                                              payoff, T),
                        zeta=parse("0"), expected_order_type=expected[0],
                        expected_applied_result=expected[1], r=r,
                        discounted=True, raw_generators=raw)

    if scenario_id == "misspecified_vol":
        g1 = _g_linear_hedge(th1)
        g2 = _g_linear_hedge(th2)
        raw = (f"-{r!r}*y - z*(a1 - {r!r})/b1", f"-{r!r}*y - z*(a2 - {r!r})/b2")
        return finish(g1, g2, raw, ("conv", "pp3"))

    R = float(p["R"])
    if R < r:
        raise ParameterViolation("rate order", f"need R >= r, got R={R}, r={r}")
    spread = R - r

    if scenario_id == "borrow_one_side":
        g1 = _g_linear_hedge(th1)
        g2 = _g_linear_hedge(th2) + spread * (y - z / b2.substitute("x", arg)).call("neg")
        raw = (f"-{r!r}*y - z*(a1 - {r!r})/b1",
               f"-{r!r}*y - z*(a2 - {r!r})/b2 + {spread!r}*neg(y - z/b2)")
        return finish(g1, g2, raw, ("conv", "pp3"))

    if scenario_id == "borrow_both":
        g1 = _g_linear_hedge(th1) + spread * (y - z / b1.substitute("x", arg)).call("neg")
        g2 = _g_linear_hedge(th2) + spread * (y - z / b2.substitute("x", arg)).call("neg")
        raw = (f"-{r!r}*y - z*(a1 - {r!r})/b1 + {spread!r}*neg(y - z/b1)",
               f"-{r!r}*y - z*(a2 - {r!r})/b2 + {spread!r}*neg(y - z/b2)")
        return finish(g1, g2, raw, ("conv", "pp3"))

    if scenario_id == "short_sell":
        b3 = _coeff(p["b3"], "b3")
        _positive(b3, "b3", x0, T)
        gap = float(p["theta_gap"])
        if gap < 0:
            raise ParameterViolation("theta order",
                                     "theta_3 must dominate theta_2: theta_gap >= 0")
        # third asset chosen so theta_3 = theta_2 + theta_gap
        th3 = (th2 + gap)
        b3_at = b3.substitute("x", arg)
        b2_at = b2.substitute("x", arg)
        zp, zn = parse("pos(z)"), parse("neg(z)")
        g2 = -(zp * th2) + zn * th3 \
            + spread * (y - zp / b2_at + zn / b3_at).call("neg")
        g1 = _g_linear_hedge(th1)
        raw = (f"-{r!r}*y - z*(a1 - {r!r})/b1",
               f"-{r!r}*y - pos(z)*theta2 + neg(z)*theta3 "
               f"+ {spread!r}*neg(y - pos(z)/b2 + neg(z)/b3)")
        return finish(g1, g2, raw, ("conv", "pp1"))

    raise ParameterViolation("unknown scenario", scenario_id)


def _build_alpha_abs_z(p: dict, T: float) -> Scenario:
    """Undiscounted pair with the risk-seeking kernel g = alpha(t) |z|."""
    x0_1 = float(p["x0_1"])
    x0_2 = float(p["x0_2"])
    if x0_1 <= 0 or x0_2 <= 0:
        raise ParameterViolation("initial state", "x0 must be positive")
    if x0_1 > x0_2:
        raise ParameterViolation("initial state order", "need x0_1 <= x0_2")
    a1, a2 = _coeff(p["a1"], "a1"), _coeff(p["a2"], "a2")
    b1, b2 = _coeff(p["b1"], "b1"), _coeff(p["b2"], "b2")
    alpha = _coeff(p["alpha"], "alpha")
    if "x" in alpha.free_vars:
        raise ParameterViolation("alpha", "alpha may only depend on t")
    _positive(alpha, "alpha", 1.0, T)
    _positive(b1, "b1", x0_1, T)
    _positive(b2, "b2", x0_2, T)
    _ordered(a1, a2, "drift order", x0_1, T)
    _ordered(b1, b2, "volatility order", x0_1, T)

    x = parse("x")
    g = alpha * parse("abs(z)")
    d1 = DiffusionSpec(mu=x * a1, sigma=x * b1, x0=x0_1,
                       state_domain=POSITIVE_HALFLINE)
    d2 = DiffusionSpec(mu=x * a2, sigma=x * b2, x0=x0_2,
                       state_domain=POSITIVE_HALFLINE)
    payoff = PayoffSpec(phi=parse(f"max(x - {x0_2!r}, 0)"), growth_exponent=1.0,
                        asserted_convex=True, asserted_nondecreasing=True)
    gen = GeneratorSpec.from_expr(g)
    return Scenario(id="alpha_abs_z", params=p,
                    problem_1=ProblemSpec(d1, gen, payoff, T),
                    problem_2=ProblemSpec(d2, gen, payoff, T),
                    zeta=None, expected_order_type="iconv",
                    expected_applied_result="pp4", r=0.0, discounted=False,
                    raw_generators=("alpha*abs(z)", "alpha*abs(z)"))


def run_scenario(scenario_id: str, params: Optional[dict] = None,
                 engine: str = "pde", nx: int = 400, nt: int = 400,
                 mc_cfg=None, sample_count: int = 512, seed: int = 12345):
    """Full scenario report: verdict, empirical table, curvature and
    monotonicity probes, and the comparison against the expected verdict.

    Returns (report dict, OrderingVerdict, value curves for plotting,
    the built Scenario)."""
    from . import ordering, pde
    from .model import validate_assumptions

    s = build_scenario(scenario_id, params)
    box = s.default_box(sample_count=sample_count, seed=seed)
    pair = (s.problem_1, s.problem_2)
    v = ordering.verdict(pair, s.expected_order_type, s.zeta, box)

    family = [s.payoff_transform(phi)
              for phi in ordering.default_payoff_family(s.expected_order_type,
                                                        s.problem_2.diffusion.x0)]
    rows = ordering.verify_order_empirically(pair, family, engine=engine,
                                             order_type=s.expected_order_type,
                                             nx=nx, nt=nt, mc_cfg=mc_cfg)
    v.empirical = rows

    probes = {}
    curves = {}
    for tag, prob in (("problem_1", s.problem_1), ("problem_2", s.problem_2)):
        prob_probe = replace(prob, payoff=family[-1])
        sol = pde.solve(prob_probe, pde.default_grid(prob_probe, nx=nx, nt=nt))
        probes[tag] = {
            "convexity": pde.convexity_profile(sol).to_json(),
            "monotonicity": pde.monotonicity_profile(sol).to_json(),
            "sign_constancy": pde.sign_constancy_profile(sol).to_json(),
        }
    for phi in family:
        label = str(phi.phi)
        p1, p2 = (replace(s.problem_1, payoff=phi), replace(s.problem_2, payoff=phi))
        sol1 = pde.solve(p1, pde.default_grid(p1, nx=min(nx, 201), nt=min(nt, 200)))
        sol2 = pde.solve(p2, pde.default_grid(p2, nx=min(nx, 201), nt=min(nt, 200)))
        curves[label] = (sol1.nodes, sol1.u[0], sol2.nodes, sol2.u[0])

    labels = [validate_assumptions(prob, box).functional_label for prob in pair]
    report = {
        "scenario": scenario_id,
        "params": {k: (str(val) if isinstance(val, Expr) else val)
                   for k, val in s.params.items()},
        "discounted": s.discounted,
        "rate": s.r,
        "generators": {"discounted": [str(s.problem_1.generator.g),
                                      str(s.problem_2.generator.g)],
                       "original": list(s.raw_generators)},
        "functional_labels": labels,
        "expected": {"order_type": s.expected_order_type,
                     "applied_result": s.expected_applied_result},
        "verdict": v.to_json(),
        "matches_expected": bool(v.applied_result == s.expected_applied_result),
        "all_rows_pass": bool(all(r.passed for r in rows)),
        "probes": probes,
        "engine": engine,
    }
    return report, v, curves, s


def scenario_to_file(s: Scenario, engine: str = "pde") -> dict:
    """Serialize the built (discounted) problem pair as a scenario document."""
    doc = {
        "diffusion": {"mu": str(s.problem_1.diffusion.mu),
                      "sigma": str(s.problem_1.diffusion.sigma),
                      "x0": s.problem_1.diffusion.x0,
                      "domain": s.problem_1.diffusion.state_domain},
        "diffusion2": {"mu": str(s.problem_2.diffusion.mu),
                       "sigma": str(s.problem_2.diffusion.sigma),
                       "x0": s.problem_2.diffusion.x0,
                       "domain": s.problem_2.diffusion.state_domain},
        "generator": {"expr": str(s.problem_1.generator.g)},
        "generator2": {"expr": str(s.problem_2.generator.g)},
        "payoff": {"expr": str(s.problem_1.payoff.phi),
                   "growth_exponent": s.problem_1.payoff.growth_exponent},
        "horizon": s.problem_1.horizon,
        "solver": {"engine": engine},
    }
    if s.zeta is not None:
        doc["zeta"] = str(s.zeta)
    return doc
