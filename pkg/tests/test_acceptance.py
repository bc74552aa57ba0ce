"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL
line (run with `pytest tests/test_acceptance.py -v -s`).  Tolerances are
pinned here and nowhere else.
"""

import json
import math
import os
import time
from dataclasses import replace

import numpy as np
import pytest

from gorder import cli, mc, ordering, pde, scenarios
from gorder.expr import parse
from gorder.model import (CERTIFIED, VIOLATED, Box, DiffusionSpec,
                          GeneratorSpec, PayoffSpec, ProblemSpec,
                          scale_generator)

from bs_oracle import black_scholes_call

PDE_TOL = ordering.PDE_EMPIRICAL_TOL   # 1e-3 * (1 + |value_2|)


def report(name: str, ok: bool, detail: str = ""):
    line = f"{'PASS' if ok else 'FAIL'} {name}"
    if detail:
        line += f"  [{detail}]"
    print(line)
    assert ok, line


BS_PROBLEM = ProblemSpec(
    DiffusionSpec(parse("0.05*x"), parse("0.2*x"), 100.0, "positive_halfline"),
    GeneratorSpec(parse("-0.05*y"), normalized=True),
    PayoffSpec(parse("max(x - 100, 0)"), 1.0, asserted_convex=True,
               asserted_nondecreasing=True),
    1.0)
BS_ORACLE = black_scholes_call(100.0, 100.0, 0.05, 0.2, 1.0)


def test_criterion_01_black_scholes_reproduction():
    start = time.perf_counter()
    grid = pde.default_grid(BS_PROBLEM, nx=400, nt=400)
    value = pde.g_expectation(pde.solve(BS_PROBLEM, grid))
    elapsed = time.perf_counter() - start
    rel = abs(value - BS_ORACLE) / BS_ORACLE
    report("criterion 1: Black-Scholes reproduction",
           rel <= 0.005 and elapsed < 5.0,
           f"value={value:.4f} oracle={BS_ORACLE:.4f} rel={rel:.2e} "
           f"time={elapsed:.2f}s")


def test_criterion_02_solver_cross_validation():
    cfg = mc.McConfig(n_paths=200_000, n_steps=100, seed=2024)
    worst = 0.0
    detail = []
    for sid in scenarios.SCENARIO_IDS:
        s = scenarios.build_scenario(sid)
        for tag, prob in (("p1", s.problem_1), ("p2", s.problem_2)):
            v_pde = ordering.pde_value(prob)
            paths = mc.simulate_forward(prob.diffusion, prob.horizon, cfg)
            est = mc.solve_bsde_lsmc(paths, prob.generator, prob.payoff, cfg)
            z = abs(est.y0_mean - v_pde) / est.y0_stderr
            worst = max(worst, z)
            detail.append(f"{sid}/{tag} z={z:.2f}")
    report("criterion 2: pde/mc cross-validation on 5 scenarios",
           worst <= 3.0, f"max |z| = {worst:.2f}")


def test_criterion_03_linear_fbsde_oracle():
    sets = [(0.05, 0.0), (0.05, 0.3), (0.02, -0.2)]
    worst = 0.0
    for r, theta in sets:
        cfg = mc.McConfig(n_paths=100_000, n_steps=100, seed=7)
        paths = mc.simulate_forward(BS_PROBLEM.diffusion, 1.0, cfg)
        lsmc = mc.solve_bsde_lsmc(
            paths, GeneratorSpec(parse(f"-{r!r}*y - {theta!r}*z")),
            BS_PROBLEM.payoff, cfg)
        closed = mc.linear_bsde_closed_form(
            BS_PROBLEM.diffusion, parse("0"), parse(f"-{r!r}"),
            parse(f"-{theta!r}"), parse("0"), BS_PROBLEM.payoff, 1.0,
            mc.McConfig(n_paths=100_000, n_steps=100, seed=21))
        combined = math.hypot(lsmc.y0_stderr, closed.y0_stderr)
        z = abs(lsmc.y0_mean - closed.y0_mean) / combined
        worst = max(worst, z)
    report("criterion 3: linear-equation oracle vs regression solver",
           worst <= 3.0, f"max |z| = {worst:.2f} over {len(sets)} sets")


def test_criterion_04_convex_order_volatility_sweep():
    ok = True
    details = []
    for b2 in (0.2, 0.25, 0.3, 0.4):
        s = scenarios.build_scenario("misspecified_vol", {"b2": b2})
        family = [s.payoff_transform(p)
                  for p in ordering.default_payoff_family("conv", 100.0)]
        rows = ordering.verify_order_empirically(
            (s.problem_1, s.problem_2), family, engine="pde",
            order_type="conv", nx=400, nt=400)
        for row in rows:
            tol = PDE_TOL * (1.0 + abs(row.value_2))
            ok = ok and row.difference >= -tol
            if b2 == 0.2:
                ok = ok and abs(row.difference) <= tol
        details.append(f"b2={b2}: min diff = {min(r.difference for r in rows):+.2e}")
    report("criterion 4: convex-order inequality over the volatility sweep",
           ok, "; ".join(details))


def test_criterion_05_borrowing_rate_sweep():
    ok = True
    atm = []
    for R in (0.05, 0.06, 0.07, 0.10):
        s = scenarios.build_scenario("borrow_one_side", {"R": R})
        family = [s.payoff_transform(p)
                  for p in ordering.default_payoff_family("conv", 100.0)]
        rows = ordering.verify_order_empirically(
            (s.problem_1, s.problem_2), family, engine="pde",
            order_type="conv", nx=400, nt=400)
        for row in rows:
            tol = PDE_TOL * (1.0 + abs(row.value_2))
            ok = ok and row.difference >= -tol
            if R == 0.05:
                ok = ok and abs(row.difference) <= tol
        atm.append(rows[3].difference)   # the at-the-money call
    nondecreasing = all(a <= b + 1e-12 for a, b in zip(atm, atm[1:]))
    report("criterion 5: constrained vs unconstrained borrowing sweep",
           ok and nondecreasing,
           "ATM differences " + ", ".join(f"{d:+.4f}" for d in atm))


def test_criterion_06_condition_engine_ground_truth():
    box = Box(t=(0.0, 1.0), x=(30.0, 300.0), y=(-1000.0, 1000.0),
              z=(-1000.0, 1000.0), sample_count=512, seed=11)
    penalty = parse("0.02*neg(y - x*z)")
    ok_xy = ordering.check_convexity_2d(penalty, ("x", "y"), None,
                                        box).status == CERTIFIED
    ok_yz = ordering.check_convexity_2d(penalty, ("y", "z"), None,
                                        box).status == CERTIFIED

    sym_box = Box(t=(0.0, 1.0), x=(-5.0, 5.0), y=(-5.0, 5.0), z=(-5.0, 5.0),
                  sample_count=256, seed=7)
    first = ordering.check_convexity_2d(parse("-x^2"), ("x", "y"), None, sym_box)
    second = ordering.check_convexity_2d(parse("-x^2"), ("x", "y"), None, sym_box)
    reproducible = (first.status == VIOLATED and
                    first.witness == second.witness)
    e = parse("-x^2")
    w = first.witness
    fm = e.eval({"x": 0.5 * (w["P"]["x"] + w["Q"]["x"])})
    genuine = fm > 0.5 * (e.eval({"x": w["P"]["x"]}) + e.eval({"x": w["Q"]["x"]}))

    s = scenarios.build_scenario("short_sell")
    v = ordering.verdict((s.problem_1, s.problem_2), "conv", s.zeta,
                         s.default_box())
    short_ok = (v.applied_result == "pp1" and v.blocking == {"pp3": ["B2"]})

    report("criterion 6: condition-engine ground truth",
           ok_xy and ok_yz and reproducible and genuine and short_ok,
           f"penalty planes certified; -x^2 witness gap={first.max_violation:.3g}; "
           f"short_sell blocked by {v.blocking}")


CONV_SCENARIOS = ("misspecified_vol", "borrow_one_side", "borrow_both",
                  "short_sell")


def test_criterion_07_convexity_propagation():
    ok = True
    worst = 0.0
    for sid in CONV_SCENARIOS:
        s = scenarios.build_scenario(sid)
        family = [s.payoff_transform(p)
                  for p in ordering.default_payoff_family("conv", 100.0)]
        for prob in (s.problem_1, s.problem_2):
            for phi in family:
                sol = pde.solve(replace(prob, payoff=phi),
                                pde.default_grid(prob, nx=400, nt=400))
                prof = pde.convexity_profile(sol)
                floor = -1e-6 * prof.scale
                ok = ok and prof.min_value >= floor
                worst = min(worst, prof.min_value / prof.scale)
                signs = pde.sign_constancy_profile(sol)
                ok = ok and not signs.ever_mixed
    report("criterion 7: convexity propagation on conv-order scenarios",
           ok, f"worst scaled min u_xx = {worst:.2e}")


def _monotone_pairs():
    # equal volatilities, ordered drifts: the monotonic-order regime
    alpha = scenarios.build_scenario(
        "alpha_abs_z", {"b1": 0.2, "b2": 0.2, "a1": 0.03, "a2": 0.06})
    gen_lo = GeneratorSpec(parse("-0.05*y - 0.01"))
    gen_hi = GeneratorSpec(parse("-0.05*y"), normalized=True)
    phi = PayoffSpec(parse("x"), 1.0, asserted_nondecreasing=True)
    drift = (
        ProblemSpec(DiffusionSpec(parse("0.03*x"), parse("0.2*x"), 100.0,
                                  "positive_halfline"), gen_lo, phi, 1.0),
        ProblemSpec(DiffusionSpec(parse("0.06*x"), parse("0.2*x"), 100.0,
                                  "positive_halfline"), gen_hi, phi, 1.0))
    return [("alpha_equal_vol", (alpha.problem_1, alpha.problem_2), None),
            ("ordered_drift", drift, None)]


def test_criterion_08_monotonicity_on_mon_order_scenarios():
    ok = True
    worst = 0.0
    for name, pair, _ in _monotone_pairs():
        v = ordering.verdict(pair, "mon", None, None)
        ok = ok and v.order_type == "mon"
        family = ordering.default_payoff_family("mon", pair[0].diffusion.x0)
        for prob in pair:
            for phi in family:
                sol = pde.solve(replace(prob, payoff=phi),
                                pde.default_grid(prob, nx=400, nt=400))
                prof = pde.monotonicity_profile(sol)
                scale = prof.scale
                ok = ok and prof.min_value >= -1e-6 * scale
                worst = min(worst, prof.min_value / scale)
    report("criterion 8: monotonicity on mon-order scenarios",
           ok, f"worst scaled min u_x = {worst:.2e}")


def test_criterion_09_scaling_and_risk_duality():
    base = ProblemSpec(BS_PROBLEM.diffusion,
                       GeneratorSpec.from_expr(parse("0.1*abs(z)")),
                       BS_PROBLEM.payoff, 1.0)
    v1 = ordering.pde_value(base)
    ok = True
    details = []
    for a in (-1.0, 2.0):
        scaled = ProblemSpec(
            base.diffusion, scale_generator(base.generator, a),
            replace(base.payoff, phi=a * base.payoff.phi), 1.0)
        va = ordering.pde_value(scaled)
        tol = 2.0 * PDE_TOL * (1.0 + abs(a * v1))
        ok = ok and abs(va - a * v1) <= tol
        details.append(f"a={a:+g}: |E-aE|={abs(va - a * v1):.2e}")

    # bid = ask for a linear generator
    linear = ProblemSpec(BS_PROBLEM.diffusion,
                         GeneratorSpec(parse("-0.05*y - 0.2*z")),
                         BS_PROBLEM.payoff, 1.0)
    ask = ordering.pde_value(linear)
    bid = -ordering.pde_value(
        replace(linear, payoff=replace(linear.payoff,
                                       phi=-linear.payoff.phi)))
    tol = PDE_TOL * (1.0 + abs(ask))
    ok = ok and abs(bid - ask) <= tol
    details.append(f"|bid-ask|={abs(bid - ask):.2e}")
    report("criterion 9: generator scaling and bid/ask duality", ok,
           "; ".join(details))


def test_criterion_10_continuous_dependence():
    base = ProblemSpec(BS_PROBLEM.diffusion, BS_PROBLEM.generator,
                       BS_PROBLEM.payoff, 1.0)
    ns = (2, 4, 8, 16)
    perturbed = []
    for n in ns:
        d = base.diffusion
        perturbed.append(replace(base, diffusion=DiffusionSpec(
            d.mu, (1.0 + 1.0 / n) * d.sigma, d.x0, d.state_domain)))
    table = mc.continuous_dependence_experiment(
        base, perturbed, mc.McConfig(n_paths=50_000, n_steps=50, seed=40),
        sizes=[1.0 / n for n in ns])
    msd = [row["squared_diff"] for row in table.rows]
    decreasing = all(a > b for a, b in zip(msd, msd[1:]))
    tail = msd[-1] < msd[0] / 4.0
    report("criterion 10: continuous dependence decay",
           decreasing and tail,
           "msd " + ", ".join(f"{v:.3g}" for v in msd) +
           f"; slope={table.trend_slope:.2f}")


def test_criterion_11_flow_monotonicity():
    res = mc.monotone_coupling_check(BS_PROBLEM.diffusion, 90.0, 110.0, 1.0,
                                     mc.McConfig(n_paths=10_000, n_steps=100,
                                                 seed=3))
    report("criterion 11: coupled-path flow monotonicity",
           res.violation_fraction == 0.0,
           f"violations = {res.violation_fraction} over {res.n_cells} cells")


def test_criterion_12_deterministic_reports(tmp_path):
    doc = {
        "diffusion": {"mu": "0.05*x", "sigma": "0.2*x", "x0": 100.0,
                      "domain": "positive_halfline"},
        "generator": {"expr": "-0.05*y"},
        "payoff": {"expr": "max(x - 100, 0)", "growth_exponent": 1},
        "horizon": 1.0,
        "solver": {"engine": "mc",
                   "mc": {"paths": 20000, "steps": 50, "seed": 99}},
    }
    path = os.path.join(tmp_path, "scenario.json")
    with open(path, "w") as fh:
        json.dump(doc, fh)
    outputs = []
    for tag in ("a", "b"):
        out = os.path.join(tmp_path, tag)
        assert cli.main(["solve", path, "--out", out]) == cli.EXIT_OK
        outputs.append(open(os.path.join(out, "report.json"), "rb").read())
    solve_same = outputs[0] == outputs[1]

    s = scenarios.build_scenario("borrow_one_side")
    cmp_doc = scenarios.scenario_to_file(s)
    cmp_doc["solver"]["grid"] = {"nx": 150, "nt": 150}
    cmp_path = os.path.join(tmp_path, "cmp.json")
    with open(cmp_path, "w") as fh:
        json.dump(cmp_doc, fh)
    verdicts = []
    for tag in ("c", "d"):
        out = os.path.join(tmp_path, tag)
        assert cli.main(["compare", cmp_path, "--order", "conv",
                         "--out", out]) == cli.EXIT_OK
        verdicts.append(open(os.path.join(out, "verdict.json"), "rb").read())
    compare_same = verdicts[0] == verdicts[1]
    report("criterion 12: bit-identical reports under a fixed seed",
           solve_same and compare_same,
           f"solve identical={solve_same}, compare identical={compare_same}")
