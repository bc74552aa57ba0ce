import math
import os
import time

import numpy as np
import pytest

from gorder import pde
from gorder.expr import parse
from gorder.model import DiffusionSpec, GeneratorSpec, PayoffSpec, ProblemSpec

from bs_oracle import black_scholes_call

BM = DiffusionSpec(parse("0"), parse("1"), 0.0, "whole_line")
ZERO_G = GeneratorSpec(parse("0"), normalized=True, strongly_normalized=True)

BS = ProblemSpec(
    DiffusionSpec(parse("0.05*x"), parse("0.2*x"), 100.0, "positive_halfline"),
    GeneratorSpec(parse("-0.05*y"), normalized=True),
    PayoffSpec(parse("max(x - 100, 0)"), 1.0, asserted_convex=True,
               asserted_nondecreasing=True),
    1.0)
BS_ORACLE = black_scholes_call(100.0, 100.0, 0.05, 0.2, 1.0)


def heat(payoff: str, p: float = 2.0) -> ProblemSpec:
    return ProblemSpec(BM, ZERO_G, PayoffSpec(parse(payoff), p), 1.0)


def solve_default(problem, nx=400, nt=400, **kw):
    return pde.solve(problem, pde.default_grid(problem, nx=nx, nt=nt, **kw))


def test_martingale_identity():
    sol = solve_default(heat("x", 1.0))
    assert abs(pde.g_expectation(sol)) <= 1e-8


def test_second_moment_of_brownian_motion():
    sol = solve_default(heat("x^2"))
    assert pde.g_expectation(sol) == pytest.approx(1.0, abs=1e-3)


def test_black_scholes_value():
    sol = solve_default(BS)
    assert pde.g_expectation(sol) == pytest.approx(BS_ORACLE, abs=0.05)


def test_terminal_layer_is_bit_exact_payoff():
    sol = solve_default(BS, nx=100, nt=50)
    expected = BS.payoff.phi.eval({"x": sol.nodes})
    assert np.array_equal(sol.u[-1], expected)


def test_grid_convergence_factor():
    # halving both steps cuts the Black-Scholes error by >= 1.7
    errors = []
    for nx, nt in ((201, 200), (401, 400)):
        sol = solve_default(BS, nx=nx, nt=nt)
        errors.append(abs(pde.g_expectation(sol) - BS_ORACLE))
    assert errors[0] / errors[1] >= 1.7


def test_truncation_width_has_small_effect():
    v5 = pde.g_expectation(solve_default(BS, nx=401, nt=200, L=5.0))
    v10 = pde.g_expectation(solve_default(BS, nx=801, nt=200, L=10.0))
    assert abs(v5 - v10) < 2e-2


def test_constant_preservation():
    p = ProblemSpec(BS.diffusion, GeneratorSpec(parse("0.1*abs(z)"), True, True),
                    PayoffSpec(parse("7.5"), 1.0), 1.0)
    sol = solve_default(p, nx=200, nt=200)
    assert pde.g_expectation(sol) == pytest.approx(7.5, abs=1e-8)
    assert np.max(np.abs(sol.u - 7.5)) <= 1e-8


def test_comparison_principle():
    lo = ProblemSpec(BS.diffusion, GeneratorSpec(parse("-0.05*y")), BS.payoff, 1.0)
    hi = ProblemSpec(BS.diffusion, GeneratorSpec(parse("-0.05*y + 0.01")),
                     BS.payoff, 1.0)
    v_lo = pde.g_expectation(solve_default(lo, nx=200, nt=200))
    v_hi = pde.g_expectation(solve_default(hi, nx=200, nt=200))
    scale = max(1.0, abs(v_hi))
    assert v_lo <= v_hi + 1e-8 * scale


def test_g_expectation_interpolates_and_rejects_out_of_grid():
    with pytest.raises(pde.OutOfGrid):
        pde.solve(BS, pde.GridSpec(x_min=40.0, x_max=80.0, nx=50, nt=20,
                                   spacing="log"))


def test_convexity_profile_heat_square():
    sol = solve_default(heat("x^2"))
    prof = pde.convexity_profile(sol)
    # curvature 2 away from the truncation boundary; the linear-extrapolation
    # boundary rows pull u_xx toward zero in a diffusion-width layer, so the
    # interior minimum stays positive but well below 2
    assert prof.min_value > 0.0
    assert prof.center_value == pytest.approx(2.0, abs=0.01)


def test_convexity_profile_concave_payoff():
    sol = solve_default(heat("-x^2"))
    prof = pde.convexity_profile(sol)
    assert prof.min_value == pytest.approx(-2.0, abs=0.01)


def test_convexity_profile_call_scenario():
    sol = solve_default(BS)
    prof = pde.convexity_profile(sol)
    assert prof.min_value >= -1e-6 * prof.scale


def test_monotonicity_profiles():
    sol = solve_default(heat("x", 1.0))
    assert pde.monotonicity_profile(sol).min_value == pytest.approx(1.0, abs=1e-9)

    sol = solve_default(heat("-x", 1.0))
    assert pde.monotonicity_profile(sol).min_value == pytest.approx(-1.0, abs=1e-9)

    sol = solve_default(BS)  # call payoff with nondecreasing generator
    assert pde.monotonicity_profile(sol).min_value >= -1e-6


def test_sign_constancy_profiles():
    signs = pde.sign_constancy_profile(solve_default(heat("x^2")))
    assert set(signs.signs) == {"+"}
    assert not signs.ever_mixed

    signs = pde.sign_constancy_profile(solve_default(heat("x", 1.0)))
    assert set(signs.signs) == {"0"}

    signs = pde.sign_constancy_profile(solve_default(heat("-x^2")))
    assert set(signs.signs) == {"-"}


def test_sign_constancy_borrow_scenario():
    from gorder.scenarios import build_scenario
    s = build_scenario("borrow_one_side")
    sol = solve_default(s.problem_2, nx=200, nt=200)
    signs = pde.sign_constancy_profile(sol)
    assert not signs.ever_mixed
    # sign never decreases marching toward t = 0
    order = {"-": -1, "0": 0, "mixed": 0, "+": 1}
    values = [order[s] for s in signs.signs]
    assert all(values[i] >= values[i + 1] for i in range(len(values) - 1))


def test_grid_too_coarse_diagnostic():
    stiff = ProblemSpec(BM, GeneratorSpec(parse("500*y")),
                        PayoffSpec(parse("x^2"), 2.0), 1.0)
    with pytest.raises(pde.GridTooCoarse):
        solve_default(stiff, nx=50, nt=20)


def test_non_finite_reports_location():
    bad = ProblemSpec(
        DiffusionSpec(parse("0"), parse("sqrt(x)"), 1.0, "whole_line"),
        ZERO_G, PayoffSpec(parse("x"), 1.0), 1.0)
    grid = pde.GridSpec(x_min=-5.0, x_max=5.0, nx=50, nt=10)
    with pytest.raises(pde.PdeFailure):
        pde.solve(bad, grid)


def test_dirichlet_boundary_mode():
    grid = pde.GridSpec(x_min=-5.0, x_max=5.0, nx=201, nt=200,
                        boundary="dirichlet_payoff")
    sol = pde.solve(heat("x", 1.0), grid)
    assert pde.g_expectation(sol) == pytest.approx(0.0, abs=1e-8)
    assert sol.u[0, 0] == sol.u[-1, 0]   # boundary pinned at the payoff


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        pde.GridSpec(x_min=1.0, x_max=0.0, nx=10, nt=10)
    with pytest.raises(ValueError):
        pde.GridSpec(x_min=-1.0, x_max=1.0, nx=10, nt=10, spacing="log")
    with pytest.raises(ValueError):
        pde.GridSpec(x_min=0.0, x_max=1.0, nx=2, nt=10)


def test_csv_export(tmp_path):
    sol = solve_default(heat("x", 1.0), nx=21, nt=5)
    path = os.path.join(tmp_path, "grid.csv")
    pde.export_csv(sol, path)
    lines = open(path).read().splitlines()
    assert lines[0] == "t,x,u,ux,uxx"
    assert len(lines) == 1 + 6 * 21
    first = lines[1].split(",")
    assert float(first[0]) == 0.0
    assert float(first[1]) == sol.nodes[0]


def test_solve_runtime_budget():
    start = time.perf_counter()
    solve_default(BS)
    assert time.perf_counter() - start < 5.0
