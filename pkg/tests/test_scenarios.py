import numpy as np
import pytest

from gorder import cli, ordering, scenarios
from gorder.expr import parse
from gorder.model import CERTIFIED, VIOLATED, validate_assumptions


@pytest.mark.parametrize("sid", scenarios.SCENARIO_IDS)
def test_build_passes_assumption_validation(sid):
    s = scenarios.build_scenario(sid)
    box = s.default_box()
    for prob in (s.problem_1, s.problem_2):
        report = validate_assumptions(prob, box)
        for cid in ("A1_mu", "A1_sigma", "A2", "A4", "sigma_positive"):
            assert report.status(cid) == CERTIFIED, (sid, cid)


@pytest.mark.parametrize("sid", scenarios.SCENARIO_IDS)
def test_expected_verdicts(sid):
    s = scenarios.build_scenario(sid)
    v = ordering.verdict((s.problem_1, s.problem_2), s.expected_order_type,
                         s.zeta, s.default_box())
    assert v.order_type == s.expected_order_type
    assert v.applied_result == s.expected_applied_result


def test_equal_volatilities_make_identical_problems():
    s = scenarios.build_scenario("misspecified_vol", {"b2": 0.2})
    rng = np.random.default_rng(2)
    bindings = {"t": rng.uniform(0, 1, 1000), "x": rng.uniform(30, 300, 1000),
                "y": rng.uniform(-100, 100, 1000),
                "z": rng.uniform(-100, 100, 1000)}
    g1 = np.broadcast_to(np.asarray(s.problem_1.generator.g.eval(bindings)), (1000,))
    g2 = np.broadcast_to(np.asarray(s.problem_2.generator.g.eval(bindings)), (1000,))
    assert np.allclose(g1, g2, atol=1e-15)
    s1 = s.problem_1.diffusion.sigma.eval(bindings)
    s2 = s.problem_2.diffusion.sigma.eval(bindings)
    assert np.array_equal(np.broadcast_to(s1, (1000,)),
                          np.broadcast_to(s2, (1000,)))


def test_borrow_constraint_vanishes_at_equal_rates():
    s = scenarios.build_scenario("borrow_one_side", {"R": 0.05})
    rng = np.random.default_rng(4)
    bindings = {"t": rng.uniform(0, 1, 1000), "x": rng.uniform(30, 300, 1000),
                "y": rng.uniform(-100, 100, 1000),
                "z": rng.uniform(-100, 100, 1000)}
    g1 = np.broadcast_to(np.asarray(s.problem_1.generator.g.eval(bindings)), (1000,))
    g2 = np.broadcast_to(np.asarray(s.problem_2.generator.g.eval(bindings)), (1000,))
    assert np.allclose(g1, g2, atol=1e-15)


def test_parameter_violations():
    with pytest.raises(scenarios.ParameterViolation) as err:
        scenarios.build_scenario("short_sell", {"theta_gap": -0.1})
    assert "theta order" in str(err.value)
    with pytest.raises(scenarios.ParameterViolation):
        scenarios.build_scenario("borrow_one_side", {"R": 0.01})  # R < r
    with pytest.raises(scenarios.ParameterViolation):
        scenarios.build_scenario("misspecified_vol", {"b1": 0.4})  # b1 > b2
    with pytest.raises(scenarios.ParameterViolation):
        scenarios.build_scenario("misspecified_vol", {"b1": -0.1})
    with pytest.raises(scenarios.ParameterViolation):
        scenarios.build_scenario("alpha_abs_z", {"x0_1": 120.0})  # x0 order
    with pytest.raises(scenarios.ParameterViolation):
        scenarios.build_scenario("misspecified_vol", {"nope": 1.0})
    with pytest.raises(scenarios.ParameterViolation):
        scenarios.build_scenario("no_such_scenario")


def test_short_sell_expected_condition_pattern():
    s = scenarios.build_scenario("short_sell")
    v = ordering.verdict((s.problem_1, s.problem_2), "conv", s.zeta,
                         s.default_box())
    assert v.blocking == {"pp3": ["B2"]}
    assert v.condition("E1").status == CERTIFIED
    assert v.condition("E2").status == CERTIFIED


def test_borrow_both_sandwich_fails_but_pp3_applies():
    s = scenarios.build_scenario("borrow_both")
    v = ordering.verdict((s.problem_1, s.problem_2), "conv", s.zeta,
                         s.default_box())
    assert v.applied_result == "pp3"
    # the two-sided penalty admits no intermediate drift sandwich
    from gorder.model import make_driver
    f1 = make_driver(s.problem_1.diffusion, s.problem_1.generator)
    f2 = make_driver(s.problem_2.diffusion, s.problem_2.generator)
    rep = ordering.check_dominance(f1, f2, s.default_box(), "all_z", parse("0"))
    assert rep.status == VIOLATED


def test_alpha_scenario_is_undiscounted_g_expectation():
    s = scenarios.build_scenario("alpha_abs_z")
    assert not s.discounted
    report = validate_assumptions(s.problem_1, s.default_box())
    assert report.functional_label == "g-expectation"
    # identity payoff is unchanged by the (absent) transform
    phi = ordering.default_payoff_family("iconv", 100.0)[0]
    assert str(s.payoff_transform(phi).phi) == str(phi.phi)


def test_scenario_file_round_trip():
    s = scenarios.build_scenario("borrow_one_side")
    doc = scenarios.scenario_to_file(s)
    p1, p2, config = cli.build_problems(doc)
    rng = np.random.default_rng(6)
    bindings = {"t": rng.uniform(0, 1, 500), "x": rng.uniform(30, 300, 500),
                "y": rng.uniform(-100, 100, 500),
                "z": rng.uniform(-100, 100, 500)}
    for built, original in ((p1, s.problem_1), (p2, s.problem_2)):
        a = np.broadcast_to(np.asarray(built.generator.g.eval(bindings)), (500,))
        b = np.broadcast_to(np.asarray(original.generator.g.eval(bindings)), (500,))
        assert np.array_equal(a, b)
        xa = built.diffusion.sigma.eval(bindings)
        xb = original.diffusion.sigma.eval(bindings)
        assert np.array_equal(np.broadcast_to(xa, (500,)),
                              np.broadcast_to(xb, (500,)))
        assert built.diffusion.x0 == original.diffusion.x0


def test_run_scenario_report():
    report, v, curves, s = scenarios.run_scenario("misspecified_vol",
                                                  nx=150, nt=150)
    assert report["matches_expected"]
    assert report["all_rows_pass"]
    assert report["verdict"]["applied_result"] == "pp3"
    assert set(report["probes"]) == {"problem_1", "problem_2"}
    assert len(curves) == 6   # one curve pair per convex-family payoff
    # the discounted hedge generator -z*theta(t, x e^{rt}) vanishes at z = 0
    assert report["functional_labels"] == ["g-expectation", "g-expectation"]
    assert report["generators"]["original"][0].startswith("-0.05*y")


def test_default_payoff_is_discount_transformed_atm_call():
    s = scenarios.build_scenario("misspecified_vol")
    value = ordering.pde_value(s.problem_1, nx=201, nt=200)
    from bs_oracle import black_scholes_call
    assert value == pytest.approx(black_scholes_call(100, 100, 0.05, 0.2, 1.0),
                                  abs=0.02)
