import json
import os

import pytest

from gorder import cli, scenarios

from bs_oracle import black_scholes_call

HEAT_DOC = {
    "diffusion": {"mu": "0", "sigma": "1", "x0": 0.0, "domain": "whole_line"},
    "generator": {"expr": "0"},
    "payoff": {"expr": "x^2", "growth_exponent": 2},
    "horizon": 1.0,
    "solver": {"engine": "pde", "grid": {"nx": 200, "nt": 200}},
}

BS_DOC = {
    "diffusion": {"mu": "0.05*x", "sigma": "0.2*x", "x0": 100.0,
                  "domain": "positive_halfline"},
    "generator": {"catalog": "discount", "params": {"r": 0.05}},
    "payoff": {"catalog": "call", "params": {"strike": 100.0},
               "growth_exponent": 1},
    "horizon": 1.0,
    "solver": {"engine": "pde", "grid": {"nx": 400, "nt": 400}},
}


def write(tmp_path, doc, name="scenario.json"):
    path = os.path.join(tmp_path, name)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


def read_json(tmp_path, *parts):
    with open(os.path.join(tmp_path, *parts)) as fh:
        return json.load(fh)


def test_solve_heat_scenario(tmp_path):
    path = write(tmp_path, HEAT_DOC)
    out = os.path.join(tmp_path, "out")
    assert cli.main(["solve", path, "--out", out]) == cli.EXIT_OK
    report = read_json(out, "report.json")
    assert report["g_expectation"] == pytest.approx(1.0, abs=2e-3)
    assert report["engine"] == "pde"
    assert "version" in report["config"]
    assert os.path.exists(os.path.join(out, "grid.csv"))


def test_solve_black_scholes_scenario(tmp_path):
    path = write(tmp_path, BS_DOC)
    out = os.path.join(tmp_path, "out")
    assert cli.main(["solve", path, "--out", out]) == cli.EXIT_OK
    report = read_json(out, "report.json")
    oracle = black_scholes_call(100.0, 100.0, 0.05, 0.2, 1.0)
    assert report["g_expectation"] == pytest.approx(oracle, abs=0.05)


def test_unknown_key_is_rejected(tmp_path):
    doc = dict(HEAT_DOC)
    doc["surprise"] = 1
    assert cli.main(["solve", write(tmp_path, doc)]) == cli.EXIT_INPUT
    nested = json.loads(json.dumps(HEAT_DOC))
    nested["solver"]["grid"]["extra"] = 2
    assert cli.main(["solve", write(tmp_path, nested)]) == cli.EXIT_INPUT


def test_bad_expression_is_input_error(tmp_path):
    doc = json.loads(json.dumps(HEAT_DOC))
    doc["generator"] = {"expr": "2 + $"}
    assert cli.main(["solve", write(tmp_path, doc)]) == cli.EXIT_INPUT


def test_solver_failure_exit_code(tmp_path):
    doc = json.loads(json.dumps(HEAT_DOC))
    doc["generator"] = {"expr": "500*y"}
    doc["solver"]["grid"] = {"nx": 50, "nt": 20}
    assert cli.main(["solve", write(tmp_path, doc)]) == cli.EXIT_SOLVER


def _compare_doc(scenario_id="misspecified_vol", params=None, nx=150):
    s = scenarios.build_scenario(scenario_id, params)
    doc = scenarios.scenario_to_file(s)
    doc["solver"]["grid"] = {"nx": nx, "nt": nx}
    doc["payoff_family"] = "conv"
    return doc, s


def test_compare_misspecified_vol(tmp_path):
    doc, _ = _compare_doc()
    out = os.path.join(tmp_path, "cmp")
    rc = cli.main(["compare", write(tmp_path, doc), "--order", "conv",
                   "--out", out])
    assert rc == cli.EXIT_OK
    verdict = read_json(out, "verdict.json")
    assert verdict["order_type"] == "conv"
    assert verdict["applied_result"] == "pp3"
    assert os.path.exists(os.path.join(out, "empirical.csv"))
    assert os.path.exists(os.path.join(out, "empirical.png"))


def test_compare_identical_problems_zero_differences(tmp_path):
    doc, _ = _compare_doc(params={"b2": 0.2})
    out = os.path.join(tmp_path, "cmp")
    rc = cli.main(["compare", write(tmp_path, doc), "--order", "conv",
                   "--out", out])
    assert rc == cli.EXIT_OK
    verdict = read_json(out, "verdict.json")
    assert all(row["difference"] == 0.0 for row in verdict["empirical"])


def test_compare_reversed_volatilities_exit_code(tmp_path):
    doc, _ = _compare_doc()
    doc["diffusion"], doc["diffusion2"] = doc["diffusion2"], doc["diffusion"]
    doc["generator"], doc["generator2"] = doc["generator2"], doc["generator"]
    out = os.path.join(tmp_path, "cmp")
    rc = cli.main(["compare", write(tmp_path, doc), "--order", "conv",
                   "--out", out])
    assert rc == cli.EXIT_NO_VERDICT
    verdict = read_json(out, "verdict.json")
    sigma = [c for c in verdict["conditions"] if c["id"] == "sigma_order"][0]
    assert sigma["status"] == "violated"
    assert "witness" in sigma


def test_compare_requires_second_problem(tmp_path):
    assert cli.main(["compare", write(tmp_path, HEAT_DOC)]) == cli.EXIT_INPUT


def test_example_command(tmp_path):
    out = os.path.join(tmp_path, "ex")
    rc = cli.main(["example", "misspecified_vol", "--out", out,
                   "--nx", "150", "--nt", "150"])
    assert rc == cli.EXIT_OK
    report = read_json(out, "report.json")
    assert report["matches_expected"]
    for name in ("u0_problem1.csv", "u0_problem2.csv", "curves.png",
                 "differences.png", "empirical.csv"):
        assert os.path.exists(os.path.join(out, name)), name
    header = open(os.path.join(out, "u0_problem1.csv")).readline().strip()
    assert header == "payoff_id,x,value"


def test_example_equal_rates_zero_differences(tmp_path):
    out = os.path.join(tmp_path, "ex")
    rc = cli.main(["example", "borrow_one_side", "--params", "R=0.05",
                   "--out", out, "--nx", "150", "--nt", "150"])
    assert rc == cli.EXIT_OK
    report = read_json(out, "report.json")
    for row in report["verdict"]["empirical"]:
        assert abs(row["difference"]) <= row["tolerance"]


def test_example_parameter_violation_exit_code(tmp_path):
    rc = cli.main(["example", "short_sell", "--params", "theta_gap=-0.1",
                   "--out", os.path.join(tmp_path, "ex")])
    assert rc == cli.EXIT_INPUT


def test_probe_convexity(tmp_path):
    path = write(tmp_path, HEAT_DOC)
    out = os.path.join(tmp_path, "probe")
    assert cli.main(["probe", path, "--probe", "convexity", "--out", out]) \
        == cli.EXIT_OK
    probe = read_json(out, "probe.json")
    assert probe["result"]["min_value"] > 0.0
    assert probe["result"]["center_value"] == pytest.approx(2.0, abs=0.01)
    assert os.path.exists(os.path.join(out, "probe.png"))


def test_probe_monotonicity_call(tmp_path):
    path = write(tmp_path, BS_DOC)
    out = os.path.join(tmp_path, "probe")
    assert cli.main(["probe", path, "--probe", "monotonicity", "--out", out]) \
        == cli.EXIT_OK
    probe = read_json(out, "probe.json")
    assert probe["result"]["min_value"] >= -1e-6


def test_probe_sign(tmp_path):
    path = write(tmp_path, HEAT_DOC)
    out = os.path.join(tmp_path, "probe")
    assert cli.main(["probe", path, "--probe", "sign", "--out", out]) == cli.EXIT_OK
    probe = read_json(out, "probe.json")
    assert probe["result"]["first_mixed_layer"] is None


def test_probe_dependence_table_decreases(tmp_path):
    doc = json.loads(json.dumps(BS_DOC))
    doc["solver"] = {"engine": "mc", "mc": {"paths": 20000, "steps": 20,
                                            "seed": 5}}
    path = write(tmp_path, doc)
    out = os.path.join(tmp_path, "probe")
    assert cli.main(["probe", path, "--probe", "dependence", "--out", out]) \
        == cli.EXIT_OK
    probe = read_json(out, "probe.json")
    msd = [row["squared_diff"] for row in probe["rows"]]
    assert all(a > b for a, b in zip(msd, msd[1:]))
    assert os.path.exists(os.path.join(out, "dependence.csv"))


def test_validate_command(tmp_path):
    doc = json.loads(json.dumps(BS_DOC))
    doc["checks"] = ["A1_mu", "A2", "A3"]
    path = write(tmp_path, doc)
    out = os.path.join(tmp_path, "val")
    assert cli.main(["validate", path, "--out", out]) == cli.EXIT_OK
    report = read_json(out, "validation.json")
    body = report["problems"][0]
    assert {c["id"] for c in body["conditions"]} == {"A1_mu", "A2", "A3"}
    assert body["functional_label"] == "g-evaluation"


def test_reports_bit_identical_with_same_seed(tmp_path):
    doc = json.loads(json.dumps(BS_DOC))
    doc["solver"] = {"engine": "mc", "mc": {"paths": 5000, "steps": 20,
                                            "seed": 31}}
    path = write(tmp_path, doc)
    out1, out2 = os.path.join(tmp_path, "a"), os.path.join(tmp_path, "b")
    assert cli.main(["solve", path, "--out", out1]) == cli.EXIT_OK
    assert cli.main(["solve", path, "--out", out2]) == cli.EXIT_OK
    bytes1 = open(os.path.join(out1, "report.json"), "rb").read()
    bytes2 = open(os.path.join(out2, "report.json"), "rb").read()
    assert bytes1 == bytes2


def test_seed_override_changes_mc_result(tmp_path):
    doc = json.loads(json.dumps(BS_DOC))
    doc["solver"] = {"engine": "mc", "mc": {"paths": 5000, "steps": 20,
                                            "seed": 31}}
    path = write(tmp_path, doc)
    out1, out2 = os.path.join(tmp_path, "a"), os.path.join(tmp_path, "b")
    assert cli.main(["solve", path, "--out", out1, "--seed", "31"]) == cli.EXIT_OK
    assert cli.main(["solve", path, "--out", out2, "--seed", "32"]) == cli.EXIT_OK
    v1 = read_json(out1, "report.json")["g_expectation"]
    v2 = read_json(out2, "report.json")["g_expectation"]
    assert v1 != v2


def test_missing_file_is_input_error(tmp_path):
    assert cli.main(["solve", os.path.join(tmp_path, "absent.json")]) \
        == cli.EXIT_INPUT
