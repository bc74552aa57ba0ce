"""Command-line surface.

Subcommands: solve (one problem, value report + grid CSV), compare (a
problem pair, verdict JSON + empirical CSV), example (packaged scenario),
probe (convexity / monotonicity / sign / dependence), validate (standing
assumptions only).  Machine output is JSON, tables and grids are CSV, and
report figures are PNG; every file is written atomically.

Exit codes: 0 pass, 1 no-verdict, 2 input error, 3 solver failure,
4 conditions certified but the empirical check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import jsonschema

from . import __version__, mc, ordering, pde, plots, scenarios
from .expr import ExprError, parse
from .model import (Box, DiffusionSpec, GeneratorSpec, PayoffSpec, ProblemSpec,
                    default_box, validate_assumptions)
from .util import atomic_write_json, atomic_write_text

EXIT_OK = 0
EXIT_NO_VERDICT = 1
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_EMPIRICAL = 4


class InputError(Exception):
    pass


# ---------------------------------------------------------------------------
# Scenario file schema
# ---------------------------------------------------------------------------

_EXPR_OR_CATALOG = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "expr": {"type": "string"},
        "catalog": {"type": "string"},
        "params": {"type": "object"},
        "growth_exponent": {"type": "number", "minimum": 1},
        "convex": {"type": "boolean"},
        "nondecreasing": {"type": "boolean"},
    },
}

_DIFFUSION = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mu", "sigma", "x0"],
    "properties": {
        "mu": {"type": "string"},
        "sigma": {"type": "string"},
        "x0": {"type": "number"},
        "domain": {"enum": ["whole_line", "positive_halfline"]},
    },
}

_RANGE = {"type": "array", "items": {"type": "number"},
          "minItems": 2, "maxItems": 2}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["diffusion", "generator", "horizon"],
    "properties": {
        "diffusion": _DIFFUSION,
        "diffusion2": _DIFFUSION,
        "generator": _EXPR_OR_CATALOG,
        "generator2": _EXPR_OR_CATALOG,
        "payoff": _EXPR_OR_CATALOG,
        "payoff_family": {
            "anyOf": [
                {"enum": ["conv", "iconv", "mon"]},
                {"type": "array", "items": {
                    "anyOf": [{"type": "string"}, _EXPR_OR_CATALOG]}},
            ]
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "zeta": {"type": "string"},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "engine": {"enum": ["pde", "mc"]},
                "grid": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"L": {"type": "number"},
                                   "nx": {"type": "integer", "minimum": 3},
                                   "nt": {"type": "integer", "minimum": 1}},
                },
                "mc": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"paths": {"type": "integer", "minimum": 2},
                                   "steps": {"type": "integer", "minimum": 1},
                                   "seed": {"type": "integer"},
                                   "basis_degree": {"type": "integer", "minimum": 1},
                                   "antithetic": {"type": "boolean"}},
                },
            },
        },
        "checks": {"type": "array", "items": {"type": "string"}},
        "box": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"t": _RANGE, "x": _RANGE, "y": _RANGE, "z": _RANGE,
                           "sample_count": {"type": "integer", "minimum": 1},
                           "seed": {"type": "integer"}},
        },
    },
}

GENERATOR_CATALOG = {
    # zero generator: classical expectation
    "zero": lambda p: "0",
    # discounting at rate r
    "discount": lambda p: f"-{float(p['r'])!r} * y",
    # linear hedge -ry - z (a - r)/b
    "linear_hedge": lambda p: (f"-{float(p['r'])!r} * y"
                               f" - z * {float(p['theta'])!r}"
                               if "theta" in p else
                               f"-{float(p['r'])!r} * y - z * "
                               f"(({float(p['a'])!r}) - {float(p['r'])!r}) / ({float(p['b'])!r})"),
    # one-sided borrowing penalty
    "borrow": lambda p: (f"-{float(p['r'])!r} * y - z * "
                         f"(({float(p['a'])!r}) - {float(p['r'])!r}) / ({float(p['b'])!r})"
                         f" + {float(p['R']) - float(p['r'])!r} * "
                         f"neg(y - z / ({float(p['b'])!r}))"),
    # risk-seeking kernel alpha |z|
    "abs_z": lambda p: f"{float(p['alpha'])!r} * abs(z)",
}

PAYOFF_CATALOG = {
    "call": lambda p: f"max(x - {float(p['strike'])!r}, 0)",
    "put": lambda p: f"max({float(p['strike'])!r} - x, 0)",
    "identity": lambda p: "x",
    "square": lambda p: "x^2",
    "abs_dev": lambda p: f"abs(x - {float(p['center'])!r})",
    "cap": lambda p: f"min(x, {float(p['strike'])!r})",
}


def _expr_from(doc: dict, catalog: dict, what: str) -> str:
    if "expr" in doc:
        return doc["expr"]
    if "catalog" in doc:
        name = doc["catalog"]
        if name not in catalog:
            raise InputError(f"unknown {what} catalog entry {name!r}")
        try:
            return catalog[name](doc.get("params", {}))
        except KeyError as err:
            raise InputError(f"{what} catalog {name!r} missing parameter {err}")
    raise InputError(f"{what} needs 'expr' or 'catalog'")


def _parse_expr(text: str, what: str):
    try:
        return parse(text)
    except ExprError as err:
        raise InputError(f"bad {what} expression: {err}")


def load_scenario_file(path: str) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as err:
        raise InputError(f"cannot read {path}: {err}")
    except json.JSONDecodeError as err:
        raise InputError(f"{path} is not valid JSON: {err}")
    try:
        jsonschema.validate(doc, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        location = "/".join(str(k) for k in err.absolute_path) or "<root>"
        raise InputError(f"schema error at {location}: {err.message}")
    return doc


def _build_diffusion(doc: dict) -> DiffusionSpec:
    try:
        return DiffusionSpec(mu=_parse_expr(doc["mu"], "mu"),
                             sigma=_parse_expr(doc["sigma"], "sigma"),
                             x0=float(doc["x0"]),
                             state_domain=doc.get("domain", "whole_line"))
    except ValueError as err:
        raise InputError(str(err))


def _build_generator(doc: dict) -> GeneratorSpec:
    text = _expr_from(doc, GENERATOR_CATALOG, "generator")
    try:
        return GeneratorSpec.from_expr(_parse_expr(text, "generator"))
    except ValueError as err:
        raise InputError(str(err))


def _build_payoff(doc) -> PayoffSpec:
    if isinstance(doc, str):
        doc = {"expr": doc}
    text = _expr_from(doc, PAYOFF_CATALOG, "payoff")
    try:
        return PayoffSpec(phi=_parse_expr(text, "payoff"),
                          growth_exponent=float(doc.get("growth_exponent", 2.0)),
                          asserted_convex=bool(doc.get("convex", False)),
                          asserted_nondecreasing=bool(doc.get("nondecreasing", False)))
    except ValueError as err:
        raise InputError(str(err))


def build_problems(doc: dict, seed_override=None):
    """(problem_1, problem_2 or None, config) from a scenario document."""
    horizon = float(doc["horizon"])
    d1 = _build_diffusion(doc["diffusion"])
    g1 = _build_generator(doc["generator"])
    payoff = _build_payoff(doc.get("payoff", {"expr": "x"}))
    try:
        p1 = ProblemSpec(d1, g1, payoff, horizon)
    except ValueError as err:
        raise InputError(str(err))
    p2 = None
    if "diffusion2" in doc or "generator2" in doc:
        if "diffusion2" not in doc:
            raise InputError("generator2 given without diffusion2")
        d2 = _build_diffusion(doc["diffusion2"])
        g2 = _build_generator(doc["generator2"]) if "generator2" in doc else g1
        p2 = ProblemSpec(d2, g2, payoff, horizon)

    solver = doc.get("solver", {})
    grid = solver.get("grid", {})
    mc_doc = solver.get("mc", {})
    seed = seed_override if seed_override is not None else mc_doc.get("seed", 12345)
    config = {
        "engine": solver.get("engine", "pde"),
        "L": float(grid.get("L", 5.0)),
        "nx": int(grid.get("nx", 400)),
        "nt": int(grid.get("nt", 400)),
        "mc": mc.McConfig(n_paths=int(mc_doc.get("paths", 100_000)),
                          n_steps=int(mc_doc.get("steps", 100)),
                          seed=int(seed),
                          basis_degree=int(mc_doc.get("basis_degree", 4)),
                          antithetic=bool(mc_doc.get("antithetic", False))),
        "seed": int(seed),
    }
    return p1, p2, config


def _box_from(doc: dict, problem: ProblemSpec, seed: int) -> Box:
    spec = doc.get("box")
    base = default_box(problem, seed=seed)
    if not spec:
        return base
    kwargs = {}
    for name in ("t", "x", "y", "z"):
        if name in spec:
            kwargs[name] = tuple(spec[name])
        else:
            kwargs[name] = getattr(base, name)
    return Box(sample_count=spec.get("sample_count", base.sample_count),
               seed=spec.get("seed", seed), **kwargs)


def _payoff_family(doc: dict, order: str, x0: float):
    raw = doc.get("payoff_family")
    if raw is None or isinstance(raw, str):
        return ordering.default_payoff_family(raw or order, x0)
    return [_build_payoff(item) for item in raw]


def _echo(doc: dict, config: dict) -> dict:
    return {"file": doc, "engine": config["engine"],
            "grid": {"L": config["L"], "nx": config["nx"], "nt": config["nt"]},
            "mc": config["mc"].__dict__, "seed": config["seed"],
            "version": __version__}


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    doc = load_scenario_file(args.file)
    p1, _, config = build_problems(doc, args.seed)
    engine = args.engine or config["engine"]
    out = args.out or "gorder-out"
    if engine == "pde":
        grid = pde.default_grid(p1, nx=config["nx"], nt=config["nt"], L=config["L"])
        sol = pde.solve(p1, grid)
        value = pde.g_expectation(sol)
        pde.export_csv(sol, os.path.join(_ensure_dir(out), "grid.csv"))
        extra = {"grid": {"x_min": grid.x_min, "x_max": grid.x_max,
                          "nx": grid.nx, "nt": grid.nt,
                          "spacing": grid.spacing, "boundary": grid.boundary}}
    else:
        paths = mc.simulate_forward(p1.diffusion, p1.horizon, config["mc"])
        est = mc.solve_bsde_lsmc(paths, p1.generator, p1.payoff, config["mc"])
        value = est.y0_mean
        extra = {"estimate": est.to_json()}
    label = validate_assumptions(p1).functional_label
    report = {"g_expectation": value, "engine": engine,
              "functional_label": label, "config": _echo(doc, config)}
    report.update(extra)
    atomic_write_json(os.path.join(_ensure_dir(out), "report.json"), report)
    print(json.dumps({"g_expectation": value, "engine": engine}))
    return EXIT_OK


def cmd_compare(args) -> int:
    doc = load_scenario_file(args.file)
    p1, p2, config = build_problems(doc, args.seed)
    if p2 is None:
        raise InputError("compare needs diffusion2 (and generator2)")
    engine = args.engine or config["engine"]
    order = args.order
    zeta = _parse_expr(doc["zeta"], "zeta") if "zeta" in doc else None
    box = _box_from(doc, p1, config["seed"])
    v = ordering.verdict((p1, p2), order, zeta, box)
    out = _ensure_dir(args.out or "gorder-out")

    rows = []
    if v.found:
        family = _payoff_family(doc, order, p2.diffusion.x0)
        rows = ordering.verify_order_empirically(
            (p1, p2), family, engine=engine, order_type=order,
            nx=config["nx"], nt=config["nt"], L=config["L"],
            mc_cfg=config["mc"])
        v.empirical = rows

    payload = v.to_json()
    payload["config"] = _echo(doc, config)
    atomic_write_json(os.path.join(out, "verdict.json"), payload)
    if rows:
        atomic_write_text(os.path.join(out, "empirical.csv"), _csv_text(
            ["payoff", "value_1", "value_2", "difference", "tolerance", "pass"],
            [[r.payoff, repr(r.value_1), repr(r.value_2), repr(r.difference),
              repr(r.tolerance), r.passed] for r in rows]))
        plots.plot_empirical_differences(
            rows, os.path.join(out, "empirical.png"),
            title=f"{order} order via {v.applied_result}")
    if not v.found:
        print(json.dumps({"order_type": "none", "blocking": v.blocking}),
              file=sys.stderr)
        return EXIT_NO_VERDICT
    if any(not r.passed for r in rows):
        print("certified conditions but the empirical inequality failed",
              file=sys.stderr)
        return EXIT_EMPIRICAL
    print(json.dumps({"order_type": v.order_type,
                      "applied_result": v.applied_result}))
    return EXIT_OK


def _parse_params(pairs) -> dict:
    params = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise InputError(f"--params expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        try:
            params[key] = float(value)
        except ValueError:
            params[key] = value
    return params


def cmd_example(args) -> int:
    params = _parse_params(args.params)
    try:
        report, v, curves, scenario = scenarios.run_scenario(
            args.id, params, engine=args.engine or "pde",
            nx=args.nx, nt=args.nt,
            seed=args.seed if args.seed is not None else 12345)
    except scenarios.ParameterViolation as err:
        raise InputError(str(err))
    out = _ensure_dir(args.out or f"gorder-out-{args.id}")
    report["version"] = __version__
    atomic_write_json(os.path.join(out, "report.json"), report)

    for tag, idx in (("problem1", (0, 1)), ("problem2", (2, 3))):
        rows = []
        for label, data in curves.items():
            nodes, values = data[idx[0]], data[idx[1]]
            rows.extend([[label, repr(float(x)), repr(float(u))]
                         for x, u in zip(nodes, values)])
        atomic_write_text(os.path.join(out, f"u0_{tag}.csv"),
                          _csv_text(["payoff_id", "x", "value"], rows))

    if v.empirical:
        atomic_write_text(os.path.join(out, "empirical.csv"), _csv_text(
            ["payoff", "value_1", "value_2", "difference", "tolerance", "pass"],
            [[r.payoff, repr(r.value_1), repr(r.value_2), repr(r.difference),
              repr(r.tolerance), r.passed] for r in v.empirical]))
        plots.plot_empirical_differences(
            v.empirical, os.path.join(out, "differences.png"),
            title=f"{args.id}: {report['verdict']['order_type']} via "
                  f"{report['verdict']['applied_result']}")
    plots.plot_value_curves(curves, scenario.problem_1.diffusion.x0,
                            os.path.join(out, "curves.png"), title=args.id)

    if not v.found:
        print(json.dumps({"order_type": "none", "blocking": v.blocking}),
              file=sys.stderr)
        return EXIT_NO_VERDICT
    if not report["all_rows_pass"]:
        print("certified conditions but the empirical inequality failed",
              file=sys.stderr)
        return EXIT_EMPIRICAL
    print(json.dumps({"scenario": args.id,
                      "applied_result": v.applied_result,
                      "matches_expected": report["matches_expected"]}))
    return EXIT_OK


def cmd_probe(args) -> int:
    doc = load_scenario_file(args.file)
    p1, _, config = build_problems(doc, args.seed)
    out = _ensure_dir(args.out or "gorder-out")
    if args.probe == "dependence":
        sizes = [1.0 / n for n in (2, 4, 8, 16)]
        perturbed = []
        for n in (2, 4, 8, 16):
            factor = 1.0 + 1.0 / n
            d = p1.diffusion
            perturbed.append(ProblemSpec(
                DiffusionSpec(mu=d.mu, sigma=factor * d.sigma, x0=d.x0,
                              state_domain=d.state_domain),
                p1.generator, p1.payoff, p1.horizon))
        table = mc.continuous_dependence_experiment(p1, perturbed, config["mc"],
                                                    sizes=sizes)
        payload = table.to_json()
        payload["config"] = _echo(doc, config)
        atomic_write_json(os.path.join(out, "probe.json"), payload)
        atomic_write_text(os.path.join(out, "dependence.csv"), _csv_text(
            ["index", "size", "mean_diff", "mean_diff_stderr",
             "squared_diff", "squared_diff_stderr"],
            [[r["index"], repr(r["size"]), repr(r["mean_diff"]),
              repr(r["mean_diff_stderr"]), repr(r["squared_diff"]),
              repr(r["squared_diff_stderr"])] for r in table.rows]))
        plots.plot_dependence(table, os.path.join(out, "dependence.png"))
        print(json.dumps({"probe": "dependence",
                          "trend_slope": table.trend_slope}))
        return EXIT_OK

    grid = pde.default_grid(p1, nx=config["nx"], nt=config["nt"], L=config["L"])
    sol = pde.solve(p1, grid)
    if args.probe == "convexity":
        result = pde.convexity_profile(sol).to_json()
        plots.plot_profile(sol, "uxx", os.path.join(out, "probe.png"),
                           title="second spatial difference")
    elif args.probe == "monotonicity":
        result = pde.monotonicity_profile(sol).to_json()
        plots.plot_profile(sol, "ux", os.path.join(out, "probe.png"),
                           title="first spatial difference")
    else:
        result = pde.sign_constancy_profile(sol).to_json()
        plots.plot_profile(sol, "uxx", os.path.join(out, "probe.png"),
                           title="second spatial difference")
    payload = {"probe": args.probe, "result": result,
               "config": _echo(doc, config)}
    atomic_write_json(os.path.join(out, "probe.json"), payload)
    print(json.dumps({"probe": args.probe, "result": result}))
    return EXIT_OK


def cmd_validate(args) -> int:
    doc = load_scenario_file(args.file)
    p1, p2, config = build_problems(doc, args.seed)
    out = _ensure_dir(args.out or "gorder-out")
    wanted = set(doc.get("checks") or [])
    payload = {"config": _echo(doc, config), "problems": []}
    for tag, prob in (("problem_1", p1), ("problem_2", p2)):
        if prob is None:
            continue
        box = _box_from(doc, prob, config["seed"])
        report = validate_assumptions(prob, box)
        body = report.to_json()
        if wanted:
            body["conditions"] = [c for c in body["conditions"]
                                  if c["id"] in wanted]
        body["problem"] = tag
        payload["problems"].append(body)
    atomic_write_json(os.path.join(out, "validation.json"), payload)
    print(json.dumps({"problems": [
        {"problem": b["problem"], "functional_label": b["functional_label"],
         "statuses": {c["id"]: c["status"] for c in b["conditions"]}}
        for b in payload["problems"]]}))
    return EXIT_OK


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gorder",
        description="Nonlinear g-expectation solvers and stochastic-ordering "
                    "certification for one-dimensional diffusions.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_file=True):
        if with_file:
            p.add_argument("file", help="scenario JSON file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the file")
        p.add_argument("--engine", choices=["pde", "mc"], default=None)

    p_solve = sub.add_parser("solve", help="value of one problem")
    common(p_solve)
    p_solve.set_defaults(fn=cmd_solve)

    p_cmp = sub.add_parser("compare", help="ordering verdict for a pair")
    common(p_cmp)
    p_cmp.add_argument("--order", choices=["conv", "iconv", "mon"],
                       default="conv")
    p_cmp.set_defaults(fn=cmd_compare)

    p_ex = sub.add_parser("example", help="run a packaged scenario")
    p_ex.add_argument("id", choices=list(scenarios.SCENARIO_IDS))
    p_ex.add_argument("--params", nargs="*", metavar="KEY=VALUE")
    p_ex.add_argument("--out")
    p_ex.add_argument("--seed", type=int, default=None)
    p_ex.add_argument("--engine", choices=["pde", "mc"], default=None)
    p_ex.add_argument("--nx", type=int, default=400)
    p_ex.add_argument("--nt", type=int, default=400)
    p_ex.set_defaults(fn=cmd_example)

    p_probe = sub.add_parser("probe", help="property probe of one problem")
    common(p_probe)
    p_probe.add_argument("--probe", required=True,
                         choices=["convexity", "monotonicity", "sign",
                                  "dependence"])
    p_probe.set_defaults(fn=cmd_probe)

    p_val = sub.add_parser("validate", help="standing-assumption checks only")
    common(p_val)
    p_val.set_defaults(fn=cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InputError as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ExprError as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except (pde.PdeFailure, mc.McFailure) as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as err:
        print(f"input error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
