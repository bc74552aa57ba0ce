"""Domain types for diffusions, generators and payoffs, the combined
driver f(t,x,y,z) = z*mu + g(t,x,y,z*sigma), generator transforms, and
sampled validation of the standing assumptions (global Lipschitz
coefficients, Lipschitz generator, normalization, payoff growth).

"Certified" always means certified on the sampled box, never a proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.stats import qmc

from .expr import Expr, MissingBinding, NonFinite, parse

__all__ = [
    "CERTIFIED", "VIOLATED", "INCONCLUSIVE",
    "ConditionReport", "Box", "DiffusionSpec", "GeneratorSpec",
    "PayoffSpec", "DriverF", "ProblemSpec", "ValidationReport",
    "ZeroScale", "validate_assumptions", "make_driver",
    "risk_transform", "scale_generator", "default_box", "sobol_points",
]

CERTIFIED = "certified"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"

WHOLE_LINE = "whole_line"
POSITIVE_HALFLINE = "positive_halfline"

DEFAULT_SEED = 12345
NORMALIZATION_TOL = 1e-12

# Lipschitz trend detector: ratio of extreme-quartile to central-quartile
# slope below/above which a sampled slope field counts as flat/diverging.
_TREND_CERTIFY = 1.5
_TREND_VIOLATE = 2.5
_REFINEMENT_GROWTH = 1.25


class ZeroScale(ValueError):
    """Generator scaling with a = 0 is undefined."""


@dataclass
class ConditionReport:
    """Outcome of one sampled hypothesis check."""

    id: str
    status: str
    witness: Optional[dict] = None
    samples: int = 0
    max_violation: float = 0.0
    fitted: Optional[float] = None
    note: str = ""

    def to_json(self) -> dict:
        out = {"id": self.id, "status": self.status, "samples": self.samples,
               "max_violation": self.max_violation}
        if self.witness is not None:
            out["witness"] = self.witness
        if self.fitted is not None:
            out["fitted"] = self.fitted
        if self.note:
            out["note"] = self.note
        return out


@dataclass(frozen=True)
class Box:
    """Sampling region for condition checks, one range per variable."""

    t: tuple = (0.0, 1.0)
    x: tuple = (0.0, 1.0)
    y: tuple = (-1.0, 1.0)
    z: tuple = (-1.0, 1.0)
    sample_count: int = 512
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        for name in ("t", "x", "y", "z"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise ValueError(f"empty range for {name}: {lo}..{hi}")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")

    def range_of(self, name: str) -> tuple:
        return getattr(self, name)

    def to_json(self) -> dict:
        return {"t": list(self.t), "x": list(self.x), "y": list(self.y),
                "z": list(self.z), "sample_count": self.sample_count,
                "seed": self.seed}


@dataclass(frozen=True)
class DiffusionSpec:
    """Forward diffusion dX = mu(t,X) dt + sigma(t,X) dB, X_0 = x0."""

    mu: Expr
    sigma: Expr
    x0: float
    state_domain: str = WHOLE_LINE

    def __post_init__(self):
        if self.state_domain not in (WHOLE_LINE, POSITIVE_HALFLINE):
            raise ValueError(f"unknown state domain {self.state_domain!r}")
        if self.state_domain == POSITIVE_HALFLINE and not self.x0 > 0:
            raise ValueError("positive_halfline requires x0 > 0")
        for name, e in (("mu", self.mu), ("sigma", self.sigma)):
            extra = e.free_vars - {"t", "x"}
            if extra:
                raise ValueError(f"{name} may only depend on (t, x), got {sorted(extra)}")


@dataclass(frozen=True)
class GeneratorSpec:
    """Backward-equation drift g(t,x,y,z).

    `normalized` asserts g(t,x,0,0) = 0 (the functional preserves nothing
    but is a genuine nonlinear evaluation); `strongly_normalized` asserts
    g(t,x,y,0) = 0, under which constants are preserved.
    """

    g: Expr
    normalized: bool = False
    strongly_normalized: bool = False
    lipschitz_bound: Optional[float] = None

    def __post_init__(self):
        extra = self.g.free_vars - {"t", "x", "y", "z"}
        if extra:
            raise ValueError(f"generator may only depend on (t,x,y,z), got {sorted(extra)}")

    @classmethod
    def from_expr(cls, g: Expr, box: Optional[Box] = None,
                  lipschitz_bound: Optional[float] = None) -> "GeneratorSpec":
        """Build a spec with normalization flags detected by sampling."""
        box = box or Box(x=(0.5, 200.0), y=(-100.0, 100.0), z=(-100.0, 100.0))
        normalized = _max_abs_at(g, box, y=0.0, z=0.0) <= NORMALIZATION_TOL
        strongly = _max_abs_at(g, box, z=0.0) <= NORMALIZATION_TOL
        return cls(g=g, normalized=normalized, strongly_normalized=strongly,
                   lipschitz_bound=lipschitz_bound)


@dataclass(frozen=True)
class PayoffSpec:
    """Terminal payoff phi(x) with polynomial growth exponent p >= 1."""

    phi: Expr
    growth_exponent: float = 2.0
    asserted_convex: bool = False
    asserted_nondecreasing: bool = False

    def __post_init__(self):
        extra = self.phi.free_vars - {"x"}
        if extra:
            raise ValueError(f"payoff may only depend on x, got {sorted(extra)}")
        if self.growth_exponent < 1:
            raise ValueError("growth exponent must be >= 1")


@dataclass(frozen=True)
class DriverF:
    """Combined driver f(t,x,y,z) = z*mu(t,x) + g(t,x,y,z*sigma(t,x))."""

    diffusion: DiffusionSpec
    generator: GeneratorSpec

    def eval(self, t, x, y, z):
        mu = self.diffusion.mu.eval({"t": t, "x": x})
        sigma = self.diffusion.sigma.eval({"t": t, "x": x})
        g = self.generator.g.eval({"t": t, "x": x, "y": y, "z": np.multiply(z, sigma)})
        return np.multiply(z, mu) + g

    def __call__(self, t, x, y, z):
        return self.eval(t, x, y, z)


@dataclass(frozen=True)
class ProblemSpec:
    """One complete pricing problem: diffusion, generator, payoff, horizon."""

    diffusion: DiffusionSpec
    generator: GeneratorSpec
    payoff: PayoffSpec
    horizon: float

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")


@dataclass
class ValidationReport:
    """Per-assumption statuses from validate_assumptions."""

    conditions: list
    functional_label: str

    def status(self, cid: str) -> str:
        for c in self.conditions:
            if c.id == cid:
                return c.status
        raise KeyError(cid)

    def report(self, cid: str) -> ConditionReport:
        for c in self.conditions:
            if c.id == cid:
                return c
        raise KeyError(cid)

    @property
    def all_certified(self) -> bool:
        return all(c.status == CERTIFIED for c in self.conditions)

    def to_json(self) -> dict:
        return {"functional_label": self.functional_label,
                "conditions": [c.to_json() for c in self.conditions]}


# ---------------------------------------------------------------------------
# Sampling helpers
# ---------------------------------------------------------------------------

def broadcast_values(values, shape) -> np.ndarray:
    """Evaluate-result normalizer: constants broadcast to the sample shape."""
    return np.broadcast_to(np.asarray(values, dtype=float), shape)


def sobol_points(dim: int, n: int, seed: int) -> np.ndarray:
    """First n points of a scrambled Sobol stream in [0,1)^dim.

    A longer draw from the same seed extends this one, so refining
    sample_count keeps earlier points (nested refinement).
    """
    sampler = qmc.Sobol(d=dim, scramble=True, seed=seed)
    n2 = 1 << max(0, (n - 1)).bit_length()
    return sampler.random(max(n2, 1))[:n]


def _scale(u: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return lo + (hi - lo) * u


def _max_abs_at(g: Expr, box: Box, **fixed) -> float:
    free = [v for v in ("t", "x", "y", "z") if v not in fixed]
    n = max(box.sample_count, 64)
    pts = sobol_points(max(len(free), 1), n, box.seed)
    bindings = dict(fixed)
    for i, v in enumerate(free):
        lo, hi = box.range_of(v)
        bindings[v] = _scale(pts[:, i], lo, hi)
    values = broadcast_values(g.eval(bindings), (n,))
    return float(np.max(np.abs(values)))


def default_box(problem: ProblemSpec, x_range: Optional[tuple] = None,
                sample_count: int = 512, seed: int = DEFAULT_SEED) -> Box:
    """Default sampling box: t in [0,T], x spanning the solver grid,
    y and z in [-M, M] with M = 10*(1 + |x0|^p)."""
    if x_range is None:
        from .pde import default_grid  # local import to avoid a cycle
        grid = default_grid(problem)
        x_range = (grid.x_min, grid.x_max)
    p = problem.payoff.growth_exponent
    m = 10.0 * (1.0 + abs(problem.diffusion.x0) ** p)
    return Box(t=(0.0, problem.horizon), x=x_range, y=(-m, m), z=(-m, m),
               sample_count=sample_count, seed=seed)


# ---------------------------------------------------------------------------
# Generator transforms
# ---------------------------------------------------------------------------

def make_driver(d: DiffusionSpec, g: GeneratorSpec) -> DriverF:
    """Driver f(t,x,y,z) = z*mu + g(t,x,y,z*sigma)."""
    return DriverF(diffusion=d, generator=g)


def risk_transform(g: GeneratorSpec) -> GeneratorSpec:
    """Reflected generator -g(t,x,-y,-z); applying it twice is the identity."""
    y, z = parse("y"), parse("z")
    reflected = g.g.substitute("y", -y).substitute("z", -z)
    return GeneratorSpec.from_expr(-reflected, lipschitz_bound=g.lipschitz_bound)


def scale_generator(g: GeneratorSpec, a: float) -> GeneratorSpec:
    """Scaled generator a*g(t,x,y/a,z/a); a must be nonzero."""
    if a == 0:
        raise ZeroScale("scale factor must be nonzero")
    y, z = parse("y"), parse("z")
    inner = g.g.substitute("y", y / a).substitute("z", z / a)
    bound = None if g.lipschitz_bound is None else g.lipschitz_bound
    return GeneratorSpec.from_expr(a * inner, lipschitz_bound=bound)


# ---------------------------------------------------------------------------
# Assumption validation
# ---------------------------------------------------------------------------

def _directional_slopes(fn, box: Box, vary: str, others: list, n: int, seed: int):
    """Difference quotients of fn along `vary`, other coordinates sampled.

    Returns (quotients, normalized coordinate magnitudes, point dicts).
    Separations span several length scales so kinks and steep spots show up.
    """
    dims = [vary] + others
    pts = sobol_points(len(dims) + 1, n, seed)
    lo, hi = box.range_of(vary)
    width = hi - lo if hi > lo else 1.0
    center = 0.5 * (lo + hi)
    base = _scale(pts[:, 0], lo, hi)
    # log-uniform separations from 1e-4 to 1e-1 of the box width
    delta = width * 10.0 ** (-4.0 + 3.0 * pts[:, -1])
    partner = np.where(base + delta <= hi, base + delta, base - delta)
    bindings_a = {vary: base}
    bindings_b = {vary: partner}
    for i, v in enumerate(others):
        vlo, vhi = box.range_of(v)
        coord = _scale(pts[:, 1 + i], vlo, vhi)
        bindings_a[v] = coord
        bindings_b[v] = coord
    fa = broadcast_values(fn(bindings_a), base.shape)
    fb = broadcast_values(fn(bindings_b), base.shape)
    quotients = np.abs(fb - fa) / np.abs(partner - base)
    mid = 0.5 * (base + partner)
    magnitude = np.abs(mid - center) / (0.5 * width if width > 0 else 1.0)
    points = {"a": bindings_a, "b": bindings_b}
    return quotients, magnitude, points


def _trend_status(quotients: np.ndarray, magnitude: np.ndarray):
    """Classify a sampled slope field as flat, diverging, or unclear.

    Compares the extreme quartile (by coordinate magnitude) against the
    central quartile, and checks stability under nested refinement.
    """
    n = len(quotients)
    order = np.argsort(magnitude)
    quarter = max(n // 4, 1)
    low = float(np.max(quotients[order[:quarter]]))
    high = float(np.max(quotients[order[-quarter:]]))
    fitted = float(np.max(quotients))
    ratio = high / max(low, 1e-12) if fitted > 1e-12 else 1.0
    # nested refinement: maxima over growing prefixes of the stream
    stages = [float(np.max(quotients[: max(n // 4, 1)])),
              float(np.max(quotients[: max(n // 2, 1)])),
              fitted]
    growing = (stages[2] > _REFINEMENT_GROWTH * stages[1] > _REFINEMENT_GROWTH ** 2 * stages[0]
               and stages[0] > 1e-12)
    if ratio >= _TREND_VIOLATE:
        return VIOLATED, fitted, ratio, int(np.argmax(quotients))
    if ratio <= _TREND_CERTIFY and not growing:
        return CERTIFIED, fitted, ratio, int(np.argmax(quotients))
    return INCONCLUSIVE, fitted, ratio, int(np.argmax(quotients))


def _witness_from(points, index, vary) -> dict:
    witness = {}
    for side in ("a", "b"):
        witness[side] = {k: float(np.asarray(v)[index]) if np.ndim(v) else float(v)
                         for k, v in points[side].items()}
    witness["varied"] = vary
    return witness


def _check_lipschitz(cid: str, fn, box: Box, dims: list, others_of: dict,
                     n: int, seed: int) -> ConditionReport:
    """Per-dimension directional Lipschitz check; the fitted constant is the
    largest sampled difference quotient over all varied dimensions."""
    worst = CERTIFIED
    fitted = 0.0
    witness = None
    max_ratio = 0.0
    rank = {CERTIFIED: 0, INCONCLUSIVE: 1, VIOLATED: 2}
    for k, vary in enumerate(dims):
        quotients, magnitude, points = _directional_slopes(
            fn, box, vary, others_of[vary], n, seed + 7 * k)
        status, dim_fit, ratio, idx = _trend_status(quotients, magnitude)
        fitted = max(fitted, dim_fit)
        max_ratio = max(max_ratio, ratio)
        if rank[status] > rank[worst]:
            worst = status
            if status == VIOLATED:
                witness = _witness_from(points, idx, vary)
    return ConditionReport(id=cid, status=worst, witness=witness,
                           samples=n * len(dims), max_violation=max_ratio,
                           fitted=fitted)


def recheck_lipschitz_witness(fn, witness: dict) -> float:
    """Deterministically re-evaluate a Lipschitz witness pair's quotient."""
    a, b = witness["a"], witness["b"]
    vary = witness["varied"]
    fa = float(fn({k: v for k, v in a.items()}))
    fb = float(fn({k: v for k, v in b.items()}))
    return abs(fb - fa) / abs(b[vary] - a[vary])


def _check_pointwise_zero(cid: str, g: Expr, box: Box, n: int, seed: int,
                          fixed: dict, free: list) -> ConditionReport:
    pts = sobol_points(len(free), n, seed)
    bindings = dict(fixed)
    for i, v in enumerate(free):
        lo, hi = box.range_of(v)
        bindings[v] = _scale(pts[:, i], lo, hi)
    values = np.abs(broadcast_values(g.eval(bindings), (n,)))
    worst = int(np.argmax(values))
    magnitude = float(values[worst])
    if magnitude <= NORMALIZATION_TOL:
        return ConditionReport(id=cid, status=CERTIFIED, samples=n,
                               max_violation=magnitude)
    witness = {v: float(np.asarray(bindings[v])[worst]) if np.ndim(bindings[v])
               else float(bindings[v]) for v in bindings}
    return ConditionReport(id=cid, status=VIOLATED, witness=witness,
                           samples=n, max_violation=magnitude)


def _check_sigma_positive(d: DiffusionSpec, box: Box, n: int, seed: int) -> ConditionReport:
    pts = sobol_points(2, n, seed)
    t = _scale(pts[:, 0], *box.t)
    x = _scale(pts[:, 1], *box.x)
    values = broadcast_values(d.sigma.eval({"t": t, "x": x}), t.shape)
    worst = int(np.argmin(values))
    if values[worst] > 0:
        return ConditionReport(id="sigma_positive", status=CERTIFIED, samples=n,
                               fitted=float(values[worst]))
    return ConditionReport(id="sigma_positive", status=VIOLATED,
                           witness={"t": float(t[worst]), "x": float(x[worst]),
                                    "sigma": float(values[worst])},
                           samples=n, max_violation=float(-values[worst]))


def _check_growth(p_spec: PayoffSpec, box: Box, n: int, seed: int) -> ConditionReport:
    """Fit C in |phi(x)| <= C(1 + |x|^p) over the box; certified-on-box."""
    pts = sobol_points(1, n, seed)
    x = _scale(pts[:, 0], *box.x)
    try:
        values = np.abs(broadcast_values(p_spec.phi.eval({"x": x}), x.shape))
    except NonFinite as err:
        return ConditionReport(id="A4", status=VIOLATED, samples=n,
                               note=f"payoff evaluation failed: {err}")
    c = values / (1.0 + np.abs(x) ** p_spec.growth_exponent)
    return ConditionReport(id="A4", status=CERTIFIED, samples=n,
                           fitted=float(np.max(c)))


def check_convex_1d(phi: Expr, x_range: tuple, n: int = 512,
                    seed: int = DEFAULT_SEED, tol_scale: float = 1e-9) -> ConditionReport:
    """Sampled midpoint-convexity of a one-variable function."""
    pts = sobol_points(2, n, seed)
    a = _scale(pts[:, 0], *x_range)
    b = _scale(pts[:, 1], *x_range)
    fa = broadcast_values(phi.eval({"x": a}), a.shape)
    fb = broadcast_values(phi.eval({"x": b}), a.shape)
    fm = broadcast_values(phi.eval({"x": 0.5 * (a + b)}), a.shape)
    tol = tol_scale * (1.0 + np.abs(fa) + np.abs(fb))
    gap = fm - 0.5 * (fa + fb) - tol
    worst = int(np.argmax(gap))
    if gap[worst] <= 0:
        return ConditionReport(id="convex_1d", status=CERTIFIED, samples=n)
    return ConditionReport(id="convex_1d", status=VIOLATED, samples=n,
                           witness={"a": float(a[worst]), "b": float(b[worst])},
                           max_violation=float(gap[worst]))


def check_nondecreasing_1d(phi: Expr, x_range: tuple, n: int = 512,
                           seed: int = DEFAULT_SEED, tol_scale: float = 1e-9) -> ConditionReport:
    """Sampled monotonicity of a one-variable function."""
    pts = sobol_points(2, n, seed)
    a = _scale(pts[:, 0], *x_range)
    b = _scale(pts[:, 1], *x_range)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    flo = broadcast_values(phi.eval({"x": lo}), lo.shape)
    fhi = broadcast_values(phi.eval({"x": hi}), lo.shape)
    tol = tol_scale * (1.0 + np.abs(flo) + np.abs(fhi))
    gap = flo - fhi - tol
    worst = int(np.argmax(gap))
    if gap[worst] <= 0:
        return ConditionReport(id="nondecreasing_1d", status=CERTIFIED, samples=n)
    return ConditionReport(id="nondecreasing_1d", status=VIOLATED, samples=n,
                           witness={"a": float(lo[worst]), "b": float(hi[worst])},
                           max_violation=float(gap[worst]))


def validate_assumptions(p: ProblemSpec, box: Optional[Box] = None) -> ValidationReport:
    """Sampled validation of the standing assumptions on one problem.

    Checks, on the box: Lipschitz drift and volatility in x (A1), jointly
    Lipschitz generator in (x,y,z) (A2), normalization g(t,x,0,0)=0 (A3)
    and strong normalization g(t,x,y,0)=0 (A3'), payoff growth with fitted
    constant (A4), and positivity of sigma.
    """
    box = box or default_box(p)
    n = box.sample_count
    seed = box.seed
    conditions = []

    mu_fn = lambda b: p.diffusion.mu.eval({"t": b["t"], "x": b["x"]})
    sigma_fn = lambda b: p.diffusion.sigma.eval({"t": b["t"], "x": b["x"]})
    conditions.append(_check_lipschitz("A1_mu", mu_fn, box, ["x"], {"x": ["t"]}, n, seed))
    conditions.append(_check_lipschitz("A1_sigma", sigma_fn, box, ["x"], {"x": ["t"]},
                                       n, seed + 101))

    g_fn = lambda b: p.generator.g.eval(b)
    others = {"x": ["t", "y", "z"], "y": ["t", "x", "z"], "z": ["t", "x", "y"]}
    conditions.append(_check_lipschitz("A2", g_fn, box, ["x", "y", "z"], others,
                                       n, seed + 202))

    conditions.append(_check_pointwise_zero("A3", p.generator.g, box, n, seed + 303,
                                            fixed={"y": 0.0, "z": 0.0},
                                            free=["t", "x"]))
    conditions.append(_check_pointwise_zero("A3'", p.generator.g, box, n, seed + 404,
                                            fixed={"z": 0.0}, free=["t", "x", "y"]))
    conditions.append(_check_growth(p.payoff, box, n, seed + 505))
    conditions.append(_check_sigma_positive(p.diffusion, box, n, seed + 606))

    if p.payoff.asserted_convex:
        conditions.append(ConditionReport(
            id="payoff_convex",
            status=check_convex_1d(p.payoff.phi, box.x, n, seed + 707).status,
            samples=n))
    if p.payoff.asserted_nondecreasing:
        conditions.append(ConditionReport(
            id="payoff_nondecreasing",
            status=check_nondecreasing_1d(p.payoff.phi, box.x, n, seed + 808).status,
            samples=n))

    by_id = {c.id: c.status for c in conditions}
    if by_id["A3'"] == CERTIFIED:
        label = "g-expectation"
    elif by_id["A3"] == CERTIFIED:
        label = "g-evaluation"
    else:
        # solvable backward equation, but outside the named functionals
        label = "raw BSDE value"
    return ValidationReport(conditions=conditions, functional_label=label)
