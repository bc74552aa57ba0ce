"""Sampled certification of the ordering hypotheses and the theorem
decision table mapping certified condition sets to a stochastic-order
verdict, plus the empirical verification of the predicted inequality
with either solver engine.

Checks sample a box and certify on it; a "certified" status is evidence,
never a proof.  Convexity uses midpoint tests (robust to the |z| and
negative-part kinks of the finance generators) on random multi-scale
pairs plus structured probes straddling coordinate zeros, where those
kinks live.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .expr import Expr, parse
from .model import (CERTIFIED, INCONCLUSIVE, VIOLATED, Box, ConditionReport,
                    DiffusionSpec, DriverF, GeneratorSpec, PayoffSpec,
                    ProblemSpec, broadcast_values, check_convex_1d,
                    check_nondecreasing_1d, default_box, make_driver,
                    risk_transform, sobol_points)
from .util import parallel_map

__all__ = [
    "OrderingVerdict", "EmpiricalRow", "check_convexity_2d", "check_dominance",
    "check_monotone_in", "check_coefficient_order", "verdict",
    "verify_order_empirically", "risk_compare", "default_payoff_family",
    "reflect_problem", "concave_order_verdict", "pde_value", "mc_value",
    "PDE_EMPIRICAL_TOL",
]

CONVEXITY_TOL = 1e-9       # scaled by 1 + |f(P)| + |f(Q)|
DOMINANCE_TOL = 1e-9
EQUALITY_TOL = 1e-12       # scaled by value magnitude
PDE_EMPIRICAL_TOL = 1e-3   # scaled by 1 + |value_2|

_PLANES = {("x", "y"), ("y", "z")}


@dataclass
class EmpiricalRow:
    payoff: str
    value_1: float
    value_2: float
    difference: float
    tolerance: float
    passed: bool

    def to_json(self) -> dict:
        return {"payoff": self.payoff, "value_1": self.value_1,
                "value_2": self.value_2, "difference": self.difference,
                "tolerance": self.tolerance, "pass": self.passed}


@dataclass
class OrderingVerdict:
    order_type: str                  # conv | iconv | mon | conc | iconc | none
    applied_result: Optional[str]    # pp3 | pp1 | pp6 | pp4 | pp2 | pp5 | pp4.1 | pp7 | pp9 | pp10
    conditions: list
    zeta: Optional[str] = None
    empirical: Optional[list] = None
    blocking: Optional[dict] = None  # theorem id -> failed condition ids

    @property
    def found(self) -> bool:
        return self.applied_result is not None

    def condition(self, cid: str) -> ConditionReport:
        for c in self.conditions:
            if c.id == cid:
                return c
        raise KeyError(cid)

    def to_json(self) -> dict:
        out = {"order_type": self.order_type,
               "applied_result": self.applied_result,
               "conditions": [c.to_json() for c in self.conditions]}
        if self.zeta is not None:
            out["zeta"] = self.zeta
        if self.empirical is not None:
            out["empirical"] = [r.to_json() for r in self.empirical]
        if self.blocking:
            out["blocking"] = self.blocking
        return out


def _as_fn(fn):
    """Normalize DriverF / Expr / callable to a callable of (t, x, y, z)."""
    if isinstance(fn, DriverF):
        return fn.eval
    if isinstance(fn, Expr):
        return lambda t, x, y, z: fn.eval({"t": t, "x": x, "y": y, "z": z})
    return fn


def _scale(u, lo, hi):
    return lo + (hi - lo) * u


def _frozen_grids(frozen_spec, box: Box, names, counts):
    """Grids for the out-of-plane variables: fixed value or a coarse sweep."""
    grids = []
    frozen_spec = frozen_spec or {}
    for name, count in zip(names, counts):
        value = frozen_spec.get(name)
        if value is None:
            lo, hi = box.range_of(name)
            grids.append(np.linspace(lo, hi, count) if hi > lo else np.array([lo]))
        else:
            grids.append(np.array([float(value)]))
    return grids


def check_convexity_2d(fn, plane: tuple, frozen=None, box: Optional[Box] = None,
                       cid: str = "convexity") -> ConditionReport:
    """Midpoint convexity of (u,v) -> fn at sampled pairs in the plane.

    Pairs mix uniform draws with multi-scale symmetric pairs about sampled
    centers, plus deterministic probes straddling u=0 / v=0 at geometric
    separations (generator kinks sit on the coordinate axes).  The out-of-
    plane variables sweep a coarse grid unless pinned via `frozen`.
    """
    if tuple(plane) not in _PLANES:
        raise ValueError(f"plane must be (x,y) or (y,z), got {plane}")
    box = box or Box()
    f = _as_fn(fn)
    u_name, v_name = plane
    other = [n for n in ("t", "x", "y", "z") if n not in plane]
    n = box.sample_count

    u_lo, u_hi = box.range_of(u_name)
    v_lo, v_hi = box.range_of(v_name)
    pts = sobol_points(8, n, box.seed)
    # uniform pairs
    pu1, pv1 = _scale(pts[:, 0], u_lo, u_hi), _scale(pts[:, 1], v_lo, v_hi)
    qu1, qv1 = _scale(pts[:, 2], u_lo, u_hi), _scale(pts[:, 3], v_lo, v_hi)
    # multi-scale symmetric pairs about sampled centers
    cu = _scale(pts[:, 4], u_lo, u_hi)
    cv = _scale(pts[:, 5], v_lo, v_hi)
    radius = 10.0 ** (-4.0 + 3.7 * pts[:, 6])
    angle = 2.0 * math.pi * pts[:, 7]
    hu = radius * np.cos(angle) * (u_hi - u_lo) * 0.5
    hv = radius * np.sin(angle) * (v_hi - v_lo) * 0.5
    pu2 = np.clip(cu - hu, u_lo, u_hi)
    qu2 = np.clip(cu + hu, u_lo, u_hi)
    pv2 = np.clip(cv - hv, v_lo, v_hi)
    qv2 = np.clip(cv + hv, v_lo, v_hi)

    pu = np.concatenate([pu1, pu2])
    pv = np.concatenate([pv1, pv2])
    qu = np.concatenate([qu1, qu2])
    qv = np.concatenate([qv1, qv2])

    # structured probes across each in-plane coordinate zero
    for name, (lo, hi) in ((u_name, (u_lo, u_hi)), (v_name, (v_lo, v_hi))):
        if not (lo < 0.0 < hi):
            continue
        span = min(-lo, hi)
        deltas = span * 10.0 ** np.arange(-6.0, 0.5, 1.0)
        o_lo, o_hi = (v_lo, v_hi) if name == u_name else (u_lo, u_hi)
        partners = np.linspace(o_lo, o_hi, 13)
        dd, ww = np.meshgrid(deltas, partners)
        dd, ww = dd.ravel(), ww.ravel()
        if name == u_name:
            pu = np.concatenate([pu, -dd])
            qu = np.concatenate([qu, dd])
            pv = np.concatenate([pv, ww])
            qv = np.concatenate([qv, ww])
        else:
            pv = np.concatenate([pv, -dd])
            qv = np.concatenate([qv, dd])
            pu = np.concatenate([pu, ww])
            qu = np.concatenate([qu, ww])

    mu_ = 0.5 * (pu + qu)
    mv_ = 0.5 * (pv + qv)
    grids = _frozen_grids(frozen, box, other, (5, 7))

    worst_gap = -np.inf
    worst = None
    total = 0
    for g0 in grids[0]:
        for g1 in grids[1]:
            frozen_vals = {other[0]: g0, other[1]: g1}
            def at(uu, vv):
                args = {u_name: uu, v_name: vv}
                args.update(frozen_vals)
                return broadcast_values(f(args["t"], args["x"], args["y"],
                                          args["z"]), uu.shape)
            fp = at(pu, pv)
            fq = at(qu, qv)
            fm = at(mu_, mv_)
            tol = CONVEXITY_TOL * (1.0 + np.abs(fp) + np.abs(fq))
            gap = fm - 0.5 * (fp + fq) - tol
            total += gap.size
            i = int(np.argmax(gap))
            if gap[i] > worst_gap:
                worst_gap = float(gap[i])
                worst = {"P": {u_name: float(pu[i]), v_name: float(pv[i]), **{k: float(v) for k, v in frozen_vals.items()}},
                         "Q": {u_name: float(qu[i]), v_name: float(qv[i]), **{k: float(v) for k, v in frozen_vals.items()}},
                         "gap": float(gap[i] )}
    if worst_gap <= 0:
        return ConditionReport(id=cid, status=CERTIFIED, samples=total)
    return ConditionReport(id=cid, status=VIOLATED, witness=worst,
                           samples=total, max_violation=worst_gap)


def _sample_points(box: Box, n: int, z_restriction: str, seed_shift: int = 0):
    pts = sobol_points(4, n, box.seed + seed_shift)
    t = _scale(pts[:, 0], *box.t)
    x = _scale(pts[:, 1], *box.x)
    y = _scale(pts[:, 2], *box.y)
    z_lo, z_hi = box.z
    if z_restriction == "nonneg_z":
        z_lo = max(z_lo, 0.0)
        z_hi = max(z_hi, z_lo)
    z = _scale(pts[:, 3], z_lo, z_hi)
    return t, x, y, z


def check_dominance(f1, f2, box: Optional[Box] = None,
                    z_restriction: str = "all_z",
                    zeta: Optional[Expr] = None,
                    cid: str = "dominance") -> ConditionReport:
    """Pointwise f1 <= f2 (or the sandwich f1 <= z*zeta <= f2) on samples."""
    box = box or Box()
    g1, g2 = _as_fn(f1), _as_fn(f2)
    t, x, y, z = _sample_points(box, box.sample_count, z_restriction)
    a = broadcast_values(g1(t, x, y, z), t.shape)
    b = broadcast_values(g2(t, x, y, z), t.shape)
    if zeta is not None:
        mid = z * broadcast_values(zeta.eval({"t": t, "x": x}), t.shape)
        tol = DOMINANCE_TOL * (1.0 + np.abs(a) + np.abs(b) + np.abs(mid))
        gap = np.maximum(a - mid, mid - b) - tol
    else:
        tol = DOMINANCE_TOL * (1.0 + np.abs(a) + np.abs(b))
        gap = a - b - tol
    i = int(np.argmax(gap))
    if gap[i] <= 0:
        return ConditionReport(id=cid, status=CERTIFIED, samples=len(gap))
    witness = {"t": float(t[i]), "x": float(x[i]), "y": float(y[i]),
               "z": float(z[i]), "f1": float(a[i]), "f2": float(b[i])}
    if zeta is not None:
        witness["z_zeta"] = float(z[i] * zeta.eval({"t": t[i], "x": x[i]}))
    return ConditionReport(id=cid, status=VIOLATED, witness=witness,
                           samples=len(gap), max_violation=float(gap[i]))


def check_monotone_in(fn, var: str, box: Optional[Box] = None,
                      cid: str = "monotone") -> ConditionReport:
    """No strict decrease of fn along `var` on sampled ordered pairs."""
    if var not in ("x", "z"):
        raise ValueError("var must be x or z")
    box = box or Box()
    f = _as_fn(fn)
    n = box.sample_count
    pts = sobol_points(5, n, box.seed + 31)
    coords = {}
    names = ["t", "x", "y", "z"]
    for i, name in enumerate(names):
        coords[name] = _scale(pts[:, i], *box.range_of(name))
    lo = np.minimum(coords[var], _scale(pts[:, 4], *box.range_of(var)))
    hi = np.maximum(coords[var], _scale(pts[:, 4], *box.range_of(var)))
    a_args = dict(coords)
    a_args[var] = lo
    b_args = dict(coords)
    b_args[var] = hi
    fa = broadcast_values(f(a_args["t"], a_args["x"], a_args["y"], a_args["z"]),
                          lo.shape)
    fb = broadcast_values(f(b_args["t"], b_args["x"], b_args["y"], b_args["z"]),
                          lo.shape)
    tol = DOMINANCE_TOL * (1.0 + np.abs(fa) + np.abs(fb))
    gap = fa - fb - tol
    i = int(np.argmax(gap))
    if gap[i] <= 0:
        return ConditionReport(id=cid, status=CERTIFIED, samples=n)
    witness = {k: float(v[i]) for k, v in coords.items() if k != var}
    witness[f"{var}_lo"] = float(lo[i])
    witness[f"{var}_hi"] = float(hi[i])
    return ConditionReport(id=cid, status=VIOLATED, witness=witness,
                           samples=n, max_violation=float(gap[i]))


def check_coefficient_order(d1: DiffusionSpec, d2: DiffusionSpec,
                            box: Optional[Box] = None) -> list:
    """Coefficient comparisons: sigma order/equality/positivity, drift
    order/equality, initial-state order/equality."""
    box = box or Box()
    n = box.sample_count
    pts = sobol_points(2, n, box.seed + 47)
    t = _scale(pts[:, 0], *box.t)
    x = _scale(pts[:, 1], *box.x)

    def values(expr):
        return np.broadcast_to(np.asarray(expr.eval({"t": t, "x": x}),
                                          dtype=float), t.shape)

    s1, s2 = values(d1.sigma), values(d2.sigma)
    m1, m2 = values(d1.mu), values(d2.mu)
    reports = []

    smin = float(np.min(np.minimum(s1, s2)))
    i = int(np.argmin(np.minimum(s1, s2)))
    if smin > 0:
        reports.append(ConditionReport(id="sigma_positive", status=CERTIFIED,
                                       samples=n, fitted=smin))
    else:
        reports.append(ConditionReport(id="sigma_positive", status=VIOLATED,
                                       samples=n, max_violation=-smin,
                                       witness={"t": float(t[i]), "x": float(x[i])}))

    def order_report(cid, a, b):
        scale = 1.0 + np.abs(a) + np.abs(b)
        gap = a - b - DOMINANCE_TOL * scale
        j = int(np.argmax(gap))
        if gap[j] <= 0:
            return ConditionReport(id=cid, status=CERTIFIED, samples=n)
        return ConditionReport(id=cid, status=VIOLATED, samples=n,
                               max_violation=float(gap[j]),
                               witness={"t": float(t[j]), "x": float(x[j]),
                                        "lhs": float(a[j]), "rhs": float(b[j])})

    def equal_report(cid, a, b):
        scale = 1.0 + np.abs(a) + np.abs(b)
        gap = np.abs(a - b) - EQUALITY_TOL * scale
        j = int(np.argmax(gap))
        if gap[j] <= 0:
            return ConditionReport(id=cid, status=CERTIFIED, samples=n)
        return ConditionReport(id=cid, status=VIOLATED, samples=n,
                               max_violation=float(gap[j]),
                               witness={"t": float(t[j]), "x": float(x[j]),
                                        "lhs": float(a[j]), "rhs": float(b[j])})

    reports.append(order_report("sigma_order", s1, s2))
    reports.append(equal_report("sigma_equal", s1, s2))
    reports.append(order_report("drift_order", m1, m2))
    reports.append(equal_report("drift_equal", m1, m2))

    x_scale = 1.0 + abs(d1.x0) + abs(d2.x0)
    if d1.x0 <= d2.x0 + DOMINANCE_TOL * x_scale:
        reports.append(ConditionReport(id="x0_order", status=CERTIFIED, samples=1))
    else:
        reports.append(ConditionReport(id="x0_order", status=VIOLATED, samples=1,
                                       witness={"x0_1": d1.x0, "x0_2": d2.x0},
                                       max_violation=d1.x0 - d2.x0))
    if abs(d1.x0 - d2.x0) <= EQUALITY_TOL * x_scale:
        reports.append(ConditionReport(id="x0_equal", status=CERTIFIED, samples=1))
    else:
        reports.append(ConditionReport(id="x0_equal", status=VIOLATED, samples=1,
                                       witness={"x0_1": d1.x0, "x0_2": d2.x0},
                                       max_violation=abs(d1.x0 - d2.x0)))
    return reports


# ---------------------------------------------------------------------------
# Theorem decision table
# ---------------------------------------------------------------------------

_ZERO = parse("0")


class _Context:
    """Shared lazily evaluated condition checks for one problem pair."""

    def __init__(self, pair, zeta, box):
        self.p1, self.p2 = pair
        self.zeta = zeta if zeta is not None else _ZERO
        self.zeta_given = zeta is not None
        self.box = box
        self.f1 = make_driver(self.p1.diffusion, self.p1.generator)
        self.f2 = make_driver(self.p2.diffusion, self.p2.generator)
        self.nonneg_box = replace(box, z=(max(box.z[0], 0.0),
                                          max(box.z[1], 0.0)))
        self._cache = {}
        coeff = check_coefficient_order(self.p1.diffusion, self.p2.diffusion, box)
        for rep in coeff:
            self._cache[rep.id] = rep

    def get(self, cid: str) -> ConditionReport:
        if cid not in self._cache:
            self._cache[cid] = self._evaluate(cid)
        return self._cache[cid]

    def _convexity_pair(self, driver, box, cid):
        xy = check_convexity_2d(driver, ("x", "y"), None, box, cid=f"{cid}.xy")
        if xy.status != CERTIFIED:
            return xy
        yz = check_convexity_2d(driver, ("y", "z"), None, box, cid=f"{cid}.yz")
        return yz

    def _both_convex(self, cid, box):
        for name, driver in (("f1", self.f1), ("f2", self.f2)):
            rep = self._convexity_pair(driver, box, f"{cid}.{name}")
            if rep.status != CERTIFIED:
                return ConditionReport(id=cid, status=rep.status,
                                       witness=rep.witness, samples=rep.samples,
                                       max_violation=rep.max_violation,
                                       note=f"plane check {rep.id} failed")
        return ConditionReport(id=cid, status=CERTIFIED)

    def _either_convex(self, cid, box):
        rep1 = self._convexity_pair(self.f1, box, f"{cid}.f1")
        if rep1.status == CERTIFIED:
            return ConditionReport(id=cid, status=CERTIFIED, note="holds for i=1")
        rep2 = self._convexity_pair(self.f2, box, f"{cid}.f2")
        if rep2.status == CERTIFIED:
            return ConditionReport(id=cid, status=CERTIFIED, note="holds for i=2")
        return ConditionReport(id=cid, status=VIOLATED, witness=rep2.witness,
                               samples=rep1.samples + rep2.samples,
                               max_violation=max(rep1.max_violation,
                                                 rep2.max_violation),
                               note="fails for both i=1 and i=2")

    def _g_monotone_x(self, cid, box):
        for name, g in (("g1", self.p1.generator.g), ("g2", self.p2.generator.g)):
            rep = check_monotone_in(g, "x", box, cid=f"{cid}.{name}")
            if rep.status != CERTIFIED:
                return ConditionReport(id=cid, status=rep.status,
                                       witness=rep.witness, samples=rep.samples,
                                       max_violation=rep.max_violation,
                                       note=f"{name} decreases in x")
        return ConditionReport(id=cid, status=CERTIFIED)

    def _novikov(self):
        """Sampled boundedness of (mu_i - zeta)/sigma_i; heuristic only."""
        pts = sobol_points(2, self.box.sample_count, self.box.seed + 77)
        t = _scale(pts[:, 0], *self.box.t)
        x = _scale(pts[:, 1], *self.box.x)
        worst = 0.0
        for d in (self.p1.diffusion, self.p2.diffusion):
            mu = broadcast_values(d.mu.eval({"t": t, "x": x}), t.shape)
            sigma = broadcast_values(d.sigma.eval({"t": t, "x": x}), t.shape)
            zeta = broadcast_values(self.zeta.eval({"t": t, "x": x}), t.shape)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.abs((mu - zeta) / sigma)
            if not np.all(np.isfinite(ratio)):
                return ConditionReport(id="novikov_heuristic", status=INCONCLUSIVE,
                                       note="heuristic; ratio not finite on box")
            worst = max(worst, float(np.max(ratio)))
        return ConditionReport(id="novikov_heuristic", status=CERTIFIED,
                               fitted=worst,
                               note="heuristic; sampled bound on |(mu-zeta)/sigma|")

    def _g_dominance(self, cid, restriction):
        return check_dominance(self.p1.generator.g, self.p2.generator.g,
                               self.box, restriction, None, cid=cid)

    def _z_independent(self, cid):
        n = self.box.sample_count
        pts = sobol_points(5, n, self.box.seed + 93)
        t = _scale(pts[:, 0], *self.box.t)
        x = _scale(pts[:, 1], *self.box.x)
        y = _scale(pts[:, 2], *self.box.y)
        z1 = _scale(pts[:, 3], *self.box.z)
        z2 = _scale(pts[:, 4], *self.box.z)
        for name, g in (("g1", self.p1.generator.g), ("g2", self.p2.generator.g)):
            a = broadcast_values(g.eval({"t": t, "x": x, "y": y, "z": z1}), t.shape)
            b = broadcast_values(g.eval({"t": t, "x": x, "y": y, "z": z2}), t.shape)
            gap = np.abs(a - b) - EQUALITY_TOL * (1.0 + np.abs(a) + np.abs(b))
            i = int(np.argmax(gap))
            if gap[i] > 0:
                return ConditionReport(id=cid, status=VIOLATED, samples=n,
                                       max_violation=float(gap[i]),
                                       witness={"t": float(t[i]), "x": float(x[i]),
                                                "y": float(y[i]),
                                                "z_a": float(z1[i]),
                                                "z_b": float(z2[i]),
                                                "generator": name})
        return ConditionReport(id=cid, status=CERTIFIED, samples=n)

    def _evaluate(self, cid: str) -> ConditionReport:
        box, nonneg = self.box, self.nonneg_box
        if cid == "B1":
            return check_dominance(self.f1, self.f2, box, "all_z", None, cid=cid)
        if cid == "B2":
            return self._both_convex(cid, box)
        if cid == "E1":
            return check_dominance(self.f1, self.f2, box, "all_z", self.zeta, cid=cid)
        if cid == "E2":
            return self._either_convex(cid, box)
        if cid == "novikov_heuristic":
            return self._novikov()
        if cid == "C'1":
            return self._z_independent(cid)
        if cid == "C'2":
            return self._g_dominance(cid, "all_z")
        if cid == "C'3":
            return self._both_convex(cid, box)
        if cid == "B'1":
            return check_dominance(self.f1, self.f2, nonneg, "nonneg_z", None, cid=cid)
        if cid == "B'2":
            return self._both_convex(cid, nonneg)
        if cid == "B'3":
            return self._g_monotone_x(cid, nonneg)
        if cid == "E'1":
            return check_dominance(self.f1, self.f2, nonneg, "nonneg_z", self.zeta, cid=cid)
        if cid == "E'2":
            return self._either_convex(cid, nonneg)
        if cid == "E'3":
            return self._g_monotone_x(cid, nonneg)
        if cid == "C1":
            return self._g_dominance(cid, "nonneg_z")
        if cid == "C2":
            rep1 = check_monotone_in(self.p1.generator.g, "z", self.nonneg_box,
                                     cid=f"{cid}.g1")
            if rep1.status == CERTIFIED:
                return ConditionReport(id=cid, status=CERTIFIED, note="holds for i=1")
            rep2 = check_monotone_in(self.p2.generator.g, "z", self.nonneg_box,
                                     cid=f"{cid}.g2")
            if rep2.status == CERTIFIED:
                return ConditionReport(id=cid, status=CERTIFIED, note="holds for i=2")
            return ConditionReport(id=cid, status=VIOLATED, witness=rep2.witness,
                                   max_violation=max(rep1.max_violation,
                                                     rep2.max_violation),
                                   note="fails for both i=1 and i=2")
        if cid == "C3":
            return self._g_monotone_x(cid, nonneg)
        if cid == "C4":
            return self._both_convex(cid, nonneg)
        if cid == "B''1":
            return check_dominance(self.f1, self.f2, nonneg, "nonneg_z", None, cid=cid)
        if cid == "B''2":
            return self._g_monotone_x(cid, nonneg)
        if cid == "D2":
            return self._g_dominance(cid, "nonneg_z")
        if cid == "D3":
            return self._g_monotone_x(cid, nonneg)
        raise KeyError(cid)


# theorem id -> (order type, required condition ids, in priority order)
THEOREMS = {
    "pp3": ("conv", ["x0_equal", "sigma_positive", "sigma_order", "B1", "B2"]),
    "pp1": ("conv", ["x0_equal", "sigma_positive", "sigma_order", "E1", "E2",
                     "novikov_heuristic"]),
    "pp6": ("conv", ["x0_equal", "sigma_positive", "sigma_order", "drift_equal",
                     "C'1", "C'2", "C'3"]),
    "pp4": ("iconv", ["x0_order", "sigma_positive", "sigma_order", "B'1", "B'2",
                      "B'3"]),
    "pp2": ("iconv", ["x0_order", "sigma_positive", "sigma_order", "E'1", "E'2",
                      "E'3", "novikov_heuristic"]),
    "pp5": ("iconv", ["x0_order", "sigma_positive", "sigma_order", "drift_order",
                      "C1", "C2", "C3", "C4"]),
    "pp4.1": ("mon", ["x0_order", "sigma_positive", "sigma_equal", "B''1",
                      "B''2"]),
    "pp7": ("mon", ["x0_order", "sigma_positive", "sigma_equal", "drift_order",
                    "D2", "D3"]),
}

_PRIORITY = {"conv": ["pp3", "pp1", "pp6"],
             "iconv": ["pp4", "pp2", "pp5"],
             "mon": ["pp4.1", "pp7"]}


def verdict(pair, requested: str, zeta: Optional[Expr] = None,
            box: Optional[Box] = None) -> OrderingVerdict:
    """First fully certified theorem for the requested order, in the fixed
    priority order, else order_type 'none' with the blockers listed."""
    if requested not in _PRIORITY:
        raise ValueError(f"requested order must be conv/iconv/mon, got {requested!r}")
    p1, p2 = pair
    box = box or default_box(p1)
    ctx = _Context(pair, zeta, box)
    blocking = {}
    evaluated = {}
    for theorem in _PRIORITY[requested]:
        _, required = THEOREMS[theorem]
        failed = []
        for cid in required:
            rep = ctx.get(cid)
            evaluated[rep.id] = rep
            if rep.status != CERTIFIED:
                failed.append(cid)
        if not failed:
            uses_zeta = ctx.zeta_given or theorem in ("pp1", "pp2")
            return OrderingVerdict(order_type=requested, applied_result=theorem,
                                   conditions=list(evaluated.values()),
                                   zeta=str(ctx.zeta) if uses_zeta else None,
                                   blocking=blocking or None)
        blocking[theorem] = failed
    return OrderingVerdict(order_type="none", applied_result=None,
                           conditions=list(evaluated.values()),
                           zeta=str(ctx.zeta) if ctx.zeta_given else None,
                           blocking=blocking)


# ---------------------------------------------------------------------------
# Empirical verification
# ---------------------------------------------------------------------------

def default_payoff_family(order_type: str, x0: float) -> list:
    """Payoff families spanning the function class of each order type."""
    k_lo, k_mid, k_hi = 0.8 * x0, x0, 1.2 * x0
    eps = abs(x0) / 50.0 or 1.0
    if order_type in ("conv", "conc"):
        specs = [
            ("x", 1.0), ("x^2", 2.0),
            (f"max(x - {k_lo!r}, 0)", 1.0),
            (f"max(x - {k_mid!r}, 0)", 1.0),
            (f"max(x - {k_hi!r}, 0)", 1.0),
            (f"abs(x - {k_mid!r})", 1.0),
        ]
        convex, nondecreasing = True, False
    elif order_type in ("iconv", "iconc"):
        specs = [("x", 1.0), (f"max(x - {k_mid!r}, 0)", 1.0),
                 (f"pos(x - {k_mid!r})^2", 2.0)]
        convex, nondecreasing = True, True
    elif order_type == "mon":
        specs = [("x", 1.0), (f"min(x, {k_mid!r})", 1.0),
                 (f"1 / (1 + exp(-2 * (x - {k_mid!r}) / {eps!r}))", 1.0)]
        convex, nondecreasing = False, True
    else:
        raise ValueError(f"no default payoff family for {order_type!r}")
    return [PayoffSpec(phi=parse(s), growth_exponent=p, asserted_convex=convex,
                       asserted_nondecreasing=nondecreasing)
            for s, p in specs]


def pde_value(problem: ProblemSpec, nx: int = 400, nt: int = 400,
              L: float = 5.0) -> float:
    from . import pde
    grid = pde.default_grid(problem, nx=nx, nt=nt, L=L)
    return pde.g_expectation(pde.solve(problem, grid))


def mc_value(problem: ProblemSpec, cfg=None, paths=None):
    """(estimate, stderr); pass a PathEnsemble to reuse simulated paths."""
    from . import mc
    cfg = cfg or mc.McConfig()
    if paths is None:
        paths = mc.simulate_forward(problem.diffusion, problem.horizon, cfg)
    est = mc.solve_bsde_lsmc(paths, problem.generator, problem.payoff, cfg)
    return est.y0_mean, est.y0_stderr


def _verify_payoff_flags(payoffs, order_type, x_range, seed):
    for spec in payoffs:
        needs_convex = order_type in ("conv", "iconv")
        needs_monotone = order_type in ("iconv", "mon")
        if needs_convex:
            rep = check_convex_1d(spec.phi, x_range, seed=seed)
            if rep.status != CERTIFIED:
                raise ValueError(f"payoff {spec.phi} is not convex on the grid range")
        if needs_monotone:
            rep = check_nondecreasing_1d(spec.phi, x_range, seed=seed)
            if rep.status != CERTIFIED:
                raise ValueError(f"payoff {spec.phi} is not non-decreasing on the grid range")


def verify_order_empirically(pair, payoff_family: Sequence[PayoffSpec],
                             engine: str = "pde", order_type: str = "conv",
                             nx: int = 400, nt: int = 400, L: float = 5.0,
                             mc_cfg=None, negate: bool = False) -> list:
    """Per-payoff values of both problems under the chosen engine.

    A row passes when value_2 - value_1 >= -tol with tol the engine's
    resolution (discretization-scale for the grid solver, three combined
    standard errors for the regression solver).  With `negate`, rows carry
    the risk-measure level -E[-phi] instead.
    """
    if engine not in ("pde", "mc"):
        raise ValueError("engine must be pde or mc")
    p1, p2 = pair
    from . import pde as pde_mod
    g1 = pde_mod.default_grid(p1, nx=nx, nt=nt, L=L)
    g2 = pde_mod.default_grid(p2, nx=nx, nt=nt, L=L)
    x_range = (min(g1.x_min, g2.x_min), max(g1.x_max, g2.x_max))
    _verify_payoff_flags(payoff_family, order_type, x_range, seed=1009)

    ensembles = {}
    if engine == "mc":
        from . import mc as mc_mod
        cfg = mc_cfg or mc_mod.McConfig()
        for tag, prob in (("p1", p1), ("p2", p2)):
            ensembles[tag] = mc_mod.simulate_forward(prob.diffusion, prob.horizon, cfg)

    def one(payoff: PayoffSpec) -> EmpiricalRow:
        phi = payoff
        if negate:
            phi = replace(payoff, phi=-payoff.phi)
        prob1 = replace(p1, payoff=phi)
        prob2 = replace(p2, payoff=phi)
        if engine == "pde":
            v1 = pde_value(prob1, nx=nx, nt=nt, L=L)
            v2 = pde_value(prob2, nx=nx, nt=nt, L=L)
            if negate:
                v1, v2 = -v1, -v2
            tol = PDE_EMPIRICAL_TOL * (1.0 + abs(v2))
        else:
            from . import mc as mc_mod
            cfg2 = mc_cfg or mc_mod.McConfig()
            v1, se1 = mc_value(prob1, cfg2, ensembles["p1"])
            v2, se2 = mc_value(prob2, cfg2, ensembles["p2"])
            if negate:
                v1, v2 = -v1, -v2
            tol = 3.0 * math.hypot(se1, se2)
        diff = v2 - v1
        return EmpiricalRow(payoff=str(payoff.phi), value_1=v1, value_2=v2,
                            difference=diff, tolerance=tol,
                            passed=bool(diff >= -tol))

    return parallel_map(one, list(payoff_family))


def risk_compare(pair, payoff_family: Sequence[PayoffSpec],
                 box: Optional[Box] = None, zeta: Optional[Expr] = None,
                 engine: str = "pde", nx: int = 400, nt: int = 400,
                 L: float = 5.0, mc_cfg=None) -> OrderingVerdict:
    """Risk-measure comparison -E_{g1}[-phi(X1)] <= -E_{g2}[-phi(X2)].

    Runs the convex-order condition logic on the reflected drivers
    f_i built from -g_i(t,x,-y,-z) (conditions F1/F2 and the sandwich
    G1/G2), then verifies the inequality on the negated payoffs.
    """
    p1, p2 = pair
    p1r = replace(p1, generator=risk_transform(p1.generator))
    p2r = replace(p2, generator=risk_transform(p2.generator))
    box = box or default_box(p1)
    ctx = _Context((p1r, p2r), zeta, box)
    evaluated = {}
    blocking = {}
    applied = None

    for cid_base, cid_mapped in (("x0_equal", "x0_equal"),
                                 ("sigma_positive", "sigma_positive"),
                                 ("sigma_order", "sigma_order")):
        evaluated[cid_mapped] = ctx.get(cid_base)

    f_reports = {"F1": ctx.get("B1"), "F2": ctx.get("B2")}
    for mapped, rep in f_reports.items():
        evaluated[mapped] = replace(rep, id=mapped)
    shared_ok = all(evaluated[c].status == CERTIFIED
                    for c in ("x0_equal", "sigma_positive", "sigma_order"))
    if shared_ok and all(r.status == CERTIFIED for r in f_reports.values()):
        applied = "pp9"
    else:
        blocking["pp9"] = [cid for cid in ("x0_equal", "sigma_positive",
                                           "sigma_order", "F1", "F2")
                           if evaluated[cid].status != CERTIFIED]
        g_reports = {"G1": ctx.get("E1"), "G2": ctx.get("E2"),
                     "novikov_heuristic": ctx.get("novikov_heuristic")}
        for mapped, rep in g_reports.items():
            evaluated[mapped] = replace(rep, id=mapped) if mapped != rep.id else rep
        if shared_ok and all(r.status == CERTIFIED for r in g_reports.values()):
            applied = "pp10"
        else:
            blocking["pp10"] = [cid for cid in ("x0_equal", "sigma_positive",
                                                "sigma_order", "G1", "G2")
                                if evaluated[cid].status != CERTIFIED]

    rows = verify_order_empirically(pair, payoff_family, engine=engine,
                                    order_type="conv", nx=nx, nt=nt, L=L,
                                    mc_cfg=mc_cfg, negate=True)
    return OrderingVerdict(order_type="conv" if applied else "none",
                           applied_result=applied,
                           conditions=list(evaluated.values()),
                           zeta=str(zeta) if zeta is not None else None,
                           empirical=rows, blocking=blocking or None)


# ---------------------------------------------------------------------------
# Concave orders via the reflection duality
# ---------------------------------------------------------------------------

def reflect_problem(p: ProblemSpec) -> ProblemSpec:
    """Mirror-image problem whose value functional satisfies
    E-hat[phi-hat(X-hat_T)] = -E[phi(X_T)] with phi-hat(x) = -phi(-x).

    The state is negated, the Brownian motion reflected, and the reflection
    absorbed into the generator: mu-hat(t,x) = -mu(t,-x),
    sigma-hat(t,x) = sigma(t,-x), g-hat(t,x,y,z) = -g(t,-x,-y,z).
    """
    x_var, y_var = parse("x"), parse("y")
    d = p.diffusion
    mu_hat = -(d.mu.substitute("x", -x_var))
    sigma_hat = d.sigma.substitute("x", -x_var)
    g_hat = -(p.generator.g.substitute("x", -x_var).substitute("y", -y_var))
    phi_hat = -(p.payoff.phi.substitute("x", -x_var))
    return ProblemSpec(
        diffusion=DiffusionSpec(mu=mu_hat, sigma=sigma_hat, x0=-d.x0,
                                state_domain="whole_line"),
        generator=GeneratorSpec.from_expr(g_hat),
        payoff=PayoffSpec(phi=phi_hat, growth_exponent=p.payoff.growth_exponent),
        horizon=p.horizon)


def concave_order_verdict(pair, requested: str, zeta: Optional[Expr] = None,
                          box: Optional[Box] = None) -> OrderingVerdict:
    """conc/iconc verdicts via the convex duality: X1 <= X2 in the concave
    order iff -X2 <= -X1 in the convex order for the reflected problems."""
    if requested not in ("conc", "iconc"):
        raise ValueError("requested must be conc or iconc")
    p1, p2 = pair
    reflected = (reflect_problem(p2), reflect_problem(p1))
    if box is None:
        # the reflected states live on the mirror image of the original range
        original = default_box(p2)
        box = replace(original, x=(-original.x[1], -original.x[0]))
    base = verdict(reflected, "conv" if requested == "conc" else "iconv",
                   zeta=zeta, box=box)
    return OrderingVerdict(order_type=requested if base.found else "none",
                           applied_result=base.applied_result,
                           conditions=base.conditions, zeta=base.zeta,
                           empirical=base.empirical, blocking=base.blocking)
