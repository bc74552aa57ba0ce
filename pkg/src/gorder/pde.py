"""Finite-difference solver for the semilinear backward PDE

    u_t + mu(t,x) u_x + (1/2) sigma^2(t,x) u_xx + g(t, x, u, sigma u_x) = 0,
    u(T, x) = phi(x),

marched backward from T with an IMEX split: the linear advection/diffusion
part is treated implicitly (one banded solve per step), the generator is
evaluated explicitly at the previous backward layer with z = sigma * u_x.
The value of the associated backward equation is u(0, x0), and sigma * u_x
proxies the martingale integrand.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .expr import NonFinite
from .model import (POSITIVE_HALFLINE, WHOLE_LINE, DEFAULT_SEED, ProblemSpec,
                    sobol_points)

__all__ = [
    "GridSpec", "PdeSolution", "GridTooCoarse", "PdeFailure", "OutOfGrid",
    "solve", "g_expectation", "convexity_profile", "monotonicity_profile",
    "sign_constancy_profile", "default_grid", "export_csv",
]

SIGN_DEAD_BAND = 1e-6  # scaled by max(1, max|u|)


class PdeFailure(RuntimeError):
    """Base class for solver failures."""


class GridTooCoarse(PdeFailure):
    """Explicit generator increment exceeded the stability bound."""

    def __init__(self, step: int, node: int, magnitude: float):
        self.step = step
        self.node = node
        self.magnitude = magnitude
        super().__init__(f"explicit g-term too large at step {step}, node {node} "
                         f"(|dt*g| = {magnitude:.3g}); refine nt")


class PdeNonFinite(PdeFailure):
    """Non-finite value during marching, with its (step, node) location."""

    def __init__(self, step: int, node: int, detail: str = ""):
        self.step = step
        self.node = node
        super().__init__(f"non-finite value at step {step}, node {node}" +
                         (f": {detail}" if detail else ""))


class OutOfGrid(PdeFailure):
    """Requested point lies outside the spatial grid."""


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    nx: int = 400
    nt: int = 400
    spacing: str = "uniform"
    boundary: str = "second_derivative_zero"

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("x_min must be < x_max")
        if self.nx < 3 or self.nt < 1:
            raise ValueError("need nx >= 3 and nt >= 1")
        if self.spacing not in ("uniform", "log"):
            raise ValueError(f"unknown spacing {self.spacing!r}")
        if self.spacing == "log" and self.x_min <= 0:
            raise ValueError("log spacing requires x_min > 0")
        if self.boundary not in ("second_derivative_zero", "dirichlet_payoff"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    def nodes(self) -> np.ndarray:
        if self.spacing == "log":
            return np.exp(np.linspace(math.log(self.x_min), math.log(self.x_max),
                                      self.nx))
        return np.linspace(self.x_min, self.x_max, self.nx)


def default_grid(problem: ProblemSpec, nx: int = 400, nt: int = 400,
                 L: float = 5.0, boundary: str = "second_derivative_zero") -> GridSpec:
    """Truncate the whole-line problem to a finite box.

    The half-width is L sampled standard deviations: log-spaced nodes on
    [x0 e^-w, x0 e^w] with w = L * max(sigma/x) * sqrt(T) on the positive
    halfline, and [x0 - w, x0 + w] with w = L * max|sigma| * sqrt(T) on the
    whole line.  The node count is rounded up to odd so x0 sits exactly on
    the center node; this keeps payoff kinks aligned across refinements.
    """
    if nx % 2 == 0:
        nx += 1
    d = problem.diffusion
    T = problem.horizon
    pts = sobol_points(2, 256, DEFAULT_SEED)
    t_s = pts[:, 0] * T
    if d.state_domain == POSITIVE_HALFLINE:
        x_s = d.x0 * np.exp((pts[:, 1] - 0.5) * 4.0)
        sig = np.asarray(d.sigma.eval({"t": t_s, "x": x_s}), dtype=float)
        ratio = np.abs(sig / x_s)
        width = L * float(np.max(ratio)) * math.sqrt(T)
        width = max(width, 1e-3)
        return GridSpec(x_min=d.x0 * math.exp(-width), x_max=d.x0 * math.exp(width),
                        nx=nx, nt=nt, spacing="log", boundary=boundary)
    x_guess = d.x0 + (pts[:, 1] - 0.5) * 10.0 * max(1.0, abs(d.x0))
    sig = np.abs(np.asarray(d.sigma.eval({"t": t_s, "x": x_guess}), dtype=float))
    width = L * float(np.max(sig)) * math.sqrt(T)
    width = max(width, 1e-3 * max(1.0, abs(d.x0)))
    return GridSpec(x_min=d.x0 - width, x_max=d.x0 + width, nx=nx, nt=nt,
                    spacing="uniform", boundary=boundary)


@dataclass
class PdeSolution:
    times: np.ndarray      # nt+1 ascending, times[0] = 0
    nodes: np.ndarray      # nx ascending
    u: np.ndarray          # (nt+1, nx); u[-1] is the payoff layer, bit-exact
    ux: np.ndarray
    uxx: np.ndarray
    problem: ProblemSpec
    grid: GridSpec


def _difference_weights(nodes: np.ndarray):
    """Three-point first/second difference weights on a nonuniform grid.

    Returns (d1m, d1c, d1p, d2m, d2c, d2p) for interior nodes 1..nx-2.
    """
    hm = nodes[1:-1] - nodes[:-2]
    hp = nodes[2:] - nodes[1:-1]
    denom = hm * hp * (hm + hp)
    d1m = -hp ** 2 / denom
    d1c = (hp ** 2 - hm ** 2) / denom
    d1p = hm ** 2 / denom
    d2m = 2.0 * hp / denom
    d2c = -2.0 * (hm + hp) / denom
    d2p = 2.0 * hm / denom
    return d1m, d1c, d1p, d2m, d2c, d2p


def _first_derivative(layer: np.ndarray, nodes: np.ndarray,
                      weights) -> np.ndarray:
    d1m, d1c, d1p, _, _, _ = weights
    out = np.empty_like(layer)
    out[1:-1] = d1m * layer[:-2] + d1c * layer[1:-1] + d1p * layer[2:]
    out[0] = (layer[1] - layer[0]) / (nodes[1] - nodes[0])
    out[-1] = (layer[-1] - layer[-2]) / (nodes[-1] - nodes[-2])
    return out


def _second_derivative(layer: np.ndarray, weights) -> np.ndarray:
    _, _, _, d2m, d2c, d2p = weights
    out = np.empty_like(layer)
    out[1:-1] = d2m * layer[:-2] + d2c * layer[1:-1] + d2p * layer[2:]
    out[0] = out[1]
    out[-1] = out[-2]
    return out


def _boundary_second_diff_row(nodes: np.ndarray, first: bool):
    """One-sided second-difference weights at an end node (set to zero)."""
    if first:
        x0, x1, x2 = nodes[0], nodes[1], nodes[2]
    else:
        x0, x1, x2 = nodes[-1], nodes[-2], nodes[-3]
    h1 = x1 - x0
    h2 = x2 - x1
    c0 = 2.0 / (h1 * (h1 + h2))
    c1 = -2.0 / (h1 * h2)
    c2 = 2.0 / (h2 * (h1 + h2))
    return c0, c1, c2


def solve(p: ProblemSpec, grid: GridSpec) -> PdeSolution:
    """March u backward from the payoff layer to t = 0."""
    nodes = grid.nodes()
    if p.diffusion.state_domain == POSITIVE_HALFLINE and nodes[0] <= 0:
        raise ValueError("positive_halfline diffusion needs x_min > 0")
    if not (nodes[0] <= p.diffusion.x0 <= nodes[-1]):
        raise OutOfGrid(f"grid does not cover x0 = {p.diffusion.x0}")
    nt, nx = grid.nt, grid.nx
    times = np.linspace(0.0, p.horizon, nt + 1)
    dt = p.horizon / nt
    weights = _difference_weights(nodes)

    u = np.empty((nt + 1, nx))
    u[nt] = np.broadcast_to(np.asarray(p.payoff.phi.eval({"x": nodes}), dtype=float),
                            nodes.shape)
    if not np.all(np.isfinite(u[nt])):
        raise PdeNonFinite(nt, int(np.argmin(np.isfinite(u[nt]))), "payoff layer")

    mu_expr, sigma_expr, g_expr = p.diffusion.mu, p.diffusion.sigma, p.generator.g
    time_dependent = ("t" in mu_expr.free_vars) or ("t" in sigma_expr.free_vars)

    def coefficients(t: float, step: int):
        try:
            mu = np.broadcast_to(
                np.asarray(mu_expr.eval({"t": t, "x": nodes}), dtype=float),
                nodes.shape)
            sigma = np.broadcast_to(
                np.asarray(sigma_expr.eval({"t": t, "x": nodes}), dtype=float),
                nodes.shape)
        except NonFinite as err:
            raise PdeNonFinite(step, -1, str(err)) from err
        return mu, sigma

    def system(mu, sigma):
        """Banded matrix for I - dt * (mu D1 + sigma^2/2 D2), bandwidth (2,2)."""
        d1m, d1c, d1p, d2m, d2c, d2p = weights
        half_s2 = 0.5 * sigma[1:-1] ** 2
        sub = -dt * (mu[1:-1] * d1m + half_s2 * d2m)
        diag = 1.0 - dt * (mu[1:-1] * d1c + half_s2 * d2c)
        sup = -dt * (mu[1:-1] * d1p + half_s2 * d2p)
        ab = np.zeros((5, nx))
        # scipy layout: ab[u + i - j, j] = A[i, j] with (l, u) = (2, 2)
        ab[2, 1:-1] = diag
        ab[3, 0:-2] = sub    # A[i, i-1]
        ab[1, 2:] = sup      # A[i, i+1]
        if grid.boundary == "second_derivative_zero":
            c0, c1, c2 = _boundary_second_diff_row(nodes, first=True)
            ab[2, 0], ab[1, 1], ab[0, 2] = c0, c1, c2
            c0, c1, c2 = _boundary_second_diff_row(nodes, first=False)
            ab[2, nx - 1], ab[3, nx - 2], ab[4, nx - 3] = c0, c1, c2
        else:
            ab[2, 0] = 1.0
            ab[2, nx - 1] = 1.0
        return ab

    if not time_dependent:
        mu0, sigma0 = coefficients(0.0, nt)
        ab_static = system(mu0, sigma0)
        sigma_static = sigma0
    else:
        ab_static = None

    for n in range(nt - 1, -1, -1):
        t_data = times[n + 1]
        t_new = times[n]
        layer = u[n + 1]
        if time_dependent:
            mu_d, sigma_d = coefficients(t_data, n)
        else:
            sigma_d = sigma_static
        ux = _first_derivative(layer, nodes, weights)
        z = sigma_d * ux
        try:
            g_layer = np.asarray(
                g_expr.eval({"t": t_data, "x": nodes, "y": layer, "z": z}),
                dtype=float)
        except NonFinite as err:
            raise PdeNonFinite(n, -1, str(err)) from err
        g_layer = np.broadcast_to(g_layer, layer.shape)
        increment = dt * g_layer
        bound = max(1.0, float(np.max(np.abs(layer))))
        worst = int(np.argmax(np.abs(increment)))
        if abs(increment[worst]) > bound:
            raise GridTooCoarse(n, worst, float(abs(increment[worst])))

        rhs = layer + increment
        if grid.boundary == "second_derivative_zero":
            rhs = rhs.copy()
            rhs[0] = 0.0
            rhs[-1] = 0.0
        else:
            rhs = rhs.copy()
            rhs[0] = u[nt][0]
            rhs[-1] = u[nt][-1]

        if time_dependent:
            mu_n, sigma_n = coefficients(t_new, n)
            ab = system(mu_n, sigma_n)
        else:
            ab = ab_static
        u[n] = solve_banded((2, 2), ab, rhs)
        if not np.all(np.isfinite(u[n])):
            raise PdeNonFinite(n, int(np.argmin(np.isfinite(u[n]))))

    ux_all = np.empty_like(u)
    uxx_all = np.empty_like(u)
    for i in range(nt + 1):
        ux_all[i] = _first_derivative(u[i], nodes, weights)
        uxx_all[i] = _second_derivative(u[i], weights)
    return PdeSolution(times=times, nodes=nodes, u=u, ux=ux_all, uxx=uxx_all,
                       problem=p, grid=grid)


def g_expectation(sol: PdeSolution) -> float:
    """Linear interpolation of u(0, .) at the initial state."""
    x0 = sol.problem.diffusion.x0
    if not (sol.nodes[0] <= x0 <= sol.nodes[-1]):
        raise OutOfGrid(f"x0 = {x0} outside [{sol.nodes[0]}, {sol.nodes[-1]}]")
    return float(np.interp(x0, sol.nodes, sol.u[0]))


def value_scale(sol: PdeSolution) -> float:
    return max(1.0, float(np.max(np.abs(sol.u))))


def _interior(sol: PdeSolution) -> slice:
    # two boundary nodes excluded at each side
    return slice(2, sol.grid.nx - 2)


@dataclass
class Profile:
    min_value: float
    t: float
    x: float
    layer: int
    node: int
    center_value: float
    scale: float

    def to_json(self) -> dict:
        return {"min_value": self.min_value,
                "location": {"t": self.t, "x": self.x},
                "center_value": self.center_value,
                "scale": self.scale}


def _profile_of(sol: PdeSolution, field: np.ndarray) -> Profile:
    sl = _interior(sol)
    block = field[:, sl]
    flat = int(np.argmin(block))
    layer, col = np.unravel_index(flat, block.shape)
    node = col + sl.start
    center = int(np.argmin(np.abs(sol.nodes - sol.problem.diffusion.x0)))
    return Profile(min_value=float(block[layer, col]),
                   t=float(sol.times[layer]), x=float(sol.nodes[node]),
                   layer=int(layer), node=int(node),
                   center_value=float(field[0, center]),
                   scale=value_scale(sol))


def convexity_profile(sol: PdeSolution) -> Profile:
    """Minimum second difference over interior nodes and all time layers."""
    return _profile_of(sol, sol.uxx)


def monotonicity_profile(sol: PdeSolution) -> Profile:
    """Minimum first difference over interior nodes and all time layers."""
    return _profile_of(sol, sol.ux)


@dataclass
class SignProfile:
    signs: list            # one of '+', '0', '-', 'mixed' per time layer
    first_mixed_layer: Optional[int]   # scanning backward from T, or None
    dead_band: float

    @property
    def ever_mixed(self) -> bool:
        return self.first_mixed_layer is not None

    def to_json(self) -> dict:
        return {"signs": self.signs, "first_mixed_layer": self.first_mixed_layer,
                "dead_band": self.dead_band}


def sign_constancy_profile(sol: PdeSolution) -> SignProfile:
    """Per-layer sign of u_xx with a dead band separating noise from curvature."""
    band = SIGN_DEAD_BAND * value_scale(sol)
    sl = _interior(sol)
    signs = []
    for i in range(sol.u.shape[0]):
        row = sol.uxx[i, sl]
        has_pos = bool(np.any(row > band))
        has_neg = bool(np.any(row < -band))
        if has_pos and has_neg:
            signs.append("mixed")
        elif has_pos:
            signs.append("+")
        elif has_neg:
            signs.append("-")
        else:
            signs.append("0")
    # first mixed layer encountered marching backward from T
    first_mixed = None
    for i in range(sol.u.shape[0] - 1, -1, -1):
        if signs[i] == "mixed":
            first_mixed = i
            break
    return SignProfile(signs=signs, first_mixed_layer=first_mixed,
                       dead_band=band)


def export_csv(sol: PdeSolution, path: str) -> None:
    """Write 't,x,u,ux,uxx' rows, time-major, deterministic order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "u", "ux", "uxx"])
        for i, t in enumerate(sol.times):
            for j, x in enumerate(sol.nodes):
                writer.writerow([repr(float(t)), repr(float(x)),
                                 repr(float(sol.u[i, j])),
                                 repr(float(sol.ux[i, j])),
                                 repr(float(sol.uxx[i, j]))])
