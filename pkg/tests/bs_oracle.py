"""Independent closed-form oracles used to pin solver expectations.

These are written directly from the classical formulas and never touch
the solver code paths they check.
"""

import math


def norm_cdf(u: float) -> float:
    return 0.5 * (1.0 + math.erf(u / math.sqrt(2.0)))


def black_scholes_call(spot: float, strike: float, r: float, sigma: float,
                       t: float) -> float:
    """Discounted Black-Scholes call price."""
    if t <= 0 or sigma <= 0:
        return max(spot - strike, 0.0)
    d1 = (math.log(spot / strike) + (r + 0.5 * sigma * sigma) * t) \
        / (sigma * math.sqrt(t))
    d2 = d1 - sigma * math.sqrt(t)
    return spot * norm_cdf(d1) - strike * math.exp(-r * t) * norm_cdf(d2)


def lognormal_mean(x0: float, drift: float, t: float) -> float:
    """E[X_t] for geometric Brownian motion with relative drift `drift`."""
    return x0 * math.exp(drift * t)
