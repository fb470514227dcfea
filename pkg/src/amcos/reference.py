"""Independent reference pricers and parity analytics.

Closed-form European Black-Scholes, a CRR binomial American pricer, and
the parity-deviation report built from early-exercise premiums.  These
exist to cross-check the cosine-expansion engine and share no code with
it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cos_engine import MarketParams
from .errors import DomainError

__all__ = [
    "ParityReport",
    "european_bs",
    "binomial_american",
    "early_exercise_premiums",
    "implied_div_european",
]


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def european_bs(p: MarketParams) -> float:
    """Black-Scholes price with a continuous dividend yield."""
    srt = p.sigma * math.sqrt(p.tau)
    d1 = (math.log(p.s0 / p.strike) + (p.rate - p.div_yield + 0.5 * p.sigma**2) * p.tau) / srt
    d2 = d1 - srt
    disc_s = p.s0 * math.exp(-p.div_yield * p.tau)
    disc_k = p.strike * math.exp(-p.rate * p.tau)
    if p.kind == "call":
        return disc_s * _norm_cdf(d1) - disc_k * _norm_cdf(d2)
    return disc_k * _norm_cdf(-d2) - disc_s * _norm_cdf(-d1)


def european_vega_bs(p: MarketParams) -> float:
    """Closed-form Black-Scholes Vega (same for calls and puts)."""
    srt = p.sigma * math.sqrt(p.tau)
    d1 = (math.log(p.s0 / p.strike) + (p.rate - p.div_yield + 0.5 * p.sigma**2) * p.tau) / srt
    pdf = math.exp(-0.5 * d1 * d1) / math.sqrt(2.0 * math.pi)
    return p.s0 * math.exp(-p.div_yield * p.tau) * pdf * math.sqrt(p.tau)


def _binomial_pair(p: MarketParams, steps: int) -> tuple[float, float]:
    """(American, European) values from one CRR tree.

    Sharing the tree makes the early-exercise premium non-negative by
    construction and cancels the discretization error in the difference.
    """
    if steps < 2:
        raise ValueError("steps must be at least 2")
    dt = p.tau / steps
    up = math.exp(p.sigma * math.sqrt(dt))
    down = 1.0 / up
    growth = math.exp((p.rate - p.div_yield) * dt)
    prob = (growth - down) / (up - down)
    if not 0.0 < prob < 1.0:
        raise ValueError(
            f"risk-neutral probability {prob:.4g} outside (0, 1); increase steps"
        )
    disc = math.exp(-p.rate * dt)
    pu = disc * prob
    pd = disc * (1.0 - prob)

    j = np.arange(steps + 1)
    s = p.s0 * np.exp((2.0 * j - steps) * p.sigma * math.sqrt(dt))
    v_am = np.maximum(p.alpha * (s - p.strike), 0.0)
    v_eu = v_am.copy()
    for _ in range(steps):
        v_eu = pu * v_eu[1:] + pd * v_eu[:-1]
        v_am = pu * v_am[1:] + pd * v_am[:-1]
        s = s[:-1] * up
        np.maximum(v_am, p.alpha * (s - p.strike), out=v_am)
    return float(v_am[0]), float(v_eu[0])


def binomial_american(p: MarketParams, steps: int = 5000) -> float:
    """CRR binomial value with an exercise check at every node."""
    return _binomial_pair(p, steps)[0]


@dataclass(frozen=True)
class ParityReport:
    """Early-exercise premiums and the deviation from European parity.

    ``eed`` is the call premium minus the put premium by construction; it
    equals C_am - P_am - S*e^{-q*tau} + K*e^{-r*tau}.
    ``implied_div_european`` is the parity-based dividend estimate applied
    to the American prices (exact only when the premiums cancel).
    """

    call_premium: float
    put_premium: float
    eed: float
    implied_div_european: float


def implied_div_european(call: float, put: float, p: MarketParams) -> float:
    """Dividend yield solving European put-call parity for the given prices.

    q = -(1/tau) * log((C - P + K*e^{-r*tau}) / S).  Raises ``DomainError``
    when the argument of the logarithm is not positive.
    """
    arg = (call - put + p.strike * math.exp(-p.rate * p.tau)) / p.s0
    if arg <= 0.0:
        raise DomainError("C - P + K*e^{-r*tau} must be positive")
    return -math.log(arg) / p.tau


def early_exercise_premiums(p: MarketParams, steps: int = 5000) -> ParityReport:
    """Premiums (binomial American minus European) and the parity report.

    Both legs of each premium come from the same tree, so the premiums
    are non-negative and their difference satisfies the parity identity
    to rounding (the tree reprices the forward exactly).
    """
    p_call = MarketParams(p.s0, p.strike, p.tau, p.rate, p.div_yield, p.sigma, kind="call")
    p_put = MarketParams(p.s0, p.strike, p.tau, p.rate, p.div_yield, p.sigma, kind="put")
    call_am, call_eu = _binomial_pair(p_call, steps)
    put_am, put_eu = _binomial_pair(p_put, steps)
    call_premium = call_am - call_eu
    put_premium = put_am - put_eu
    return ParityReport(
        call_premium=call_premium,
        put_premium=put_premium,
        eed=call_premium - put_premium,
        implied_div_european=implied_div_european(call_am, put_am, p),
    )
