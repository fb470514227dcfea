"""Holding/stopping classification and gradient squashing of put prices.

A sample is usable for implied-volatility inversion only in the holding
region, where the price still responds to volatility.  ITM samples must
clear two thresholds: the price has to exceed the payoff by more than
``eps1`` and Vega has to exceed ``eps2``.  OTM samples are always
holding.  The squashed regression target is the log of the time value
(price minus the intrinsic lower bound).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .cos_engine import MarketParams
from .errors import NonPositiveTimeValue

__all__ = ["RegionLabel", "intrinsic_put", "squash", "classify", "EPS_PAYOFF", "EPS_VEGA"]

# Classification thresholds used throughout dataset generation.
EPS_PAYOFF = 1e-4
EPS_VEGA = 1e-3


@dataclass(frozen=True)
class RegionLabel:
    """Classification of one priced sample.

    ``log_time_value`` is only defined for holding samples with a strictly
    positive time value; it is ``None`` otherwise.
    """

    label: str  # "holding" | "stopping"
    time_value: float
    log_time_value: float | None

    @property
    def is_holding(self) -> bool:
        return self.label == "holding"


def intrinsic_put(p: MarketParams) -> float:
    """Lower bound max(K - S, K*e^{-r*tau} - S*e^{-q*tau}, 0) for a put.

    The second term is the European parity bound, which can exceed the
    payoff when rates are negative.
    """
    if p.kind != "put":
        raise ValueError("intrinsic_put expects put parameters")
    return max(
        p.strike - p.s0,
        p.strike * math.exp(-p.rate * p.tau) - p.s0 * math.exp(-p.div_yield * p.tau),
        0.0,
    )


def _intrinsic(p: MarketParams) -> float:
    if p.kind == "put":
        return intrinsic_put(p)
    # Mirror bound for calls (equals the symmetric put's intrinsic value).
    return max(
        p.s0 - p.strike,
        p.s0 * math.exp(-p.div_yield * p.tau) - p.strike * math.exp(-p.rate * p.tau),
        0.0,
    )


def squash(price: float, p: MarketParams) -> float:
    """Log time value log(price - intrinsic) of a put.

    Raises ``NonPositiveTimeValue`` when the price does not exceed the
    intrinsic bound; such samples sit in or at the stopping region and
    must be discarded rather than clamped.
    """
    time_value = price - intrinsic_put(p)
    if time_value <= 0.0:
        raise NonPositiveTimeValue(
            f"price {price:.6g} does not exceed intrinsic value {intrinsic_put(p):.6g}"
        )
    return math.log(time_value)


def classify(
    p: MarketParams,
    price: float,
    vega: float,
    eps1: float = EPS_PAYOFF,
    eps2: float = EPS_VEGA,
) -> RegionLabel:
    """Label a priced sample as holding or stopping.

    OTM samples (payoff zero; ATM counts as OTM) are holding by
    definition.  ITM samples are holding only when both
    |price - payoff| > eps1 and vega > eps2 hold.
    """
    itm = p.s0 < p.strike if p.kind == "put" else p.s0 > p.strike
    payoff = float(p.payoff())
    if itm and (abs(price - payoff) <= eps1 or vega <= eps2):
        return RegionLabel(label="stopping", time_value=price - _intrinsic(p), log_time_value=None)
    time_value = price - _intrinsic(p)
    log_tv = math.log(time_value) if time_value > 0.0 else None
    return RegionLabel(label="holding", time_value=time_value, log_time_value=log_tv)
