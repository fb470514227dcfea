"""Implied volatility and dividend extraction from American quote pairs.

Two routes recover (sigma*, q*) from a call/put quote pair sharing
strike, maturity, rate and spot: a Differential Evolution search against
the dual-head network (one batched forward pass evaluates a whole
population), or the same search against the cosine-expansion pricer as
the network-free reference.  When the dividend yield is known, the
inverse-map network predicts sigma* in a single forward pass from the
squashed put quote; inputs in the stopping region are refused since the
price carries no volatility information there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cos_engine import CosConfig, MarketParams, call_via_symmetry, price_american
from .errors import StoppingRegionInput
from .neuralnet import Mlp, forward
from .region import EPS_PAYOFF, intrinsic_put

__all__ = [
    "DeConfig",
    "CalibrationResult",
    "de_optimize",
    "cann_backward",
    "calibrate_direct",
    "implied_vol_predict",
    "SIGMA_BOUNDS",
    "DIV_BOUNDS",
]

# Search box for (sigma*, q*); the volatility floor keeps the pricer total.
SIGMA_BOUNDS = (1e-4, 1.0)
DIV_BOUNDS = (-0.08, 0.1)


@dataclass(frozen=True)
class DeConfig:
    """Differential Evolution controls (best1bin mutation).

    The differential weight is redrawn uniformly from ``dither`` each
    generation; convergence is declared when the population objective
    spread satisfies std <= tol * |mean|.
    """

    bounds: tuple[tuple[float, float], ...] = (SIGMA_BOUNDS, DIV_BOUNDS)
    population: int = 10
    strategy: str = "best1bin"
    dither: tuple[float, float] = (0.5, 1.0)
    crossover: float = 0.7
    tol: float = 0.01
    max_generations: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.population < 4:
            raise ValueError("best1bin needs a population of at least 4")
        if not 0.0 <= self.crossover <= 1.0:
            raise ValueError("crossover probability must lie in [0, 1]")
        if not 0.0 < self.dither[0] <= self.dither[1] <= 2.0:
            raise ValueError("dither bounds must lie in (0, 2] and be ordered")
        if self.strategy != "best1bin":
            raise ValueError(f"unsupported strategy {self.strategy!r}")
        for low, high in self.bounds:
            if not np.isfinite(low) or not np.isfinite(high) or low >= high:
                raise ValueError("bounds must be finite with low < high")


@dataclass(frozen=True)
class CalibrationResult:
    """Recovered parameter vector with search diagnostics.

    ``params`` is ordered like the configured bounds; for the quote
    calibration that is (sigma*, q*).
    """

    params: tuple[float, ...]
    objective: float
    n_evals: int
    generations: int
    converged: bool

    @property
    def sigma_star(self) -> float:
        return self.params[0]

    @property
    def q_star(self) -> float:
        return self.params[1]


def de_optimize(objective, cfg: DeConfig) -> CalibrationResult:
    """Minimize a batched objective over the configured box.

    ``objective`` maps a (m, d) candidate matrix to m loss values; every
    generation is evaluated through one such call, so network-backed
    objectives amortize to a single forward pass.  Mutants falling
    outside the box are clipped to it.  Deterministic for a given seed.
    """
    rng = np.random.default_rng(cfg.seed)
    lows = np.array([b[0] for b in cfg.bounds])
    highs = np.array([b[1] for b in cfg.bounds])
    npop, dim = cfg.population, len(cfg.bounds)

    # Stratified start: one candidate per slab along each axis.
    unit = np.empty((npop, dim))
    for j in range(dim):
        unit[:, j] = (rng.permutation(npop) + rng.random(npop)) / npop
    pop = lows + unit * (highs - lows)
    energies = np.asarray(objective(pop), dtype=float)
    n_evals = npop
    best = int(np.argmin(energies))

    converged = False
    generation = 0
    for generation in range(1, cfg.max_generations + 1):
        f = rng.uniform(*cfg.dither)
        trials = np.empty_like(pop)
        for i in range(npop):
            choices = rng.choice(npop - 1, size=2, replace=False)
            r1, r2 = (c if c < i else c + 1 for c in choices)
            mutant = pop[best] + f * (pop[r1] - pop[r2])
            cross = rng.random(dim) < cfg.crossover
            cross[rng.integers(dim)] = True
            trials[i] = np.clip(np.where(cross, mutant, pop[i]), lows, highs)
        trial_energies = np.asarray(objective(trials), dtype=float)
        n_evals += npop
        improved = trial_energies <= energies
        pop[improved] = trials[improved]
        energies[improved] = trial_energies[improved]
        best = int(np.argmin(energies))
        if np.std(energies) <= cfg.tol * abs(np.mean(energies)):
            converged = True
            break

    return CalibrationResult(
        params=tuple(pop[best]),
        objective=float(energies[best]),
        n_evals=n_evals,
        generations=generation,
        converged=converged,
    )


def _scaled_quotes(quote: tuple[float, float], fixed: tuple[float, float, float, float]):
    """Reduce a quote pair to the unit-spot convention of the networks.

    Prices are homogeneous of degree one in (spot, strike), so quotes at
    spot S map to quotes at spot 1 with strike K/S after dividing by S.
    """
    call_mkt, put_mkt = quote
    strike, tau, rate, s0 = fixed
    if s0 <= 0.0 or strike <= 0.0:
        raise ValueError("spot and strike must be positive")
    return call_mkt / s0, put_mkt / s0, strike / s0, tau, rate


def cann_backward(
    net: Mlp,
    quote: tuple[float, float],
    fixed: tuple[float, float, float, float],
    cfg: DeConfig = DeConfig(),
) -> CalibrationResult:
    """Recover (sigma*, q*) matching a (call, put) quote via the network.

    ``fixed`` is (strike, tau, rate, spot).  The loss per candidate is
    (C_model - C_mkt)^2 + (P_model - P_mkt)^2 with both model prices read
    from one dual-head forward pass; the population is evaluated as a
    single batch.
    """
    if net.n_heads != 2:
        raise ValueError("cann_backward needs the dual-head (put, call) network")
    call_mkt, put_mkt, strike_rel, tau, rate = _scaled_quotes(quote, fixed)
    s0 = fixed[3]

    def objective(candidates: np.ndarray) -> np.ndarray:
        x = np.empty((candidates.shape[0], 5))
        x[:, 0] = strike_rel
        x[:, 1] = tau
        x[:, 2] = rate
        x[:, 3] = candidates[:, 1]  # q*
        x[:, 4] = candidates[:, 0]  # sigma*
        prices = forward(net, x)
        return (prices[:, 1] - call_mkt) ** 2 + (prices[:, 0] - put_mkt) ** 2

    result = de_optimize(objective, cfg)
    # Objective values live in unit-spot terms; restore the quote scale.
    return CalibrationResult(
        params=result.params,
        objective=result.objective * s0 * s0,
        n_evals=result.n_evals,
        generations=result.generations,
        converged=result.converged,
    )


def calibrate_direct(
    quote: tuple[float, float],
    fixed: tuple[float, float, float, float],
    cfg: DeConfig = DeConfig(),
    cos_cfg: CosConfig = CosConfig(),
) -> CalibrationResult:
    """Same search with the cosine-expansion pricer as the objective."""
    call_mkt, put_mkt = quote
    strike, tau, rate, s0 = fixed

    def objective(candidates: np.ndarray) -> np.ndarray:
        out = np.empty(candidates.shape[0])
        for i, (sigma, q) in enumerate(candidates):
            p_put = MarketParams(s0, strike, tau, rate, q, sigma, kind="put")
            p_call = MarketParams(s0, strike, tau, rate, q, sigma, kind="call")
            put_model = price_american(p_put, cos_cfg, greeks=False).price
            call_model = price_american(p_call, cos_cfg, greeks=False).price
            out[i] = (call_model - call_mkt) ** 2 + (put_model - put_mkt) ** 2
        return out

    return de_optimize(objective, cfg)


def implied_vol_predict(
    net: Mlp,
    quote: float,
    fixed: tuple[float, float, float, float, float],
    kind: str = "put",
    eps1: float = EPS_PAYOFF,
) -> float:
    """Implied volatility from one quote via the trained inverse map.

    ``fixed`` is (strike, tau, rate, div_yield, spot).  Call quotes are
    first rewritten as put quotes through put-call symmetry; quotes are
    then reduced to the unit-spot convention.  Raises
    ``StoppingRegionInput`` when the quote does not exceed the payoff by
    more than ``eps1`` (ITM) or carries no positive time value, since the
    inverse map is only defined on the holding region.
    """
    if net.n_heads != 1:
        raise ValueError("implied_vol_predict needs the single-head inverse network")
    strike, tau, rate, div_yield, s0 = fixed
    if kind == "call":
        # Same price viewed as a put: swap spot/strike and rate/dividend.
        sym = call_via_symmetry(MarketParams(s0, strike, tau, rate, div_yield, 0.5, kind="call"))
        strike, rate, div_yield, s0 = sym.strike, sym.rate, sym.div_yield, sym.s0
    elif kind != "put":
        raise ValueError(f"kind must be 'call' or 'put', got {kind!r}")

    quote_rel = quote / s0
    strike_rel = strike / s0
    # Region screen available from the quote alone (Vega needs sigma).
    payoff = max(strike_rel - 1.0, 0.0)
    if payoff > 0.0 and quote_rel - payoff <= eps1:
        raise StoppingRegionInput(
            f"quote {quote!r} does not exceed the exercise value by more than {eps1!r}"
        )
    bounds_probe = MarketParams(1.0, strike_rel, tau, rate, div_yield, 0.5, kind="put")
    time_value = quote_rel - intrinsic_put(bounds_probe)
    if time_value <= 0.0:
        raise StoppingRegionInput(
            f"quote {quote!r} does not exceed the intrinsic value; no unique volatility exists"
        )
    x = np.array([np.log(time_value), strike_rel, rate, div_yield, tau])
    return float(forward(net, x)[0])
