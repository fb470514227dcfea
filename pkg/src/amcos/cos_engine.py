"""Bermudan and American Black-Scholes pricing by Fourier-cosine expansion.

The pricer works in log-moneyness x = log(S/K) on a truncated interval
[a, b].  A Bermudan contract is solved by backward induction on its
cosine coefficients; at every exercise date the coefficient vector is
split at the early-exercise points (zero, one or two of them) into
analytic payoff integrals on the stopping segments and FFT-accelerated
continuation integrals on the holding segments.  The American value is
the 4-point Richardson extrapolation of a ladder of Bermudan values
with geometrically increasing exercise counts.

Vega is propagated through the same recursion in forward mode by
differentiating the characteristic function, so it shares no code path
with finite differences.  Delta falls out of the final evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NewtonDiverged

__all__ = [
    "MarketParams",
    "CosConfig",
    "ExercisePoints",
    "PriceResult",
    "char_fn",
    "truncation_interval",
    "payoff_coeffs",
    "continuation_coeffs",
    "continuation_value",
    "find_exercise_points",
    "price_bermudan",
    "price_american",
    "call_via_symmetry",
    "vega_cos",
]

RICHARDSON_WEIGHTS = np.array([-1.0, 14.0, -56.0, 64.0]) / 21.0

# Segments narrower than this fraction of [a, b] are dropped during the
# coefficient split; they carry no integral mass and only numerical noise.
_MIN_SEGMENT = 1e-13


@dataclass(frozen=True)
class MarketParams:
    """State of one Black-Scholes pricing problem.

    Rates are continuously compounded and annualized; ``rate`` and
    ``div_yield`` may both be negative.  ``kind`` selects the payoff sign
    (+1 for calls, -1 for puts).
    """

    s0: float
    strike: float
    tau: float
    rate: float
    div_yield: float
    sigma: float
    kind: str = "put"

    def __post_init__(self):
        if self.s0 <= 0.0 or self.strike <= 0.0:
            raise ValueError("spot and strike must be positive")
        if self.tau <= 0.0:
            raise ValueError("time to maturity must be positive")
        if self.sigma <= 0.0:
            raise ValueError("volatility must be positive")
        if self.kind not in ("call", "put"):
            raise ValueError(f"kind must be 'call' or 'put', got {self.kind!r}")

    @property
    def alpha(self) -> float:
        """Payoff sign: +1 for a call, -1 for a put."""
        return 1.0 if self.kind == "call" else -1.0

    def payoff(self, s: float | np.ndarray | None = None):
        """Exercise value max(alpha * (S - K), 0) at spot ``s`` (default s0)."""
        s = self.s0 if s is None else s
        return np.maximum(self.alpha * (s - self.strike), 0.0)


@dataclass(frozen=True)
class CosConfig:
    """Numerical controls of the cosine-expansion engine.

    ``n_terms`` must be a power of two of at least 16 when ``fft_mode`` is
    ``"fft"``.  ``richardson_level`` sets the Bermudan ladder to exercise
    counts 2**l .. 2**(l+3).  ``fft_mode="direct"`` switches the
    continuation-coefficient product to the O(N^2) summation, which serves
    as the oracle for the FFT path.
    """

    n_terms: int = 512
    trunc_width: float = 10.0
    richardson_level: int = 2
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    scan_points: int = 201
    fft_mode: str = "fft"

    def __post_init__(self):
        if self.n_terms < 16:
            raise ValueError("n_terms must be at least 16")
        if self.fft_mode not in ("fft", "direct"):
            raise ValueError("fft_mode must be 'fft' or 'direct'")
        if self.fft_mode == "fft" and self.n_terms & (self.n_terms - 1):
            raise ValueError("n_terms must be a power of two in fft mode")
        if self.trunc_width <= 0.0:
            raise ValueError("trunc_width must be positive")
        if self.richardson_level < 0:
            raise ValueError("richardson_level must be non-negative")
        if self.scan_points < 3:
            raise ValueError("scan_points must be at least 3")
        if self.newton_tol <= 0.0 or self.newton_max_iter < 1:
            raise ValueError("invalid Newton settings")


@dataclass(frozen=True)
class ExercisePoints:
    """Early-exercise points (log-moneyness) found at one time step."""

    points: tuple[float, ...]

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.points, self.points[1:])):
            raise ValueError("exercise points must be strictly increasing")

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PriceResult:
    """Price and Greeks of one contract.

    ``bermudan_ladder`` holds the Bermudan values entering the Richardson
    extrapolation (a single value for a plain Bermudan solve).  When the
    spot sits in the early-exercise region at valuation time the price is
    the payoff, Vega is exactly zero and ``in_stopping_region`` is set, so
    downstream inversion can reject the sample.  ``vega``/``delta`` are
    ``None`` when Greeks were not requested.
    """

    price: float
    vega: float | None
    delta: float | None
    bermudan_ladder: tuple[float, ...]
    in_stopping_region: bool = False


def char_fn(u, dt: float, p: MarketParams):
    """Characteristic function of the log-price increment over ``dt``.

    exp(i*u*dt*(r - q - sigma^2/2) - sigma^2*u^2*dt/2); its modulus is
    exp(-sigma^2*u^2*dt/2) <= 1.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    drift = p.rate - p.div_yield - 0.5 * p.sigma**2
    out = np.exp((1j * u * drift - 0.5 * p.sigma**2 * u * u) * dt)
    return out if out.ndim else complex(out)


def _dchar_dsigma(u: np.ndarray, dt: float, p: MarketParams) -> np.ndarray:
    """d/dsigma of char_fn at fixed u, dt."""
    return -p.sigma * dt * u * (1j + u) * char_fn(u, dt, p)


def truncation_interval(p: MarketParams, c: CosConfig, horizon: float) -> tuple[float, float]:
    """Truncation interval [a, b] for log-moneyness over ``horizon`` years.

    Centered at x0 + first cumulant and extending ``trunc_width`` times the
    square root of the second cumulant on each side (the fourth cumulant
    vanishes under these dynamics).
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    x0 = math.log(p.s0 / p.strike)
    xi1 = (p.rate - p.div_yield - 0.5 * p.sigma**2) * horizon
    xi2 = 0.5 * p.sigma**2 * horizon
    half = c.trunc_width * math.sqrt(xi2)
    center = x0 + xi1
    return center - half, center + half


def call_via_symmetry(p: MarketParams) -> MarketParams:
    """Put parameterization whose value equals the given call's.

    Swaps spot with strike and the interest rate with the dividend yield.
    """
    if p.kind != "call":
        raise ValueError("call_via_symmetry expects call parameters")
    return MarketParams(
        s0=p.strike,
        strike=p.s0,
        tau=p.tau,
        rate=p.div_yield,
        div_yield=p.rate,
        sigma=p.sigma,
        kind="put",
    )


def _chi_psi(x1: float, x2: float, a: float, b: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cosine integrals of exp(x) (chi) and 1 (psi) over [x1, x2]."""
    omega = np.arange(n) * (np.pi / (b - a))
    t1 = omega * (x1 - a)
    t2 = omega * (x2 - a)
    e1 = math.exp(x1)
    e2 = math.exp(x2)
    s1, s2 = np.sin(t1), np.sin(t2)
    c1, c2 = np.cos(t1), np.cos(t2)
    chi = (e2 * (c2 + omega * s2) - e1 * (c1 + omega * s1)) / (1.0 + omega * omega)
    psi = np.empty(n)
    psi[0] = x2 - x1
    psi[1:] = (s2[1:] - s1[1:]) / omega[1:]
    return chi, psi


def payoff_coeffs(x1: float, x2: float, grid: tuple[float, float, int], p: MarketParams) -> np.ndarray:
    """Analytic cosine coefficients of the payoff over [x1, x2].

    The integrand is max(alpha*K*(e^x - 1), 0); the interval is clipped
    internally to the sub-range where it is non-zero, so callers may pass
    any [x1, x2] within the grid.
    """
    a, b, n = grid
    if x1 >= x2:
        raise ValueError("payoff_coeffs requires x1 < x2")
    if p.kind == "put":
        lo, hi = x1, min(x2, 0.0)
    else:
        lo, hi = max(x1, 0.0), x2
    if lo >= hi:
        return np.zeros(n)
    chi, psi = _chi_psi(lo, hi, a, b, n)
    return (2.0 / (b - a)) * p.strike * p.alpha * (chi - psi)


def _unit_powers(theta: float, count: int) -> np.ndarray:
    """e^{i*theta*d} for d = 1..count, by cumulative products.

    Rounding drift is O(count * eps), orders of magnitude below the price
    tolerances; hot loops use this instead of a full complex exp.
    """
    out = np.full(count, complex(math.cos(theta), math.sin(theta)))
    np.cumprod(out, out=out)
    return out


def _m_values(t1: float, t2: float, n: int) -> np.ndarray:
    """m_d = (e^{i*pi*d*t2} - e^{i*pi*d*t1})/d for d = -(n-1)..(2n-2).

    m_0 = i*pi*(t2 - t1); the negative side follows from m_{-d} = -conj(m_d).
    Indexing into the returned array is offset by n-1.
    """
    d = np.arange(1, 2 * n - 1)
    m_pos = (_unit_powers(np.pi * t2, 2 * n - 2) - _unit_powers(np.pi * t1, 2 * n - 2)) / d
    out = np.empty(3 * n - 2, dtype=complex)
    out[n - 1] = 1j * np.pi * (t2 - t1)
    out[n:] = m_pos
    out[n - 2 :: -1] = -np.conj(m_pos[: n - 1])
    return out


def _hkj_apply(vectors: np.ndarray, x1: float, x2: float, a: float, b: float, fft_mode: str) -> np.ndarray:
    """Kernel products (-i/pi) * (Ms + Mc) @ v for each row v of ``vectors``.

    Ms[k, j] = m_{j-k} is Toeplitz and Mc[k, j] = m_{j+k} is Hankel.  The
    FFT path embeds both parts in 2n-circulants shared across rows; the
    direct path materializes the matrix and serves as the oracle.
    """
    vectors = np.atleast_2d(vectors)
    n = vectors.shape[1]
    t1 = (x1 - a) / (b - a)
    t2 = (x2 - a) / (b - a)
    m = _m_values(t1, t2, n)
    off = n - 1

    if fft_mode == "direct":
        j = np.arange(n)
        k = j[:, None]
        kernel = m[j - k + off] + m[j + k + off]
        return (-1j / np.pi) * (vectors @ kernel.T)

    # Toeplitz Ms: first column m_{-k}, first row m_j.  Applying the Hankel
    # Mc to v equals applying the Toeplitz with first column m_{n-1+k} and
    # first row m_{n-1-i} to the reversed vector.
    circ_s = np.concatenate([m[off::-1], [0.0], m[off + n - 1 : off : -1]])
    circ_c = np.concatenate([m[off + n - 1 :], [0.0], m[off : off + n - 1]])
    spectra = np.fft.fft(np.vstack([circ_s, circ_c]), axis=1)

    rows = vectors.shape[0]
    padded = np.zeros((2 * rows, 2 * n), dtype=complex)
    padded[0::2, :n] = vectors
    padded[1::2, :n] = vectors[:, ::-1]
    transformed = np.fft.fft(padded, axis=1)
    transformed[0::2] *= spectra[0]
    transformed[1::2] *= spectra[1]
    prods = np.fft.ifft(transformed, axis=1)[:, :n]
    return (-1j / np.pi) * (prods[0::2] + prods[1::2])


def _hkj_matvec(u: np.ndarray, x1: float, x2: float, a: float, b: float, fft_mode: str) -> np.ndarray:
    """Single-vector convenience wrapper for :func:`_hkj_apply`."""
    return _hkj_apply(u[None, :], x1, x2, a, b, fft_mode)[0]


def continuation_coeffs(
    x1: float,
    x2: float,
    vk_next: np.ndarray,
    dt: float,
    p: MarketParams,
    c: CosConfig,
    grid: tuple[float, float, int],
) -> np.ndarray:
    """Cosine coefficients of the continuation value over [x1, x2].

    e^{-r*dt} * sum_j' Re(phi_j * V_j * H_{k,j}(x1, x2)), evaluated in
    O(N log N) via the Toeplitz/Hankel split of H (or O(N^2) directly when
    ``c.fft_mode == "direct"``).
    """
    a, b, n = grid
    vk_next = np.asarray(vk_next, dtype=float)
    if vk_next.shape != (n,):
        raise ValueError(f"vk_next must have length {n}")
    if x1 >= x2:
        raise ValueError("continuation_coeffs requires x1 < x2")
    omega = np.arange(n) * (np.pi / (b - a))
    u = char_fn(omega, dt, p) * vk_next
    u[0] *= 0.5
    return math.exp(-p.rate * dt) * _hkj_matvec(u, x1, x2, a, b, c.fft_mode).real


class _Engine:
    """Per-contract workspace: grid, scan matrices and payoff samples.

    Shared by the four ladder entries of one American solve; all state is
    read-only after construction, so instances are safe to use from
    parallel workers as long as each worker owns its own engine.

    Exercise points satisfy c(x*) = h(x*) > 0, so the root scan covers
    only the part of [a, b] where the payoff is positive; outside it the
    series value of c oscillates around zero at truncation-noise level and
    would produce phantom brackets.
    """

    def __init__(self, p: MarketParams, cfg: CosConfig):
        self.p = p
        self.cfg = cfg
        self.a, self.b = truncation_interval(p, cfg, p.tau)
        self.n = cfg.n_terms
        self.grid = (self.a, self.b, self.n)
        self.omega = np.arange(self.n) * (np.pi / (self.b - self.a))
        self.x0 = math.log(p.s0 / p.strike)
        if p.kind == "put":
            scan_lo, scan_hi = self.a, min(self.b, 0.0)
        else:
            scan_lo, scan_hi = max(self.a, 0.0), self.b
        self.scan_active = scan_lo < scan_hi
        if self.scan_active:
            self.x_scan = np.linspace(scan_lo, scan_hi, cfg.scan_points)
            z = np.exp(1j * np.pi * (self.x_scan - self.a) / (self.b - self.a))
            self.exp_scan = np.empty((cfg.scan_points, self.n), dtype=complex)
            self.exp_scan[:, 0] = 1.0
            np.cumprod(
                np.broadcast_to(z[:, None], (cfg.scan_points, self.n - 1)),
                axis=1,
                out=self.exp_scan[:, 1:],
            )
            self.h_scan = p.strike * np.maximum(p.alpha * (np.exp(self.x_scan) - 1.0), 0.0)
        self.exp_x0 = np.exp(1j * self.omega * (self.x0 - self.a))
        self.payoff_full = payoff_coeffs(self.a, self.b, self.grid, p)

    # -- pointwise evaluation -------------------------------------------------

    def _h(self, x: float) -> float:
        return self.p.strike * max(self.p.alpha * (math.exp(x) - 1.0), 0.0)

    def _h_prime(self, x: float) -> float:
        active = x < 0.0 if self.p.kind == "put" else x > 0.0
        return self.p.alpha * self.p.strike * math.exp(x) if active else 0.0

    def _basis(self, x: float) -> np.ndarray:
        """e^{i*omega_k*(x-a)} for all k."""
        out = np.empty(self.n, dtype=complex)
        out[0] = 1.0
        out[1:] = _unit_powers(np.pi * (x - self.a) / (self.b - self.a), self.n - 1)
        return out

    def _c_value(self, x: float, y: np.ndarray, disc: float) -> float:
        return disc * (self._basis(x) @ y).real

    def _c_prime(self, x: float, y: np.ndarray, disc: float) -> float:
        return disc * ((self._basis(x) * (1j * self.omega)) @ y).real

    # -- exercise points ------------------------------------------------------

    def _polish_root(self, x_lo: float, x_hi: float, y: np.ndarray, disc: float) -> float:
        """Newton on g(x) = c(x) - h(x) inside a bracketing cell, with
        bisection as the fallback."""
        tol = self.cfg.newton_tol
        g = lambda x: self._c_value(x, y, disc) - self._h(x)
        x = 0.5 * (x_lo + x_hi)
        for _ in range(self.cfg.newton_max_iter):
            gx = g(x)
            if abs(gx) <= tol:
                return x
            gp = self._c_prime(x, y, disc) - self._h_prime(x)
            if gp == 0.0:
                break
            step = x - gx / gp
            if not x_lo <= step <= x_hi:
                break
            x = step
        # Bisection: the cell brackets a sign change by construction.
        lo, hi = x_lo, x_hi
        g_lo = g(lo)
        if abs(g_lo) <= tol:
            return lo
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            g_mid = g(mid)
            if abs(g_mid) <= tol:
                return mid
            if (g_lo < 0.0) == (g_mid < 0.0):
                lo, g_lo = mid, g_mid
            else:
                hi = mid
            if hi - lo <= 1e-16 * max(1.0, abs(lo)):
                break
        g_final = g(0.5 * (lo + hi))
        if abs(g_final) > tol:
            raise NewtonDiverged(
                f"no root to |g| <= {tol:g} in [{x_lo:.6g}, {x_hi:.6g}] (|g| = {abs(g_final):.3g})"
            )
        return 0.5 * (lo + hi)

    def exercise_points(self, y: np.ndarray, disc: float) -> list[float]:
        """Roots of c(x) - h(x) bracketed on the scan grid and polished."""
        if not self.scan_active:
            return []
        g_scan = disc * (self.exp_scan @ y).real - self.h_scan
        sign = np.sign(g_scan)
        roots = [self.x_scan[i] for i in np.nonzero(sign == 0.0)[0]]
        for i in np.nonzero(sign[:-1] * sign[1:] < 0.0)[0]:
            roots.append(self._polish_root(self.x_scan[i], self.x_scan[i + 1], y, disc))
        deduped: list[float] = []
        for r in sorted(roots):
            if not deduped or r - deduped[-1] > _MIN_SEGMENT * (self.b - self.a):
                deduped.append(r)
        return deduped

    # -- backward induction ---------------------------------------------------

    def solve_bermudan(self, m_dates: int, want_vega: bool) -> tuple[float, float | None, float]:
        """One Bermudan solve; returns (price, vega, delta) at t0."""
        p, cfg = self.p, self.cfg
        dt = p.tau / m_dates
        disc = math.exp(-p.rate * dt)
        phi = char_fn(self.omega, dt, p)
        dphi = _dchar_dsigma(self.omega, dt, p) if want_vega else None

        vk = self.payoff_full
        wk = np.zeros(self.n) if want_vega else None

        for _ in range(m_dates - 1):
            y = phi * vk
            y[0] *= 0.5
            if want_vega:
                y_sens = dphi * vk + phi * wk
                y_sens[0] *= 0.5
                stack = np.vstack([y, y_sens])
            else:
                stack = y[None, :]
            roots = self.exercise_points(y, disc)
            edges = [self.a, *roots, self.b]
            new_vk = np.zeros(self.n)
            new_wk = np.zeros(self.n) if want_vega else None
            for lo, hi in zip(edges[:-1], edges[1:]):
                if hi - lo <= _MIN_SEGMENT * (self.b - self.a):
                    continue
                mid = 0.5 * (lo + hi)
                h_mid = self._h(mid)
                # A segment can only be stopping where the payoff is
                # positive; where it vanishes, c(mid) is pure series noise.
                if h_mid > 0.0 and h_mid >= self._c_value(mid, y, disc):
                    new_vk += payoff_coeffs(lo, hi, self.grid, p)
                    # payoff coefficients carry no sigma dependence
                else:
                    prods = disc * _hkj_apply(stack, lo, hi, self.a, self.b, cfg.fft_mode).real
                    new_vk += prods[0]
                    if want_vega:
                        new_wk += prods[1]
            vk = new_vk
            wk = new_wk

        y = phi * vk
        y[0] *= 0.5
        price = disc * (self.exp_x0 @ y).real
        delta = disc * (self.exp_x0 @ (y * (1j * self.omega))).real / p.s0
        vega = None
        if want_vega:
            y_sens = dphi * vk + phi * wk
            y_sens[0] *= 0.5
            vega = disc * (self.exp_x0 @ y_sens).real
        return price, vega, delta


def continuation_value(x, vk: np.ndarray, dt: float, p: MarketParams, grid: tuple[float, float, int]):
    """Continuation value c(x) from next-date coefficients ``vk``.

    e^{-r*dt} * sum_k' Re(phi_k * e^{i*k*pi*(x-a)/(b-a)}) * V_k; accepts a
    scalar or an array of log-moneyness points.
    """
    a, b, n = grid
    vk = np.asarray(vk, dtype=float)
    if vk.shape != (n,):
        raise ValueError(f"vk must have length {n}")
    omega = np.arange(n) * (np.pi / (b - a))
    y = char_fn(omega, dt, p) * vk
    y[0] *= 0.5
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    basis = np.exp(1j * np.outer(x_arr - a, omega))
    out = math.exp(-p.rate * dt) * (basis @ y).real
    return out if np.ndim(x) else float(out[0])


def find_exercise_points(
    vk: np.ndarray,
    dt: float,
    p: MarketParams,
    grid: tuple[float, float, int],
    c: CosConfig,
) -> ExercisePoints:
    """Early-exercise points at the current step.

    Scans c(x) - h(x) on a uniform grid, brackets every sign change and
    polishes each bracket with Newton (bisection fallback).
    """
    a, b, n = grid
    engine = _Engine(p, c)
    if abs(engine.a - a) > 1e-12 or abs(engine.b - b) > 1e-12 or engine.n != n:
        raise ValueError("grid does not match the parameters and configuration")
    y = char_fn(engine.omega, dt, p) * np.asarray(vk, dtype=float)
    y[0] *= 0.5
    disc = math.exp(-p.rate * dt)
    return ExercisePoints(points=tuple(engine.exercise_points(y, disc)))


def price_bermudan(p: MarketParams, m_dates: int, c: CosConfig, greeks: bool = True) -> PriceResult:
    """Bermudan value with ``m_dates`` equally spaced exercise dates."""
    if m_dates < 1:
        raise ValueError("m_dates must be at least 1")
    engine = _Engine(p, c)
    price, vega, delta = engine.solve_bermudan(m_dates, want_vega=greeks)
    return PriceResult(
        price=price,
        vega=vega,
        delta=delta if greeks else None,
        bermudan_ladder=(price,),
    )


def price_american(p: MarketParams, c: CosConfig, greeks: bool = True) -> PriceResult:
    """American value by Richardson extrapolation of the Bermudan ladder.

    Applies weights (64, -56, 14, -1)/21 to Bermudan values with
    2**l .. 2**(l+3) exercise dates.  If exercising immediately dominates
    the extrapolated value the contract sits in the stopping region: the
    payoff is returned with Vega 0 and |Delta| 1, and the result is
    flagged.
    """
    engine = _Engine(p, c)
    dates = [2 ** (c.richardson_level + i) for i in range(4)]
    solved = [engine.solve_bermudan(m, want_vega=greeks) for m in dates]
    ladder = tuple(s[0] for s in solved)
    price = float(RICHARDSON_WEIGHTS @ np.asarray(ladder))
    payoff0 = float(p.payoff())
    if payoff0 > 0.0 and payoff0 >= price:
        return PriceResult(
            price=payoff0,
            vega=0.0 if greeks else None,
            delta=p.alpha if greeks else None,
            bermudan_ladder=ladder,
            in_stopping_region=True,
        )
    vega = delta = None
    if greeks:
        vega = float(RICHARDSON_WEIGHTS @ np.array([s[1] for s in solved]))
        delta = float(RICHARDSON_WEIGHTS @ np.array([s[2] for s in solved]))
    return PriceResult(
        price=max(price, payoff0),
        vega=vega,
        delta=delta,
        bermudan_ladder=ladder,
    )


def american_value(p: MarketParams, c: CosConfig) -> float:
    """American price alone, skipping Greek propagation (calibration path)."""
    return price_american(p, c, greeks=False).price


def vega_cos(p: MarketParams, c: CosConfig) -> float:
    """American Vega from the differentiated characteristic function.

    Zero (exactly) when the spot is in the early-exercise region.
    """
    return price_american(p, c, greeks=True).vega
