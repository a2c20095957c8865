"""Risk-neutral pricing of index options.

The fitted GARCH-NIG law of the log-returns is moved to a risk-neutral
measure by a per-step Esscher transform, paths are simulated under that
measure, and calls and puts on the index are priced by discounted Monte
Carlo averages. Black-Scholes implied volatilities are extracted per cell.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
import pandas as pd
from scipy import optimize, special

from .dist import GhParams, gh_log_mgf
from .errors import DomainTooNarrow, EmptyPaths, InvalidParams, NoRoot, OutOfBounds
from .garch import GarchNigModel
from .rng import stream

MAX_RESAMPLES = 10
_EDGE = 1e-12


# ---------------------------------------------------------------------------
# Esscher parameter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EsscherSolution:
    theta: float
    bracket: tuple[float, float]
    residual: float  # |MGF(1+theta) / (MGF(theta) e^r) - 1|


def esscher_condition(theta, law: GhParams, riskfree: float):
    """``log MGF(1+theta) - log MGF(theta) - r``."""
    theta = np.asarray(theta, dtype=float)
    return gh_log_mgf(theta + 1.0, law) - gh_log_mgf(theta, law) - riskfree


def solve_esscher(innovation: GhParams, variance: float = 1.0, riskfree: float = 0.0,
                  drift: float = 0.0) -> EsscherSolution:
    """Esscher parameter for the one-step return ``drift + sqrt(variance) * eps``.

    Solves ``MGF(1+theta) = MGF(theta) e^r`` inside the open set where both
    MGFs are finite. Raises :class:`DomainTooNarrow` when that set is empty
    and :class:`NoRoot` when the condition does not change sign on it.
    """
    if not variance > 0:
        raise InvalidParams("variance must be positive")
    law = innovation.scaled(math.sqrt(variance), drift)
    lo, hi = law.mgf_domain()
    hi -= 1.0
    if not hi > lo:
        raise DomainTooNarrow(f"MGF domain {law.mgf_domain()} is shorter than 1")
    pad = _EDGE * max(1.0, abs(lo), abs(hi))
    a, b = lo + pad, hi - pad
    if not b > a:
        raise DomainTooNarrow("MGF domain is too short to bracket a root")
    g = lambda t: float(esscher_condition(t, law, riskfree))  # noqa: E731
    ga, gb = g(a), g(b)
    if ga > 0 or gb < 0:
        raise NoRoot(f"Esscher condition has no sign change on ({a}, {b}): g = {ga}, {gb}")
    theta = optimize.brentq(g, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return EsscherSolution(theta, (a, b), abs(math.expm1(g(theta))))


# ---------------------------------------------------------------------------
# Risk-neutral paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PricingConfig:
    n_paths: int = 10_000
    horizon: int = 24
    strikes: tuple = (0.0,)
    riskfree: float = 0.0
    seed: int = 0
    loss_floor: float = 1.0
    legacy_recursion: bool = False
    underlying: str = "ndi"  # "ndi" or "level"

    def __post_init__(self):
        if self.n_paths < 1 or self.horizon < 1:
            raise InvalidParams("n_paths and horizon must be >= 1")
        if not all(math.isfinite(k) for k in self.strikes) or not self.strikes:
            raise InvalidParams("strikes must be a nonempty list of finite numbers")
        if self.underlying not in ("ndi", "level"):
            raise InvalidParams(f"unknown underlying {self.underlying!r}")
        object.__setattr__(self, "strikes", tuple(float(k) for k in self.strikes))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strikes"] = list(self.strikes)
        return d


@numba.njit(cache=True)
def _esscher_x(alpha_s, beta_s, delta_s, mu_s, rf):
    """Root in ``x = beta_s + theta`` of
    ``mu_s - rf + delta_s (2x + 1) / (s(x) + s(x+1))``, ``s(x) = sqrt(alpha_s^2 - x^2)``.

    Returns (x, status) with status 0 ok, 1 domain too narrow, 2 no root.
    """
    lo = -alpha_s
    hi = alpha_s - 1.0
    if not hi > lo:
        return 0.0, 1
    pad = 1e-12 * max(1.0, alpha_s)
    lo += pad
    hi -= pad
    if not hi > lo:
        return 0.0, 1
    c = mu_s - rf

    def g(x):
        s0 = math.sqrt((alpha_s - x) * (alpha_s + x))
        s1 = math.sqrt((alpha_s - x - 1.0) * (alpha_s + x + 1.0))
        return c + delta_s * (2.0 * x + 1.0) / (s0 + s1)

    glo = g(lo)
    ghi = g(hi)
    if glo > 0.0 or ghi < 0.0:
        return 0.0, 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        gm = g(mid)
        if gm == 0.0:
            return mid, 0
        if gm < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), 0


@numba.njit(cache=True)
def _q_paths(nrm, unif, zs, m, a, b, lam0, rf, h0, s0, ndi0, alpha, beta, delta, mu, legacy):
    n, T = zs.shape
    s = np.empty((n, T + 1))
    ndi = np.empty((n, T))
    h = np.empty((n, T + 1))
    theta = np.empty((n, T))
    status = np.zeros(n, dtype=np.int64)
    for i in range(n):
        ht = h0
        st = s0
        prev = ndi0
        s[i, 0] = st
        h[i, 0] = ht
        for t in range(T):
            if ht <= 0.0:
                # no volatility left: the return is the risk-free rate
                r = rf
                eps = 0.0
                theta[i, t] = 0.0
            else:
                sd = math.sqrt(ht)
                drift = rf + lam0 * sd - 0.5 * ht
                x, code = _esscher_x(alpha / sd, beta / sd, delta * sd, mu * sd + drift, rf)
                if code != 0:
                    status[i] = code
                    break
                theta[i, t] = x - beta / sd
                bt = sd * x  # tilted innovation beta
                gam = math.sqrt((alpha - bt) * (alpha + bt))
                mean_w = delta / gam
                shape_w = delta * delta
                y = nrm[i, t] * nrm[i, t]
                my = mean_w * y
                w = mean_w + mean_w * my / (2.0 * shape_w) - (mean_w / (2.0 * shape_w)) * math.sqrt(
                    4.0 * shape_w * my + my * my)
                w = max(w, 2.2250738585072014e-308)
                if unif[i, t] > mean_w / (mean_w + w):
                    w = mean_w * mean_w / w
                eps = mu + bt * w + math.sqrt(w) * zs[i, t]
                r = drift + sd * eps
            s_new = st * math.exp(r)
            if legacy:
                cur = r**10 + prev
            else:
                cur = s_new - st
            ndi[i, t] = cur
            prev = cur
            st = s_new
            s[i, t + 1] = st
            ht = m + a * ht + b * ht * eps * eps
            h[i, t + 1] = ht
    return s, ndi, h, theta, status


@dataclass
class PathSet:
    """Risk-neutral paths. ``s[:, 0]`` is the starting level and
    ``ndi[:, t-1]`` the index value at step ``t``."""

    s: np.ndarray
    ndi: np.ndarray
    variance: np.ndarray
    theta: np.ndarray
    riskfree: float
    resampled: int = 0
    failures: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.s.shape[0]

    @property
    def horizon(self) -> int:
        return self.ndi.shape[1]

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.s, self.ndi):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _draws(rng: np.random.Generator, T: int):
    return rng.standard_normal(T), rng.random(T), rng.standard_normal(T)


def _run(model: GarchNigModel, draws, cfg: PricingConfig, h0, s0, ndi0):
    nrm, unif, zs = (np.ascontiguousarray(np.stack(x)) for x in zip(*draws))
    p = model.innovation
    return _q_paths(nrm, unif, zs, model.m, model.a, model.b, model.lambda0, cfg.riskfree,
                    float(h0), float(s0), float(ndi0), p.alpha, p.beta, p.delta, p.mu,
                    cfg.legacy_recursion)


def simulate_q_paths(model: GarchNigModel, cfg: PricingConfig, s0: float | None = None,
                     h0: float | None = None, last_ndi: float = 0.0) -> PathSet:
    """Simulate ``cfg.n_paths`` paths of ``cfg.horizon`` steps under the
    Esscher measure.

    Path ``k`` draws from its own stream ``stream(seed, k)``, so results do
    not depend on how paths are batched. A path whose Esscher solve fails is
    redrawn from ``stream(seed, k, attempt)``; after ``MAX_RESAMPLES``
    attempts the run aborts. ``s0`` and ``h0`` default to the model's last
    level and one-step variance forecast; ``last_ndi`` seeds the literal
    recursion when ``cfg.legacy_recursion`` is set.
    """
    if model.innovation.lam != -0.5:
        raise InvalidParams("risk-neutral simulation is implemented for NIG innovations")
    s0 = model.last_level if s0 is None else s0
    h0 = model.forecast_variance if h0 is None else h0
    if s0 is None or h0 is None:
        raise InvalidParams("need a starting level and variance (fit the model or pass s0, h0)")
    T = cfg.horizon
    draws = [_draws(stream(cfg.seed, k), T) for k in range(cfg.n_paths)]
    s, ndi, h, theta, status = _run(model, draws, cfg, h0, s0, last_ndi)
    failures = {"domain_too_narrow": int(np.sum(status == 1)), "no_root": int(np.sum(status == 2))}
    resampled = 0
    bad = np.flatnonzero(status)
    for attempt in range(1, MAX_RESAMPLES + 1):
        if bad.size == 0:
            break
        resampled += bad.size
        redo = [_draws(stream(cfg.seed, int(k), attempt), T) for k in bad]
        s2, ndi2, h2, th2, st2 = _run(model, redo, cfg, h0, s0, last_ndi)
        s[bad], ndi[bad], h[bad], theta[bad] = s2, ndi2, h2, th2
        failures["domain_too_narrow"] += int(np.sum(st2 == 1))
        failures["no_root"] += int(np.sum(st2 == 2))
        bad = bad[st2 != 0]
    if bad.size:
        err = DomainTooNarrow if failures["domain_too_narrow"] else NoRoot
        raise err(f"{bad.size} paths still fail the Esscher solve after {MAX_RESAMPLES} resamples "
                  f"({failures})")
    return PathSet(s, ndi, h, theta, cfg.riskfree, resampled, failures)


# ---------------------------------------------------------------------------
# Prices
# ---------------------------------------------------------------------------


@dataclass
class OptionSurface:
    """Prices for maturities ``1..horizon`` (rows) and strikes (columns)."""

    maturities: np.ndarray
    strikes: np.ndarray
    call: np.ndarray
    put: np.ndarray
    se_call: np.ndarray
    se_put: np.ndarray
    riskfree: float
    n_paths: int
    underlying: str = "ndi"
    spot: float | None = None
    meta: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        T, K = np.meshgrid(self.maturities, self.strikes, indexing="ij")
        return pd.DataFrame({"t": 0, "T": T.ravel(), "K": K.ravel(), "call": self.call.ravel(),
                             "put": self.put.ravel(), "se_call": self.se_call.ravel(),
                             "se_put": self.se_put.ravel()})

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.10g")


def price_options(paths: PathSet, cfg: PricingConfig) -> OptionSurface:
    """Discounted Monte Carlo call and put prices for every maturity and
    strike, with standard errors ``discounted std / sqrt(N)``."""
    if paths.n_paths == 0 or paths.horizon == 0:
        raise EmptyPaths("no simulated paths to price")
    x = paths.ndi if cfg.underlying == "ndi" else paths.s[:, 1:]
    n, T = x.shape
    K = np.asarray(cfg.strikes, dtype=float)
    mats = np.arange(1, T + 1)
    disc = np.exp(-paths.riskfree * mats)[:, None]
    diff = x.T[:, :, None] - K[None, None, :]  # (T, N, K)
    pay_c = np.maximum(diff, 0.0)
    pay_p = np.maximum(-diff, 0.0)
    root_n = math.sqrt(n)
    sd = lambda v: v.std(axis=1, ddof=1) if n > 1 else np.zeros((T, K.size))  # noqa: E731
    return OptionSurface(mats, K, disc * pay_c.mean(axis=1), disc * pay_p.mean(axis=1),
                         disc * sd(pay_c) / root_n, disc * sd(pay_p) / root_n,
                         paths.riskfree, n, cfg.underlying, float(paths.s[0, 0]),
                         {"resampled_paths": paths.resampled, "esscher_failures": dict(paths.failures)})


# ---------------------------------------------------------------------------
# Implied volatility
# ---------------------------------------------------------------------------

VOL_BOUNDS = (1e-6, 5.0)


def bs_call(spot, strike, maturity, rate, vol):
    spot, strike, maturity, vol = map(np.asarray, (spot, strike, maturity, vol))
    srt = vol * np.sqrt(maturity)
    d1 = (np.log(spot / strike) + (rate + 0.5 * vol * vol) * maturity) / srt
    return spot * special.ndtr(d1) - strike * np.exp(-rate * maturity) * special.ndtr(d1 - srt)


def implied_vol(price: float, spot: float, strike: float, maturity: float, rate: float,
                tol: float = 1e-10) -> float:
    """Black-Scholes implied volatility of a call by bisection on
    ``VOL_BOUNDS`` until the volatility bracket is narrower than ``tol``.
    Raises :class:`OutOfBounds` when no volatility in the bracket
    reproduces ``price``."""
    if not (spot > 0 and strike > 0 and maturity > 0):
        raise OutOfBounds("implied vol needs positive spot, strike and maturity")
    lo, hi = VOL_BOUNDS
    intrinsic = max(spot - strike * math.exp(-rate * maturity), 0.0)
    if not (intrinsic < price < spot):
        raise OutOfBounds(f"price {price} outside ({intrinsic}, {spot})")
    f = lambda v: float(bs_call(spot, strike, maturity, rate, v)) - price  # noqa: E731
    if f(lo) > 0 or f(hi) < 0:
        raise OutOfBounds(f"price {price} not attainable for vol in {VOL_BOUNDS}")
    # the price is increasing in vol; 60 halvings reach the float spacing of the bracket
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0 or hi - lo < tol:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def implied_vol_surface(surface: OptionSurface, spot: float | None = None) -> pd.DataFrame:
    """Per-cell implied volatility of the call prices against maturity ``T``
    and moneyness ``M = spot / K``. Cells with no admissible vol get NaN."""
    spot = surface.spot if spot is None else spot
    rows = []
    for i, T in enumerate(surface.maturities):
        for j, K in enumerate(surface.strikes):
            try:
                iv = implied_vol(float(surface.call[i, j]), spot, float(K), float(T), surface.riskfree)
            except OutOfBounds:
                iv = math.nan
            rows.append((int(T), spot / K if K > 0 else math.nan, float(K), iv))
    return pd.DataFrame(rows, columns=["T", "M", "K", "iv"])


def parse_strikes(text: str) -> tuple[float, ...]:
    """``"0.1,0.2,0.5"`` or ``"min:max:step"`` (inclusive of max)."""
    text = text.strip()
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        if not step > 0 or hi < lo:
            raise InvalidParams(f"bad strike range {text!r}")
        n = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return tuple(round(lo + i * step, 12) for i in range(n))
    return tuple(float(v) for v in text.split(",") if v.strip())
