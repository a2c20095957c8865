"""Conditional-variance models.

* GARCH(1,1) with standardized NIG innovations for the log-returns of the
  transformed loss series, with mean ``r + lambda0 sqrt(h) - h/2``.
* ARMA(1,1)-GARCH(1,1) with standardized Student-t innovations, used to
  filter the stress factors and the index before dependence modelling.
* Ljung-Box portmanteau test.

Variance recursion (both models)::

    h[t] = m + a * h[t-1] + b * h[t-1] * eps[t-1]**2

i.e. ``b`` multiplies the squared mean-equation shock ``h*eps**2``.
"""

from __future__ import annotations

import ctypes
import json
import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from numba.extending import get_cython_function_address
from scipy import optimize, special

from .dist import GhParams, nig_logpdf, nig_sample, standardized_nig, standardized_shape
from .errors import DataError, InvalidParams, NonConvergence, NonStationaryFit, TooFewPoints
from .rng import as_generator

_STATIONARY_EDGE = 1.0 - 1e-6

_k1e = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double)(
    get_cython_function_address("scipy.special.cython_special", "k1e"))


# ---------------------------------------------------------------------------
# Recursions
# ---------------------------------------------------------------------------


def garch_variance_recursion(m: float, a: float, b: float, prev_variance: float,
                             prev_innovation: float) -> float:
    """One step of ``h_t = m + a h_{t-1} + b h_{t-1} eps_{t-1}^2``."""
    return m + a * prev_variance + b * prev_variance * prev_innovation**2


@numba.njit(cache=True)
def _garch_m_filter(r, m, a, b, lam0, rf, h0):
    n = r.shape[0]
    h = np.empty(n)
    eps = np.empty(n)
    ht = h0
    for t in range(n):
        h[t] = ht
        sd = math.sqrt(ht)
        eps[t] = (r[t] - (rf + lam0 * sd - 0.5 * ht)) / sd
        ht = m + a * ht + b * ht * eps[t] * eps[t]
        if not ht < math.inf:  # overflow: keep a diverged variance at +inf, not nan
            ht = math.inf
    return h, eps, ht


@numba.njit
def _garch_nig_loglik(r, m, a, b, lam0, rf, h0, alpha, beta, delta, mu):
    """Fused filter + NIG log-likelihood (same algebra as dist.nig_logpdf)."""
    gamma = math.sqrt((alpha - beta) * (alpha + beta))
    const = math.log(alpha * delta / math.pi) - delta * beta * beta / (alpha + gamma)
    total = 0.0
    ht = h0
    for t in range(r.shape[0]):
        sd = math.sqrt(ht)
        eps = (r[t] - (rf + lam0 * sd - 0.5 * ht)) / sd
        y = eps - mu
        g = math.sqrt(delta * delta + y * y)
        total += (const - alpha * y * y / (g + delta) + beta * y
                  + math.log(_k1e(alpha * g)) - math.log(g) - 0.5 * math.log(ht))
        ht = m + a * ht + b * ht * eps * eps
    return total


@numba.njit(cache=True)
def _arma_garch_t_loglik(y, c, phi, theta, omega, alpha1, beta1, nu, h0):
    n = y.shape[0]
    const = math.lgamma((nu + 1) / 2) - math.lgamma(nu / 2) - 0.5 * math.log(math.pi * (nu - 2))
    total = 0.0
    e_prev = 0.0
    ht = h0
    for t in range(1, n):
        e = y[t] - c - phi * y[t - 1] - theta * e_prev
        if t > 1:
            ht = omega + alpha1 * e_prev * e_prev + beta1 * ht
        z2 = e * e / ht
        total += const - (nu + 1) / 2 * math.log1p(z2 / (nu - 2)) - 0.5 * math.log(ht)
        e_prev = e
    return total


@numba.njit(cache=True)
def _garch_m_simulate(z, m, a, b, lam0, rf, h0):
    n = z.shape[0]
    h = np.empty(n)
    r = np.empty(n)
    ht = h0
    for t in range(n):
        h[t] = ht
        sd = math.sqrt(ht)
        r[t] = rf + lam0 * sd - 0.5 * ht + sd * z[t]
        ht = m + a * ht + b * ht * z[t] * z[t]
        if not ht < math.inf:
            ht = math.inf
    return r, h, ht


@numba.njit(cache=True)
def _arma_garch_filter(y, c, phi, theta, omega, alpha1, beta1, h0):
    n = y.shape[0]
    e = np.zeros(n)
    h = np.empty(n)
    ht = h0
    h[0] = h0
    for t in range(1, n):
        e[t] = y[t] - c - phi * y[t - 1] - theta * e[t - 1]
        if t > 1:
            ht = omega + alpha1 * e[t - 1] * e[t - 1] + beta1 * ht
        h[t] = ht
    return e, h


def garch_filter(returns, m, a, b, lambda0, riskfree, h0):
    """Filter log-returns; returns ``(h, eps, h_next)``."""
    r = np.ascontiguousarray(returns, dtype=float)
    return _garch_m_filter(r, float(m), float(a), float(b), float(lambda0), float(riskfree), float(h0))


# ---------------------------------------------------------------------------
# GARCH(1,1)-NIG
# ---------------------------------------------------------------------------


@dataclass
class GarchNigModel:
    m: float
    a: float
    b: float
    lambda0: float
    innovation: GhParams
    riskfree: float = 0.0
    h0: float = 1.0
    fitted_variance: np.ndarray | None = field(default=None, repr=False)
    residuals: np.ndarray | None = field(default=None, repr=False)
    forecast_variance: float | None = None
    last_level: float | None = None
    loglik: float | None = None
    converged: bool = True
    n_obs: int = 0

    def __post_init__(self):
        if min(self.m, self.a, self.b) < 0:
            raise InvalidParams("GARCH coefficients must be nonnegative")

    @property
    def persistence(self) -> float:
        return self.a + self.b

    @property
    def unconditional_variance(self) -> float:
        return self.m / (1.0 - self.persistence) if self.persistence < 1 else math.inf

    def filter(self, returns):
        return garch_filter(returns, self.m, self.a, self.b, self.lambda0, self.riskfree, self.h0)

    def loglik_of(self, returns) -> float:
        return garch_nig_loglik(returns, self.m, self.a, self.b, self.lambda0,
                                self.innovation, self.riskfree, self.h0)

    def simulate(self, n: int, rng, h0: float | None = None):
        """Simulate ``n`` returns under the fitted (real-world) law.

        Returns ``(returns, variances, innovations)``.
        """
        z = nig_sample(self.innovation, as_generator(rng), n)
        r, h, _ = _garch_m_simulate(z, self.m, self.a, self.b, self.lambda0, self.riskfree,
                                    self.h0 if h0 is None else float(h0))
        return r, h, z

    def to_dict(self, include_series: bool = False) -> dict:
        zeta, rho = standardized_shape(self.innovation)
        d = {"m": self.m, "a": self.a, "b": self.b, "lambda0": self.lambda0,
             "innovation": self.innovation.to_dict(), "innovation_shape": {"zeta": zeta, "rho": rho},
             "riskfree": self.riskfree, "h0": self.h0, "forecast_variance": self.forecast_variance,
             "last_level": self.last_level, "loglik": self.loglik, "converged": self.converged,
             "persistence": self.persistence, "n_obs": self.n_obs}
        if include_series and self.residuals is not None:
            d["fitted_variance"] = self.fitted_variance.tolist()
            d["residuals"] = self.residuals.tolist()
        return d

    def to_json(self, include_series: bool = False) -> str:
        return json.dumps(self.to_dict(include_series), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> GarchNigModel:
        arr = lambda k: np.asarray(d[k]) if k in d else None  # noqa: E731
        return cls(m=d["m"], a=d["a"], b=d["b"], lambda0=d["lambda0"],
                   innovation=GhParams.from_dict(d["innovation"]), riskfree=d.get("riskfree", 0.0),
                   h0=d.get("h0", 1.0), fitted_variance=arr("fitted_variance"), residuals=arr("residuals"),
                   forecast_variance=d.get("forecast_variance"), last_level=d.get("last_level"),
                   loglik=d.get("loglik"), converged=d.get("converged", True), n_obs=d.get("n_obs", 0))


def garch_nig_loglik(returns, m, a, b, lambda0, innovation: GhParams, riskfree, h0) -> float:
    """Log-likelihood from the unfused filter and :func:`ndi.dist.nig_logpdf`."""
    h, eps, _ = garch_filter(returns, m, a, b, lambda0, riskfree, h0)
    return float(np.sum(nig_logpdf(eps, innovation) - 0.5 * np.log(h)))


def _unpack_garch_nig(z, fix_lambda0):
    m = math.exp(z[0])
    p = special.expit(z[1])
    q = special.expit(z[2])
    lam0 = 0.0 if fix_lambda0 else z[3]
    zeta = math.exp(z[4])
    rho = math.tanh(z[5])
    return m, p * (1 - q), p * q, lam0, zeta, rho


def _fit_with_restarts(nll, starts, maxiter, bounds=None, rtol=1e-10):
    """L-BFGS-B from each start, then alternate simplex and quasi-Newton
    passes from the best point until the objective stops improving."""
    best = None
    for z0 in starts:
        if bounds is not None:
            z0 = np.clip(z0, [lo for lo, _ in bounds], [hi for _, hi in bounds])
        res = optimize.minimize(nll, z0, method="L-BFGS-B", bounds=bounds, options={"maxiter": maxiter})
        if best is None or res.fun < best.fun:
            best = res
    for _ in range(4):
        f_before = best.fun
        nm = optimize.minimize(nll, best.x, method="Nelder-Mead", bounds=bounds,
                               options={"maxiter": 400 * len(best.x), "xatol": 1e-8, "fatol": 1e-13,
                                        "adaptive": True})
        qn = optimize.minimize(nll, nm.x if nm.fun < best.fun else best.x, method="L-BFGS-B", bounds=bounds,
                               options={"maxiter": maxiter})
        for cand in (nm, qn):
            if cand.fun < best.fun:
                best = cand
        if f_before - best.fun <= rtol * max(1.0, abs(best.fun)):
            best.success = True
            break
    else:
        best.success = False
    return best


def log_returns(series, loss_floor: float | None = None, exponent: float = 0.1) -> np.ndarray:
    s = np.asarray(series, dtype=float)
    if loss_floor is not None:
        s = np.maximum(s, loss_floor**exponent)
    if np.any(~(s > 0)):
        raise DataError("series must be strictly positive for log-returns (apply a loss floor)")
    return np.diff(np.log(s))


def fit_garch_nig(series, riskfree: float = 0.0, fix_lambda0: bool = False,
                  maxiter: int = 2000, loss_floor: float | None = None,
                  exponent: float = 0.1) -> GarchNigModel:
    """Joint MLE of the GARCH(1,1)-NIG model on the log-returns of a
    positive level series (the transformed loss series ``S_t``).

    ``loss_floor`` is in loss units: the series is floored at
    ``loss_floor ** exponent`` before taking logs.
    """
    s = np.asarray(series, dtype=float)
    r = log_returns(s, loss_floor, exponent)
    model = fit_garch_nig_returns(r, riskfree, fix_lambda0, maxiter)
    model.last_level = float(max(s[-1], loss_floor**exponent if loss_floor is not None else s[-1]))
    return model


def fit_garch_nig_returns(returns, riskfree: float = 0.0, fix_lambda0: bool = False,
                          maxiter: int = 2000) -> GarchNigModel:
    r = np.asarray(returns, dtype=float)
    if r.size < 100:
        raise TooFewPoints("GARCH-NIG fit needs at least 100 returns")
    h0 = float(r.var())
    if not h0 > 0:
        raise DataError("returns have zero variance")

    def nll(z):
        m, a, b, lam0, zeta, rho = _unpack_garch_nig(z, fix_lambda0)
        try:
            inn = standardized_nig(zeta, rho)
        except InvalidParams:
            return 1e10
        val = -_garch_nig_loglik(r, m, a, b, lam0, riskfree, h0,
                                 inn.alpha, inn.beta, inn.delta, inn.mu) / r.size
        return val if np.isfinite(val) else 1e10

    z = (r - r.mean()) / r.std()
    kurt = max(float(np.mean(z**4)) - 3.0, 0.2)
    zeta0 = min(3.0 / kurt, 50.0)
    starts = []
    for pers, share in [(0.9, 0.1), (0.5, 0.3), (0.97, 0.05)]:
        m0 = h0 * (1 - pers)
        lam_start = (r.mean() - riskfree + 0.5 * h0) / math.sqrt(h0)
        starts.append(np.array([math.log(m0), special.logit(pers), special.logit(share),
                                0.0 if fix_lambda0 else lam_start, math.log(zeta0), 0.0]))
    # shape beyond zeta=1e4 is numerically Gaussian and leaves rho unidentified
    bounds = [(-50.0, 50.0), (-20.0, 20.0), (-20.0, 20.0), (-50.0, 50.0),
              (math.log(1e-3), math.log(1e4)), (-3.0, 3.0)]
    res = _fit_with_restarts(nll, starts, maxiter, bounds)
    m, a, b, lam0, zeta, rho = _unpack_garch_nig(res.x, fix_lambda0)
    inn = standardized_nig(zeta, rho)
    h, eps, h_next = _garch_m_filter(r, m, a, b, lam0, riskfree, h0)
    converged = bool(res.success)
    if not converged:
        warnings.warn("GARCH-NIG fit hit its iteration limit", NonConvergence, stacklevel=2)
    if a + b >= _STATIONARY_EDGE:
        warnings.warn(f"fitted persistence a+b={a + b:.6f} is not below one", NonStationaryFit, stacklevel=2)
    return GarchNigModel(m=m, a=a, b=b, lambda0=lam0, innovation=inn, riskfree=riskfree, h0=h0,
                         fitted_variance=h, residuals=eps, forecast_variance=float(h_next),
                         loglik=float(-res.fun * r.size), converged=converged, n_obs=int(r.size))


# ---------------------------------------------------------------------------
# ARMA(1,1)-GARCH(1,1)-t
# ---------------------------------------------------------------------------


def std_t_logpdf(z, nu: float):
    """Log density of the unit-variance Student-t with ``nu > 2``."""
    z = np.asarray(z, dtype=float)
    return (special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2)
            - 0.5 * math.log(math.pi * (nu - 2)) - (nu + 1) / 2 * np.log1p(z * z / (nu - 2)))


@dataclass
class ArmaGarchTModel:
    const: float
    ar1: float
    ma1: float
    omega: float
    alpha1: float
    beta1: float
    nu: float
    h0: float
    residuals: np.ndarray | None = field(default=None, repr=False)
    variance: np.ndarray | None = field(default=None, repr=False)
    loglik: float | None = None
    converged: bool = True
    ljung_box_pvalue: float | None = None

    @property
    def arma(self) -> tuple[float, float, float]:
        return self.const, self.ar1, self.ma1

    @property
    def garch(self) -> tuple[float, float, float]:
        return self.omega, self.alpha1, self.beta1

    def filter(self, y):
        """Standardized residuals for ``y[1:]`` (the first point seeds the ARMA)."""
        e, h = _arma_garch_filter(np.ascontiguousarray(y, dtype=float), self.const, self.ar1, self.ma1,
                                  self.omega, self.alpha1, self.beta1, self.h0)
        return e[1:] / np.sqrt(h[1:]), h[1:]

    def to_dict(self) -> dict:
        return {"const": self.const, "ar1": self.ar1, "ma1": self.ma1, "omega": self.omega,
                "alpha1": self.alpha1, "beta1": self.beta1, "nu": self.nu, "h0": self.h0,
                "loglik": self.loglik, "converged": self.converged,
                "ljung_box_pvalue": self.ljung_box_pvalue}


def _unpack_arma_garch(z):
    p = special.expit(z[4])
    q = special.expit(z[5])
    return (z[0], math.tanh(z[1]), math.tanh(z[2]), math.exp(z[3]), p * q, p * (1 - q),
            2.0 + math.exp(z[6]))


def arma_garch_t_loglik(y, const, ar1, ma1, omega, alpha1, beta1, nu, h0) -> float:
    e, h = _arma_garch_filter(np.ascontiguousarray(y, dtype=float), const, ar1, ma1, omega, alpha1, beta1, h0)
    e, h = e[1:], h[1:]
    return float(np.sum(std_t_logpdf(e / np.sqrt(h), nu) - 0.5 * np.log(h)))


def fit_arma_garch_t(series, maxiter: int = 2000, lb_lags: int = 20) -> ArmaGarchTModel:
    """Maximum-likelihood ARMA(1,1)-GARCH(1,1) with Student-t innovations,
    conditioning on the first observation."""
    y = np.ascontiguousarray(series, dtype=float)
    if y.size < 100:
        raise TooFewPoints("ARMA-GARCH fit needs at least 100 points")
    scale = float(y.std())
    if not scale > 0:
        raise DataError("series has zero variance")
    ys = y / scale
    h0 = 1.0

    def nll(z):
        c, phi, th, om, a1, b1, nu = _unpack_arma_garch(z)
        val = -_arma_garch_t_loglik(ys, c, phi, th, om, a1, b1, nu, h0) / (ys.size - 1)
        return val if np.isfinite(val) else 1e10

    rho1 = float(np.corrcoef(ys[1:], ys[:-1])[0, 1])
    c0 = ys.mean() * (1 - rho1)
    starts = [np.array([c0, math.atanh(np.clip(rho1, -0.9, 0.9)), 0.0, math.log(0.1),
                        special.logit(0.9), special.logit(0.1), math.log(6.0)]),
              np.array([ys.mean(), 0.0, 0.0, math.log(0.5), special.logit(0.5), special.logit(0.2),
                        math.log(20.0)])]
    bounds = [(-50.0, 50.0), (-3.0, 3.0), (-3.0, 3.0), (-30.0, 10.0), (-20.0, 20.0), (-20.0, 20.0),
              (math.log(0.05), math.log(500.0))]
    res = _fit_with_restarts(nll, starts, maxiter, bounds)
    c, phi, th, om, a1, b1, nu = _unpack_arma_garch(res.x)
    # back to data units: shocks scale by `scale`, variances by scale**2
    model = ArmaGarchTModel(const=c * scale, ar1=phi, ma1=th, omega=om * scale**2, alpha1=a1, beta1=b1,
                            nu=nu, h0=h0 * scale**2, converged=bool(res.success))
    z, h = model.filter(y)
    model.residuals, model.variance = z, h
    model.loglik = arma_garch_t_loglik(y, *model.arma, *model.garch, nu, model.h0)
    if z.size > lb_lags:
        model.ljung_box_pvalue = ljung_box(z, lb_lags)[1]
    if not model.converged:
        warnings.warn("ARMA-GARCH-t fit hit its iteration limit", NonConvergence, stacklevel=2)
    return model


def simulate_arma_garch_t(n, const, ar1, ma1, omega, alpha1, beta1, nu, rng, burn: int = 500):
    rng = as_generator(rng)
    z = rng.standard_t(nu, n + burn) * math.sqrt((nu - 2) / nu)
    y = np.empty(n + burn)
    h = omega / max(1 - alpha1 - beta1, 1e-6)
    e_prev, y_prev = 0.0, const / (1 - ar1)
    for t in range(n + burn):
        e = math.sqrt(h) * z[t]
        y[t] = const + ar1 * y_prev + ma1 * e_prev + e
        h = omega + alpha1 * e * e + beta1 * h
        e_prev, y_prev = e, y[t]
    return y[burn:]


# ---------------------------------------------------------------------------
# Ljung-Box
# ---------------------------------------------------------------------------


def autocorrelations(x, lags: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    denom = float(d @ d)
    if not denom > 0:
        raise DataError("constant series: autocorrelations undefined")
    return np.array([d[k:] @ d[:-k] for k in range(1, lags + 1)]) / denom


def ljung_box(series, lags: int = 20) -> tuple[float, float]:
    """Ljung-Box ``Q = n(n+2) sum_k rho_k^2/(n-k)`` and its chi-square(lags)
    upper-tail p-value."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if lags < 1 or n <= lags:
        raise TooFewPoints(f"need len(series) > lags >= 1, got n={n}, lags={lags}")
    rho = autocorrelations(x, lags)
    q = n * (n + 2) * float(np.sum(rho**2 / (n - np.arange(1, lags + 1))))
    return q, float(special.gammaincc(lags / 2.0, q / 2.0))
