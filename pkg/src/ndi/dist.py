"""Generalized hyperbolic / normal inverse Gaussian distribution kernel.

Parameters follow the (lambda, alpha, beta, delta, mu) convention. The NIG
law is the ``lambda = -1/2`` member and is the only one that gets fitted;
other half-integer or integer ``lambda`` values are supported for the
density-free pieces (MGF) because their Bessel functions are cheap.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .errors import DomainError, InvalidParams, NonConvergence, OutsideDomain
from .rng import as_generator

NIG_LAMBDA = -0.5


# ---------------------------------------------------------------------------
# Modified Bessel function of the second kind
# ---------------------------------------------------------------------------


def _order_kind(nu: float) -> str:
    two_nu = 2.0 * nu
    if abs(two_nu - round(two_nu)) > 1e-12:
        raise ValueError(f"Bessel order {nu} is neither integer nor half-integer")
    return "int" if round(two_nu) % 2 == 0 else "half"


def bessel_k(nu: float, x, scaled: bool = False):
    """Modified Bessel function K_nu(x) for integer or half-integer ``nu``.

    Half-integer orders use the closed form
    ``K_{1/2}(x) = sqrt(pi / (2x)) exp(-x)`` and the upward recurrence
    ``K_{v+1} = K_{v-1} + (2v/x) K_v``. Integer orders start the same
    recurrence from K_0 and K_1.

    With ``scaled=True`` the result is ``exp(x) * K_nu(x)``, which stays
    finite for large arguments.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("Bessel K requires x > 0")
    nu = abs(float(nu))  # K_{-v} = K_v
    if _order_kind(nu) == "half":
        lo = np.sqrt(np.pi / (2.0 * x))  # scaled K_{1/2}
        hi = lo * (1.0 + 1.0 / x)  # scaled K_{3/2}
        order = 0.5
    else:
        lo = special.k0e(x)
        hi = special.k1e(x)
        order = 0.0
    if nu == order:
        out = lo
    else:
        while order + 1.0 < nu:
            lo, hi = hi, lo + (2.0 * (order + 1.0) / x) * hi
            order += 1.0
        out = hi
    if not scaled:
        out = out * np.exp(-x)
    return out if out.ndim else float(out)


def log_bessel_k(nu: float, x):
    """``log K_nu(x)`` without underflow for large ``x``."""
    return np.log(bessel_k(nu, x, scaled=True)) - np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GhParams:
    """Generalized hyperbolic parameters; ``lam = -0.5`` is NIG."""

    alpha: float
    beta: float
    delta: float
    mu: float
    lam: float = NIG_LAMBDA

    def __post_init__(self):
        vals = (self.alpha, self.beta, self.delta, self.mu, self.lam)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidParams(f"non-finite GH parameters: {self}")
        if not self.alpha > abs(self.beta):
            raise InvalidParams(f"need alpha > |beta|, got {self.alpha}, {self.beta}")
        if not self.delta > 0:
            raise InvalidParams(f"need delta > 0, got {self.delta}")

    @property
    def gamma(self) -> float:
        return math.sqrt((self.alpha - self.beta) * (self.alpha + self.beta))

    @property
    def is_nig(self) -> bool:
        return self.lam == NIG_LAMBDA

    def mean(self) -> float:
        self._require_nig()
        return self.mu + self.delta * self.beta / self.gamma

    def variance(self) -> float:
        self._require_nig()
        return self.delta * self.alpha**2 / self.gamma**3

    def skewness(self) -> float:
        self._require_nig()
        return 3.0 * self.beta / (self.alpha * math.sqrt(self.delta * self.gamma))

    def excess_kurtosis(self) -> float:
        self._require_nig()
        return 3.0 * (1.0 + 4.0 * (self.beta / self.alpha) ** 2) / (self.delta * self.gamma)

    def scaled(self, c: float, shift: float = 0.0) -> GhParams:
        """Law of ``shift + c * X`` for ``c > 0``."""
        return GhParams(self.alpha / c, self.beta / c, self.delta * c, shift + c * self.mu, self.lam)

    def tilted(self, theta: float) -> GhParams:
        """Esscher tilt by ``theta``: density times ``exp(theta x) / MGF(theta)``."""
        return dataclasses.replace(self, beta=self.beta + theta)

    def mgf_domain(self) -> tuple[float, float]:
        """Open interval of ``u`` where the MGF is finite."""
        return -self.alpha - self.beta, self.alpha - self.beta

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "alpha": self.alpha, "beta": self.beta,
                "delta": self.delta, "mu": self.mu}

    @classmethod
    def from_dict(cls, d: dict) -> GhParams:
        return cls(d["alpha"], d["beta"], d["delta"], d["mu"], d.get("lambda", NIG_LAMBDA))

    def _require_nig(self):
        if not self.is_nig:
            raise InvalidParams("moment formulas are implemented for NIG only")


def nig(alpha: float, beta: float, delta: float, mu: float) -> GhParams:
    return GhParams(alpha, beta, delta, mu, NIG_LAMBDA)


def standardized_nig(zeta: float, rho: float) -> GhParams:
    """Zero-mean, unit-variance NIG with shape ``zeta = delta*gamma`` and
    skew ``rho = beta/alpha`` (``|rho| < 1``)."""
    if not (zeta > 0 and abs(rho) < 1):
        raise InvalidParams(f"need zeta > 0 and |rho| < 1, got {zeta}, {rho}")
    one_m = 1.0 - rho * rho
    alpha = math.sqrt(zeta) / one_m
    beta = rho * alpha
    gamma = alpha * math.sqrt(one_m)
    delta = zeta / gamma
    return nig(alpha, beta, delta, -delta * beta / gamma)


def standardized_shape(p: GhParams) -> tuple[float, float]:
    """Inverse of :func:`standardized_nig` (shape only)."""
    return p.delta * p.gamma, p.beta / p.alpha


# ---------------------------------------------------------------------------
# Density and MGF
# ---------------------------------------------------------------------------


def _require_nig(p: GhParams):
    if not p.is_nig:
        raise InvalidParams(f"NIG routine called with lambda={p.lam}")


def nig_logpdf(x, p: GhParams):
    _require_nig(p)
    y = np.asarray(x, dtype=float) - p.mu
    g = np.hypot(p.delta, y)
    a, d, gam = p.alpha, p.delta, p.gamma
    # delta*gamma - alpha*g, rearranged to avoid cancellation for large alpha*delta
    expo = -(a * y * y / (g + d) + d * p.beta**2 / (a + gam)) + p.beta * y
    return (np.log(a * d / np.pi) + expo + np.log(special.k1e(a * g)) - np.log(g))


def nig_pdf(x, p: GhParams):
    """NIG density ``(a d / pi) exp(d g + b (x - mu)) K_1(a q) / q``,
    ``q = sqrt(d^2 + (x - mu)^2)``."""
    return np.exp(nig_logpdf(x, p))


def nig_cdf(x, p: GhParams, grid_size: int = 4001):
    """CDF by adaptive quadrature on a grid, interpolated to ``x``."""
    from scipy import integrate

    _require_nig(p)
    sd = math.sqrt(p.variance())
    x = np.asarray(x, dtype=float)
    lo = min(float(np.min(x)), p.mean() - 40 * sd) if x.size else p.mean() - 40 * sd
    hi = max(float(np.max(x)), p.mean() + 40 * sd) if x.size else p.mean() + 40 * sd
    grid = np.linspace(lo, hi, grid_size)
    f = lambda t: float(nig_pdf(t, p))  # noqa: E731
    pieces = [integrate.quad(f, grid[i], grid[i + 1], epsabs=1e-14)[0] for i in range(grid_size - 1)]
    cdf = np.concatenate([[0.0], np.cumsum(pieces)])
    return np.interp(x, grid, cdf)


def _sqrt_gap(alpha: float, b):
    """``sqrt(alpha^2 - b^2)`` computed as a product of sums."""
    return np.sqrt((alpha - b) * (alpha + b))


def gh_log_mgf(u, p: GhParams):
    """Log moment generating function; raises :class:`OutsideDomain`
    unless ``|beta + u| < alpha``."""
    u = np.asarray(u, dtype=float)
    b = p.beta + u
    if np.any(np.abs(b) >= p.alpha):
        raise OutsideDomain(f"|beta+u| must be < alpha={p.alpha}")
    gam = p.gamma
    s = _sqrt_gap(p.alpha, b)
    if p.is_nig:
        # delta*(gamma - s) with gamma^2 - s^2 = u*(2 beta + u)
        out = p.mu * u + p.delta * u * (2.0 * p.beta + u) / (gam + s)
    else:
        lam = p.lam
        out = (p.mu * u + 0.5 * lam * (2.0 * np.log(gam) - 2.0 * np.log(s))
               + log_bessel_k(lam, p.delta * s) - log_bessel_k(lam, p.delta * gam))
    return out if out.ndim else float(out)


def gh_mgf(u, p: GhParams):
    return np.exp(gh_log_mgf(u, p))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def invgauss_sample(mean, shape, rng, size=None):
    """Inverse-Gaussian draws by the Michael-Schucany-Haas transform.

    ``mean`` and ``shape`` broadcast against ``size``; one normal and one
    uniform are consumed per draw.
    """
    rng = as_generator(rng)
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if size is None:
        size = np.broadcast(mean, shape).shape
    nu = rng.standard_normal(size)
    u = rng.random(size)
    y = nu * nu
    my = mean * y
    x = mean + mean * my / (2.0 * shape) - (mean / (2.0 * shape)) * np.sqrt(4.0 * shape * my + my * my)
    # the root can underflow to <= 0 when mean*y >> shape; mean^2/x takes over there
    x = np.maximum(x, np.finfo(float).tiny)
    return np.where(u <= mean / (mean + x), x, mean * mean / x)


def nig_sample_beta(alpha: float, beta, delta: float, mu: float, rng, size=None):
    """NIG draws allowing an array of ``beta`` values (one per draw)."""
    rng = as_generator(rng)
    beta = np.asarray(beta, dtype=float)
    if size is None:
        size = beta.shape
    gamma = _sqrt_gap(alpha, beta)
    w = invgauss_sample(delta / gamma, delta * delta, rng, size)
    z = rng.standard_normal(size)
    return mu + beta * w + np.sqrt(w) * z


def nig_sample(p: GhParams, rng, n: int):
    """``n`` i.i.d. NIG draws via the normal variance mixture
    ``mu + beta W + sqrt(W) Z`` with ``W ~ IG(delta/gamma, delta^2)``."""
    _require_nig(p)
    if n < 1:
        raise InvalidParams("n must be >= 1")
    return nig_sample_beta(p.alpha, np.full(n, p.beta), p.delta, p.mu, rng, n)


# ---------------------------------------------------------------------------
# Maximum likelihood
# ---------------------------------------------------------------------------


@dataclass
class NigFit:
    params: GhParams
    loglik: float
    init_loglik: float
    converged: bool
    grad_norm: float
    n_iter: int
    n_obs: int

    def to_dict(self) -> dict:
        return {**self.params.to_dict(), "loglik": self.loglik, "init_loglik": self.init_loglik,
                "converged": self.converged, "grad_norm": self.grad_norm,
                "n_iter": self.n_iter, "n_obs": self.n_obs}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def nig_moment_init(data) -> GhParams:
    """Method-of-moments starting point, falling back to a symmetric
    moderately heavy-tailed law when the sample moments are inconsistent."""
    x = np.asarray(data, dtype=float)
    m, v = x.mean(), x.var()
    if not v > 0:
        raise InvalidParams("data has zero variance")
    z = (x - m) / math.sqrt(v)
    s, k = float(np.mean(z**3)), float(np.mean(z**4) - 3.0)
    if k > 0 and 3 * k > 5 * s * s + 1e-9:
        rho = math.copysign(math.sqrt(s * s / (3 * k - 4 * s * s)), s)
        rho = max(min(rho, 0.95), -0.95)
        zeta = 3 * (1 + 4 * rho * rho) / k
    else:
        rho, zeta = 0.0, 3.0 / max(k, 0.1)
    zeta = min(max(zeta, 1e-2), 1e4)
    std = standardized_nig(zeta, rho)
    return std.scaled(math.sqrt(v), shift=m)


def _to_free(p: GhParams) -> np.ndarray:
    return np.array([math.log(p.alpha - abs(p.beta)), p.beta, math.log(p.delta), p.mu])


def _from_free(z) -> GhParams:
    beta = float(z[1])
    return nig(abs(beta) + math.exp(z[0]), beta, math.exp(z[2]), float(z[3]))


def nig_loglik(data, p: GhParams) -> float:
    return float(np.sum(nig_logpdf(data, p)))


def nig_fit_mle(data, init: GhParams | None = None, maxiter: int = 2000,
                rtol: float = 1e-9, restarts: int = 5) -> NigFit:
    """Maximum-likelihood NIG fit.

    Nelder-Mead on ``(log(alpha-|beta|), beta, log delta, mu)`` with
    restarts from the incumbent until the relative log-likelihood gain drops
    below ``rtol``. Emits :class:`NonConvergence` when the iteration budget
    runs out first.
    """
    x = np.asarray(data, dtype=float)
    if x.ndim != 1 or x.size < 50:
        raise InvalidParams("need at least 50 observations")
    # work on a standardized copy so the simplex sees O(1) coordinates
    loc, sc = float(np.median(x)), float(x.std())
    xs = (x - loc) / sc
    p0 = nig_moment_init(xs) if init is None else init.scaled(1.0 / sc, shift=-loc / sc)
    n = xs.size

    def nll(z):
        try:
            p = _from_free(z)
        except InvalidParams:
            return np.inf
        val = -np.mean(nig_logpdf(xs, p))
        return val if np.isfinite(val) else np.inf

    z = _to_free(p0)
    f0 = nll(z)
    if not np.isfinite(f0):
        raise InvalidParams("initial parameters give non-finite likelihood")
    best_f, used, converged = f0, 0, False
    for _ in range(restarts + 1):
        budget = maxiter - used
        if budget <= 0:
            break
        res = optimize.minimize(nll, z, method="Nelder-Mead",
                                options={"maxiter": budget, "maxfev": 4 * budget,
                                         "xatol": 1e-10, "fatol": rtol * max(abs(best_f), 1.0),
                                         "adaptive": True})
        used += res.nit
        gain = best_f - res.fun
        if res.fun <= best_f:
            z, best_f = res.x, res.fun
        if res.success and gain <= rtol * max(abs(best_f), 1.0):
            converged = True
            break
    grad = optimize.approx_fprime(z, nll, 1e-7)
    if not converged:
        warnings.warn(f"NIG MLE stopped after {used} iterations", NonConvergence, stacklevel=2)
    p_std = _from_free(z)
    p = p_std.scaled(sc, shift=loc)
    return NigFit(params=p, loglik=nig_loglik(x, p),
                  init_loglik=-f0 * n - n * math.log(sc),
                  converged=converged, grad_norm=float(np.linalg.norm(grad)),
                  n_iter=used, n_obs=n)
