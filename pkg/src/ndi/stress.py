"""Stress testing of the index against climate factors.

Both series are filtered with ARMA(1,1)-GARCH(1,1)-t, a bivariate NIG law is
fitted to the standardized residual pairs by EM, and conditional tail
measures of the index residual given a stressed factor are estimated from
simulations of the fitted law. Co-measures are on the residual scale.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .dist import bessel_k, invgauss_sample
from .errors import (
    DataError,
    DegenerateDispersion,
    EmptyJointTail,
    InvalidParams,
    NonConvergence,
    StageError,
    TooFewConditionalScenarios,
    TooFewPoints,
)
from .garch import fit_arma_garch_t, ljung_box
from .index import NdiSeries, monthly_ndi
from .rng import as_generator, stream

DEFAULT_LEVELS = (0.10, 0.05, 0.01)
MIN_CONDITIONAL = 20
MIN_JOINT = 10


# ---------------------------------------------------------------------------
# Bivariate NIG
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BivNigParams:
    """``X = mu + W G beta + sqrt(W) G^{1/2} Z``, ``W ~ IG(delta/g, delta^2)``,
    ``g = sqrt(alpha^2 - beta' G beta)`` and ``det G = 1``."""

    alpha: float
    beta: np.ndarray
    delta: float
    mu: np.ndarray
    gamma_matrix: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float).reshape(2)
        mu = np.asarray(self.mu, dtype=float).reshape(2)
        G = np.asarray(self.gamma_matrix, dtype=float).reshape(2, 2)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma_matrix", G)
        if not (self.alpha > 0 and self.delta > 0):
            raise InvalidParams("alpha and delta must be positive")
        if not np.allclose(G, G.T, rtol=0, atol=1e-12) or G[0, 0] <= 0 or abs(np.linalg.det(G) - 1) > 1e-8:
            raise InvalidParams("dispersion must be symmetric positive definite with unit determinant")
        if not self.alpha**2 > beta @ G @ beta:
            raise InvalidParams("need alpha^2 > beta' G beta")

    @property
    def gamma_tilde(self) -> float:
        return math.sqrt(self.alpha**2 - self.beta @ self.gamma_matrix @ self.beta)

    def mean(self) -> np.ndarray:
        return self.mu + self.delta / self.gamma_tilde * self.gamma_matrix @ self.beta

    def covariance(self) -> np.ndarray:
        g = self.gamma_tilde
        gb = self.gamma_matrix @ self.beta
        return self.delta / g * self.gamma_matrix + self.delta / g**3 * np.outer(gb, gb)

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta.tolist(), "delta": self.delta,
                "mu": self.mu.tolist(), "gamma_matrix": self.gamma_matrix.tolist(), "lambda": -0.5}

    @classmethod
    def from_dict(cls, d: dict) -> BivNigParams:
        return cls(d["alpha"], d["beta"], d["delta"], d["mu"], d["gamma_matrix"])


def biv_nig_logpdf(x, p: BivNigParams) -> np.ndarray:
    """Log density at the rows of ``x`` (shape ``(n, 2)``)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x - p.mu
    Ginv = np.linalg.inv(p.gamma_matrix)
    Q = np.einsum("ij,jk,ik->i", d, Ginv, d)
    a, dl, g = p.alpha, p.delta, p.gamma_tilde
    r = np.sqrt(dl * dl + Q)
    z = a * r
    # c = (dl g)^(1/2) a^3 / (g 2 pi K_{1/2}(dl g)),  K_{1/2}(u) = sqrt(pi / 2u) e^-u
    log_c = 0.5 * math.log(dl * g) + 3 * math.log(a) - math.log(g) - math.log(2 * math.pi) \
        - (0.5 * math.log(math.pi / (2 * dl * g)) - dl * g)
    log_k = np.log(bessel_k(1.5, z, scaled=True)) - z
    return log_c + log_k + d @ p.beta - 1.5 * np.log(z)


def biv_nig_loglik(x, p: BivNigParams) -> float:
    return float(np.sum(biv_nig_logpdf(x, p)))


def simulate_bivariate_nig(p: BivNigParams, n: int, rng) -> np.ndarray:
    if n < 1:
        raise InvalidParams("n must be >= 1")
    rng = as_generator(rng)
    w = invgauss_sample(p.delta / p.gamma_tilde, p.delta**2, rng, n)
    z = rng.standard_normal((n, 2))
    L = np.linalg.cholesky(p.gamma_matrix)
    return p.mu + np.outer(w, p.gamma_matrix @ p.beta) + np.sqrt(w)[:, None] * (z @ L.T)


def gig_moments(chi, psi):
    """``E[W]`` and ``E[1/W]`` for ``W ~ GIG(-3/2, chi, psi)``."""
    chi = np.asarray(chi, dtype=float)
    z = np.sqrt(chi * psi)
    k32 = bessel_k(1.5, z, scaled=True)
    ew = np.sqrt(chi / psi) * bessel_k(0.5, z, scaled=True) / k32
    einv = np.sqrt(psi / chi) * bessel_k(2.5, z, scaled=True) / k32
    return ew, einv


@dataclass
class BivNigFit:
    params: BivNigParams
    loglik: float
    n_iter: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    n_obs: int = 0

    def to_dict(self) -> dict:
        return {"params": self.params.to_dict(), "loglik": self.loglik, "n_iter": self.n_iter,
                "converged": self.converged, "n_obs": self.n_obs}


def _to_params(mu, Sigma, gam, chi, psi) -> BivNigParams:
    beta = np.linalg.solve(Sigma, gam)
    alpha = math.sqrt(psi + beta @ Sigma @ beta)
    return BivNigParams(alpha, beta, math.sqrt(chi), mu, Sigma)


def _unit_det(M):
    det = np.linalg.det(M)
    if not det > 0 or not np.all(np.isfinite(M)):
        raise DegenerateDispersion("dispersion matrix is not positive definite")
    M = M / math.sqrt(det)
    return 0.5 * (M + M.T)


def _em(x, mu, Sigma, gam, chi, psi, tol, maxiter):
    n = x.shape[0]
    xbar = x.mean(axis=0)
    history = [biv_nig_loglik(x, _to_params(mu, Sigma, gam, chi, psi))]
    converged = False
    it = 0
    for it in range(1, maxiter + 1):
        Sinv = np.linalg.inv(Sigma)
        d = x - mu
        Q = np.einsum("ij,jk,ik->i", d, Sinv, d)
        eta, dlt = gig_moments(chi + Q, psi + gam @ Sinv @ gam)
        eb, db = eta.mean(), dlt.mean()
        denom = db * eb - 1.0
        if not denom > 1e-14:
            raise DegenerateDispersion("mixing variable collapsed to a constant")
        gam = (dlt[:, None] * (xbar - x)).mean(axis=0) / denom
        mu = ((dlt[:, None] * x).mean(axis=0) - gam) / db
        d = x - mu
        Psi = (dlt[:, None, None] * np.einsum("ij,ik->ijk", d, d)).mean(axis=0) - eb * np.outer(gam, gam)
        Sigma = _unit_det(Psi)
        # second cycle: refresh the weights, then the closed-form IG update
        Sinv = np.linalg.inv(Sigma)
        Q = np.einsum("ij,jk,ik->i", d, Sinv, d)
        eta, dlt = gig_moments(chi + Q, psi + gam @ Sinv @ gam)
        eb, db = eta.mean(), dlt.mean()
        if not db - 1.0 / eb > 0:
            raise DegenerateDispersion("mixing variable collapsed to a constant")
        chi = 1.0 / (db - 1.0 / eb)
        psi = chi / eb**2
        history.append(biv_nig_loglik(x, _to_params(mu, Sigma, gam, chi, psi)))
        if abs(history[-1] - history[-2]) < tol * abs(history[-2]):
            converged = True
            break
    return (mu, Sigma, gam, chi, psi), history, it, converged


def fit_bivariate_nig(pairs, tol: float = 1e-8, maxiter: int = 500, restarts: int = 5,
                      seed: int = 0) -> BivNigFit:
    """EM (MCECM) fit of a bivariate NIG to the rows of ``pairs``.

    The first start is moment based; ``restarts - 1`` further starts jitter
    the skewness and mixing shape. The best final log-likelihood is kept.
    """
    x = np.asarray(pairs, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise DataError("pairs must have shape (n, 2)")
    if x.shape[0] < 100:
        raise TooFewPoints(f"need at least 100 pairs, got {x.shape[0]}")
    S = np.cov(x, rowvar=False)
    if not np.linalg.det(S) > 0:
        raise DegenerateDispersion("sample covariance is singular")
    scale = math.sqrt(np.linalg.det(S))  # E[W] that matches the sample covariance
    best = None
    for k in range(max(1, restarts)):
        rng = stream(seed, k)
        if k == 0:
            zeta, gam = 1.0, np.zeros(2)
        else:
            zeta = math.exp(rng.uniform(math.log(0.3), math.log(3.0)))
            gam = rng.normal(0, 0.1, 2) * np.sqrt(np.diag(S)) / scale
        chi, psi = zeta * scale, zeta / scale
        try:
            est, hist, it, conv = _em(x, x.mean(axis=0) - scale * gam, _unit_det(S), gam, chi, psi, tol, maxiter)
        except DegenerateDispersion:
            if k == 0 and restarts <= 1:
                raise
            continue
        if best is None or hist[-1] > best[1][-1]:
            best = (est, hist, it, conv)
    if best is None:
        raise DegenerateDispersion("every EM start degenerated")
    est, hist, it, conv = best
    if not conv:
        warnings.warn(f"bivariate NIG EM stopped after {maxiter} iterations", NonConvergence, stacklevel=2)
    return BivNigFit(_to_params(*est), hist[-1], it, conv, hist, x.shape[0])


# ---------------------------------------------------------------------------
# Co-measures
# ---------------------------------------------------------------------------


def _xy(x, y=None):
    if y is None:
        a = np.asarray(x, dtype=float)
        return a[:, 0], a[:, 1]
    return np.asarray(x, dtype=float), np.asarray(y, dtype=float)


def _quantile_se(sample, q) -> float:
    """Distribution-free standard error of the ``q`` quantile from the order
    statistics one binomial standard deviation either side."""
    m = sample.size
    s = np.sort(sample)
    half = math.sqrt(m * q * (1 - q))
    lo = int(np.clip(math.floor(m * q - half), 0, m - 1))
    hi = int(np.clip(math.ceil(m * q + half), 0, m - 1))
    return 0.5 * (s[hi] - s[lo])


def covar(x, y=None, q: float = 0.05, min_count: int = MIN_CONDITIONAL) -> float:
    """``q`` quantile of ``y`` over scenarios with ``x`` at or below its own
    ``q`` quantile. Pass pairs as ``covar(xy, q=...)`` or ``covar(x, y, q)``."""
    x, y = _xy(x, y)
    cond = y[x <= np.quantile(x, q)]
    if cond.size < min_count:
        raise TooFewConditionalScenarios(f"{cond.size} conditional scenarios at q={q}, need {min_count}")
    return float(np.quantile(cond, q))


def coes(x, y=None, q: float = 0.05, min_count: int = MIN_CONDITIONAL) -> float:
    """Mean of ``y`` over ``{y <= CoVaR_q, x <= VaR_q(x)}``."""
    x, y = _xy(x, y)
    cv = covar(x, y, q, min_count)
    sel = y[(y <= cv) & (x <= np.quantile(x, q))]
    if sel.size == 0:
        raise TooFewConditionalScenarios(f"no scenarios beyond CoVaR at q={q}")
    return float(sel.mean())


def coetl(x, y=None, q: float = 0.05, min_count: int = MIN_JOINT) -> float:
    """Mean of ``y`` over the joint tail ``{y <= VaR_q(y), x <= VaR_q(x)}``."""
    x, y = _xy(x, y)
    sel = y[(y <= np.quantile(y, q)) & (x <= np.quantile(x, q))]
    if sel.size < min_count:
        raise EmptyJointTail(f"{sel.size} joint-tail scenarios at q={q}, need {min_count}")
    return float(sel.mean())


def co_measures(x, y, q: float) -> dict:
    """All three measures with standard errors and subsample counts."""
    x, y = _xy(x, y)
    vx = np.quantile(x, q)
    cond = y[x <= vx]
    cv = covar(x, y, q)
    tail = y[(y <= cv) & (x <= vx)]
    joint = y[(y <= np.quantile(y, q)) & (x <= vx)]
    ce = coes(x, y, q)
    ct = coetl(x, y, q)
    sd = lambda v: float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan  # noqa: E731
    return {"q": q, "covar": cv, "coes": ce, "coetl": ct, "se_covar": _quantile_se(cond, q),
            "se_coes": sd(tail), "se_coetl": sd(joint), "n_conditional": int(cond.size),
            "n_joint": int(joint.size)}


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def _month_key(v) -> str:
    s = str(v).strip()
    if len(s) == 6 and s.isdigit():
        return f"{s[:4]}-{s[4:]}"
    return s[:7]


def read_factor_csv(path) -> pd.Series:
    """Two-column CSV ``month,value``; months as ``YYYY-MM`` or ``YYYYMM``."""
    df = pd.read_csv(path, dtype={0: str})
    name = df.columns[1]
    s = pd.Series(df.iloc[:, 1].astype(float).to_numpy(), index=[_month_key(m) for m in df.iloc[:, 0]],
                  name=name)
    if s.index.has_duplicates:
        raise DataError(f"{path}: duplicate months")
    return s.sort_index()


@dataclass
class StressReport:
    table: pd.DataFrame
    correlations: dict
    fits: dict
    screens: dict
    scatter: dict = field(default_factory=dict, repr=False)
    contours: dict = field(default_factory=dict, repr=False)
    meta: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        self.table.to_csv(path, index=False, float_format="%.10g")

    def scatter_frame(self) -> pd.DataFrame:
        frames = [pd.DataFrame({"factor": k, "x": v[:, 0], "y": v[:, 1]}) for k, v in self.scatter.items()]
        return pd.concat(frames, ignore_index=True)

    def contour_frame(self) -> pd.DataFrame:
        return pd.concat([df.assign(factor=k) for k, df in self.contours.items()], ignore_index=True)

    def summary(self) -> dict:
        return {"correlations": self.correlations, "fits": self.fits, "screens": self.screens,
                "meta": self.meta, "scale": "standardized residuals"}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # every failure is reported with its stage
        raise StageError(name, exc) from exc


def _align(ndi_monthly: pd.Series, factor: pd.Series):
    joined = pd.concat([factor.diff().rename("factor"), ndi_monthly.rename("ndi")], axis=1, join="inner").dropna()
    if len(joined) < 100:
        raise TooFewPoints(f"only {len(joined)} aligned months")
    return joined


def contour_grid(p: BivNigParams, sample: np.ndarray, size: int = 101) -> pd.DataFrame:
    lo = np.quantile(sample, 0.005, axis=0)
    hi = np.quantile(sample, 0.995, axis=0)
    gx, gy = np.meshgrid(np.linspace(lo[0], hi[0], size), np.linspace(lo[1], hi[1], size), indexing="ij")
    dens = np.exp(biv_nig_logpdf(np.column_stack([gx.ravel(), gy.ravel()]), p))
    return pd.DataFrame({"x": gx.ravel(), "y": gy.ravel(), "density": dens})


def stress_pipeline(ndi, factors: dict[str, pd.Series], levels=DEFAULT_LEVELS, n_sim: int = 200_000,
                    seed: int = 0, lb_lags: int = 20, scatter_size: int = 10_000,
                    em_restarts: int = 5) -> StressReport:
    """Difference each monthly factor, pair it with the monthly index
    change, filter both with ARMA-GARCH-t, fit a bivariate NIG to the
    residuals (factor first), simulate and estimate the co-measures.

    ``ndi`` is an :class:`NdiSeries` (aggregated to months) or a monthly
    ``pd.Series`` indexed by ``YYYY-MM``.
    """
    ndi_m = _stage("align", monthly_ndi, ndi) if isinstance(ndi, NdiSeries) else ndi
    rows, corr, fits, screens, scatter, contours = [], {}, {}, {}, {}, {}
    for j, (name, series) in enumerate(factors.items()):
        joined = _stage(f"{name}:align", _align, ndi_m, series)
        fx, fy = joined["factor"].to_numpy(), joined["ndi"].to_numpy()
        screens[name] = {"months": [joined.index[0], joined.index[-1]], "n": len(joined),
                         "ljung_box_factor": _stage(f"{name}:ljung_box", ljung_box, fx, lb_lags),
                         "ljung_box_ndi": _stage(f"{name}:ljung_box", ljung_box, fy, lb_lags)}
        mx = _stage(f"{name}:filter_factor", fit_arma_garch_t, fx, lb_lags=lb_lags)
        my = _stage("filter_ndi", fit_arma_garch_t, fy, lb_lags=lb_lags)
        res = np.column_stack([mx.residuals, my.residuals])
        screens[name]["residual_ljung_box_p"] = [mx.ljung_box_pvalue, my.ljung_box_pvalue]
        corr[name] = {"raw": float(np.corrcoef(fx, fy)[0, 1]), "residual": float(np.corrcoef(res.T)[0, 1])}
        fit = _stage(f"{name}:fit_bivariate_nig", fit_bivariate_nig, res, restarts=em_restarts, seed=seed)
        fits[name] = {"bivariate_nig": fit.to_dict(), "factor_filter": mx.to_dict(), "ndi_filter": my.to_dict()}
        sim = _stage(f"{name}:simulate", simulate_bivariate_nig, fit.params, n_sim, stream(seed, 1000 + j))
        scatter[name] = sim[:scatter_size]
        contours[name] = contour_grid(fit.params, sim)
        for q in levels:
            r = _stage(f"{name}:co_measures", co_measures, sim[:, 0], sim[:, 1], q)
            rows.append({"factor": name, **r})
    table = pd.DataFrame(rows)
    meta = {"levels": list(levels), "n_sim": n_sim, "seed": seed, "scale": "standardized residuals"}
    return StressReport(table, corr, fits, screens, scatter, contours, meta)
