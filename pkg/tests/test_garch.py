import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose
from statsmodels.stats.diagnostic import acorr_ljungbox

from ndi.dist import nig_logpdf, standardized_nig, standardized_shape
from ndi.errors import DataError, TooFewPoints
from ndi.garch import (
    GarchNigModel,
    _garch_nig_loglik,
    arma_garch_t_loglik,
    fit_arma_garch_t,
    fit_garch_nig,
    fit_garch_nig_returns,
    garch_filter,
    garch_variance_recursion,
    ljung_box,
    simulate_arma_garch_t,
    std_t_logpdf,
)
from ndi.rng import stream


def reference_filter(r, m, a, b, lam0, rf, h0):
    """Plain-Python transcription of the mean and variance equations."""
    h, eps = [], []
    ht = h0
    for x in r:
        h.append(ht)
        e = (x - rf - lam0 * math.sqrt(ht) + ht / 2) / math.sqrt(ht)
        eps.append(e)
        ht = m + a * ht + b * ht * e * e
    return np.array(h), np.array(eps), ht


class TestRecursion:
    def test_zero_shock(self):
        assert garch_variance_recursion(0.3, 0.0, 0.7, 5.0, 0.0) == 0.3

    def test_direct(self):
        assert_allclose(garch_variance_recursion(0.1, 0.5, 0.3, 1.0, 1.0), 0.9, rtol=1e-15)

    def test_fixed_point(self):
        m, a, b = 0.2, 0.6, 0.3
        h = m / (1 - a - b)
        assert_allclose(garch_variance_recursion(m, a, b, h, 1.0), h, rtol=1e-14)

    def test_squared_shock_reading(self):
        # b multiplies h*eps^2 (the squared shock), not eps^2 alone
        assert garch_variance_recursion(0.0, 0.0, 1.0, 4.0, 1.0) == 4.0

    @settings(max_examples=60, deadline=None)  # first example may include JIT compilation
    @given(st.floats(1e-8, 1.0), st.floats(0, 0.98), st.floats(0, 0.5), st.floats(-1, 1),
           st.lists(st.floats(-50, 50), min_size=1, max_size=100))
    def test_variance_positive(self, m, a, b, lam0, r):
        h, _, h_next = garch_filter(np.array(r), m, a, b, lam0, 0.0, 0.5)
        assert np.all(h > 0) and h_next > 0

    def test_filter_matches_reference(self):
        r = stream(1).standard_normal(300) * 0.2
        args = (0.01, 0.8, 0.1, 0.3, 0.001, 0.05)
        h, eps, hn = garch_filter(r, *args)
        h2, eps2, hn2 = reference_filter(r, *args)
        assert_allclose(h, h2, rtol=1e-13)
        assert_allclose(eps, eps2, rtol=1e-12, atol=1e-13)
        assert_allclose(hn, hn2, rtol=1e-13)


@pytest.fixture(scope="module")
def small_model():
    return GarchNigModel(m=0.002, a=0.85, b=0.1, lambda0=0.05, innovation=standardized_nig(1.5, -0.2),
                         riskfree=0.001, h0=0.04)


class TestGarchNig:
    def test_round_trip(self, small_model):
        r, h, z = small_model.simulate(5000, stream(2))
        h2, eps, _ = small_model.filter(r)
        assert_allclose(eps, z, atol=1e-10)
        assert_allclose(h2, h, rtol=1e-12)

    def test_loglik_consistency(self, small_model):
        r, _, _ = small_model.simulate(3000, stream(3))
        inn = small_model.innovation
        fused = _garch_nig_loglik(r, small_model.m, small_model.a, small_model.b, small_model.lambda0,
                                  small_model.riskfree, small_model.h0, inn.alpha, inn.beta, inn.delta, inn.mu)
        h, eps = reference_filter(r, small_model.m, small_model.a, small_model.b, small_model.lambda0,
                                  small_model.riskfree, small_model.h0)[:2]
        independent = float(np.sum(nig_logpdf(eps, inn) - 0.5 * np.log(h)))
        assert abs(fused - independent) < 1e-8 * abs(independent)
        assert abs(small_model.loglik_of(r) - independent) < 1e-8 * abs(independent)

    def test_fit_on_level_series(self, small_model):
        r, _, _ = small_model.simulate(1500, stream(4))
        s = 8.0 * np.exp(np.r_[0.0, np.cumsum(r)])
        fit = fit_garch_nig(s, riskfree=small_model.riskfree)
        assert fit.last_level == s[-1]
        # stored residuals equal an independent refilter
        rr = np.diff(np.log(s))
        _, eps, hn = reference_filter(rr, fit.m, fit.a, fit.b, fit.lambda0, fit.riskfree, fit.h0)
        assert_allclose(fit.residuals, eps, rtol=1e-12, atol=1e-12)
        assert_allclose(fit.forecast_variance, hn, rtol=1e-12)
        assert 0.8 <= fit.residuals.var() <= 1.2
        assert fit.a + fit.b < 1
        assert abs(fit.loglik - fit.loglik_of(rr)) < 1e-8 * abs(fit.loglik)
        again = GarchNigModel.from_dict(fit.to_dict(include_series=True))
        assert_allclose(again.residuals, fit.residuals)
        assert again.innovation == fit.innovation

    def test_fix_lambda0(self, small_model):
        r, _, _ = small_model.simulate(800, stream(5))
        fit = fit_garch_nig_returns(r, riskfree=small_model.riskfree, fix_lambda0=True)
        assert fit.lambda0 == 0.0

    def test_iid_input(self):
        r = stream(6).standard_normal(4000) * 0.3
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = fit_garch_nig_returns(r)
        assert fit.b < 0.05
        assert abs(fit.unconditional_variance / r.var() - 1) < 0.1

    def test_floor_and_positivity(self):
        from ndi.garch import log_returns
        with pytest.raises(DataError):
            log_returns([1.0, 0.0, 2.0])
        assert np.all(np.isfinite(log_returns([1.0, 0.0, 2.0], loss_floor=1.0)))

    def test_too_short(self):
        with pytest.raises(TooFewPoints):
            fit_garch_nig_returns(np.ones(50))

    @pytest.mark.slow
    def test_recovery(self):
        true = GarchNigModel(m=0.05, a=0.9, b=0.05, lambda0=0.1, innovation=standardized_nig(1e4, 0.0), h0=1.0)
        r, _, _ = true.simulate(50_000, stream(300))
        fit = fit_garch_nig_returns(r)
        for est, ref in [(fit.m, 0.05), (fit.a, 0.9), (fit.b, 0.05)]:
            assert abs(est / ref - 1) < 0.10
        assert standardized_shape(fit.innovation)[0] > 50  # near-Gaussian innovations recovered


class TestArmaGarchT:
    def test_std_t_density(self):
        from scipy import integrate
        nu = 5.0
        f = lambda z: math.exp(float(std_t_logpdf(z, nu)))  # noqa: E731
        assert abs(integrate.quad(f, -np.inf, np.inf)[0] - 1) < 1e-9
        assert abs(integrate.quad(lambda z: z * z * f(z), -np.inf, np.inf)[0] - 1) < 1e-7

    def test_white_noise(self):
        y = stream(40).standard_normal(10_000)
        fit = fit_arma_garch_t(y)
        # AR and MA roots cancel on white noise; their sum is what is identified
        assert abs(fit.ar1 + fit.ma1) < 0.1
        assert fit.ljung_box_pvalue > 0.05

    def test_ar1_recovery(self):
        y = simulate_arma_garch_t(10_000, 0.1, 0.5, 0.0, 0.1, 0.08, 0.85, 7.0, stream(60))
        fit = fit_arma_garch_t(y)
        assert abs(fit.ar1 - 0.5) < 0.05
        assert abs(fit.ar1) < 1 and fit.alpha1 + fit.beta1 < 1
        assert fit.ljung_box_pvalue > 0.05
        assert abs(fit.loglik - arma_garch_t_loglik(y, *fit.arma, *fit.garch, fit.nu, fit.h0)) < 1e-8
        assert fit.residuals.size == y.size - 1

    def test_too_short(self):
        with pytest.raises(TooFewPoints):
            fit_arma_garch_t(np.arange(20.0))


class TestLjungBox:
    def test_matches_statsmodels(self):
        x = stream(8).standard_normal(500).cumsum() * 0.01 + stream(9).standard_normal(500)
        q, p = ljung_box(x, 12)
        ref = acorr_ljungbox(x, lags=[12])
        assert_allclose(q, ref["lb_stat"].iloc[0], rtol=1e-12)
        assert_allclose(p, ref["lb_pvalue"].iloc[0], rtol=1e-10)

    def test_size(self):
        rng = stream(10)
        rejects = sum(ljung_box(rng.standard_normal(10_000), 20)[1] < 0.05 for _ in range(1000))
        assert 0.03 <= rejects / 1000 <= 0.07

    def test_power(self):
        rng = stream(11)
        e = rng.standard_normal(500)
        x = np.empty(500)
        x[0] = e[0]
        for t in range(1, 500):
            x[t] = 0.9 * x[t - 1] + e[t]
        assert ljung_box(x, 20)[1] < 1e-6

    def test_errors(self):
        with pytest.raises(DataError):
            ljung_box(np.ones(100), 5)
        with pytest.raises(TooFewPoints):
            ljung_box(np.arange(5.0), 5)
