"""Acceptance criteria, one test per criterion at its stated tolerance and
runtime budget. Each prints one PASS, FAIL or SKIP line, and the terminal
summary repeats them. One-time JIT compilation is warmed up before timing."""

import contextlib
import math
import os
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, stats

from ndi.dist import gh_log_mgf, nig, nig_fit_mle, nig_pdf, nig_sample, standardized_nig
from ndi.garch import GarchNigModel, fit_garch_nig_returns
from ndi.index import build_ndi
from ndi.ingest import (
    EVENT_TYPES,
    FLOOD_FAMILY,
    CpiTable,
    canonical_event_type,
    ingest_files,
    semimonthly_periods,
)
from ndi.pricing import PricingConfig, bs_call, implied_vol, price_options, simulate_q_paths, solve_esscher
from ndi.riskbudget import equal_weights, etl_mctr, pctr, return_panel, risk_budget, std_mctr
from ndi.rng import stream
from ndi.stress import BivNigParams, coes, coetl, covar, simulate_bivariate_nig
from ndi.synth import SynthConfig, write_synthetic_inputs

TABLE = Path(__file__).parent / "data" / "budget_table.csv"
REAL_DATA_ENV = ("NDI_STORM_CSV", "NDI_CPI", "NDI_MAX_TEMP", "NDI_PDSI")


@contextlib.contextmanager
def criterion(record, number: int, title: str, budget: float):
    t0 = time.perf_counter()
    try:
        yield
    except pytest.skip.Exception as exc:
        record((number, title, "SKIP", time.perf_counter() - t0, budget, str(exc)))
        print(f"criterion {number} SKIP {title}")
        raise
    except BaseException as exc:
        note = f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        record((number, title, "FAIL", time.perf_counter() - t0, budget, note))
        print(f"criterion {number} FAIL {title}: {note}")
        raise
    elapsed = time.perf_counter() - t0
    ok = elapsed < budget
    note = "" if ok else "runtime over budget"
    record((number, title, "PASS" if ok else "FAIL", elapsed, budget, note))
    print(f"criterion {number} {'PASS' if ok else 'FAIL'} {title} ({elapsed:.2f}s of {budget:g}s)")
    assert ok, f"criterion {number} took {elapsed:.1f}s, budget {budget}s"


@pytest.fixture(scope="module")
def model():
    m = GarchNigModel(m=0.002, a=0.85, b=0.1, lambda0=0.05, innovation=standardized_nig(1.5, -0.2),
                      riskfree=0.001, h0=0.04, forecast_variance=0.03, last_level=7.0)
    # compile the path kernels outside the timed sections
    simulate_q_paths(m, PricingConfig(n_paths=2, horizon=2, riskfree=0.001))
    m.simulate(10, stream(0))
    return m


def test_criterion_01_index_identity(record_criterion, tmp_path):
    with criterion(record_criterion, 1, "index identity and 552 periods", 1.0):
        rng = stream(1)
        for _ in range(20):
            k = int(rng.integers(1, 60))
            losses = rng.lognormal(12, 3, size=(300, k)) * (rng.random((300, k)) < 0.7)
            total = losses.sum(axis=1)
            s = build_ndi(total)
            expect = np.array([total[t] ** 0.1 - total[t - 1] ** 0.1 for t in range(1, total.size)])
            scale = np.maximum(np.abs(total[1:]) ** 0.1, np.abs(total[:-1]) ** 0.1)
            assert np.all(np.abs(s.ndi - expect) <= 1e-12 * np.maximum(scale, 1e-300))
        assert len(semimonthly_periods(1996, 2018)) == 552
        paths = write_synthetic_inputs(tmp_path, SynthConfig(mean_events=0.05))
        panel = ingest_files(paths["storms"], CpiTable.from_csv(paths["cpi"]), (1996, 2018))
        series = build_ndi(panel)
        assert panel.losses.shape == (552, 50) and series.ndi.size == 551


def test_criterion_02_esscher(record_criterion, model):
    with criterion(record_criterion, 2, "Esscher closed form and martingale condition", 1.0):
        for mean, var, r in [(0.01, 0.04, 0.002), (-0.02, 0.09, 0.001), (0.0, 0.5, 0.03), (0.05, 0.01, 0.0)]:
            alpha = 1e7  # Gaussian limit
            sol = solve_esscher(nig(alpha, 0.0, var * alpha, mean), riskfree=r)
            assert abs(sol.theta - (r - mean - var / 2) / var) < 1e-8
        cfg = PricingConfig(n_paths=200, horizon=24, riskfree=model.riskfree, seed=2)
        ps = simulate_q_paths(model, cfg)
        inn, r = model.innovation, model.riskfree
        worst = 0.0
        for i in range(ps.n_paths):
            for t in range(ps.horizon):
                h = ps.variance[i, t]
                law = inn.scaled(math.sqrt(h), r + model.lambda0 * math.sqrt(h) - h / 2)
                worst = max(worst, abs(float(gh_log_mgf(1.0, law.tilted(ps.theta[i, t]))) - r))
        # the log-MGF gap equals the relative error of MGF(1) against e^{r'}
        assert worst < 1e-10, worst


def test_criterion_03_martingale(record_criterion, model):
    with criterion(record_criterion, 3, "risk-neutral martingale at N = 100,000", 120.0):
        cfg = PricingConfig(n_paths=100_000, horizon=24, riskfree=model.riskfree, seed=3)
        ps = simulate_q_paths(model, cfg)
        disc = math.exp(-cfg.riskfree * cfg.horizon) * ps.s[:, -1] / ps.s[0, 0]
        se = disc.std(ddof=1) / math.sqrt(disc.size)
        assert abs(disc.mean() - 1) < 4 * se


def test_criterion_04_pricing_identities(record_criterion, model):
    with criterion(record_criterion, 4, "parity and strike monotonicity at N = 10,000", 60.0):
        for underlying, strikes in (("ndi", np.linspace(-2, 2, 41)), ("level", np.linspace(5, 9, 41))):
            cfg = PricingConfig(n_paths=10_000, horizon=24, strikes=tuple(strikes), riskfree=model.riskfree,
                                seed=4, underlying=underlying)
            ps = simulate_q_paths(model, cfg)
            sf = price_options(ps, cfg)
            x = ps.ndi if underlying == "ndi" else ps.s[:, 1:]
            disc = np.exp(-cfg.riskfree * sf.maturities)[:, None]
            parity = disc * (x.mean(axis=0)[:, None] - sf.strikes[None, :])
            assert np.max(np.abs(sf.call - sf.put - parity)) < 1e-12
            assert np.all(np.diff(sf.call, axis=1) <= 0)
            assert np.all(np.diff(sf.put, axis=1) >= 0)


def test_criterion_05_implied_vol(record_criterion):
    with criterion(record_criterion, 5, "implied-vol round trip", 1.0):
        for sigma in (0.1, 0.3, 1.0):
            for strike in (80.0, 100.0, 120.0):
                for T in (0.25, 1.0, 2.0):
                    price = float(bs_call(100.0, strike, T, 0.02, sigma))
                    assert abs(implied_vol(price, 100.0, strike, T, 0.02) - sigma) < 1e-5


def test_criterion_06_distribution(record_criterion):
    with criterion(record_criterion, 6, "NIG MLE, sampler KS and density mass", 120.0):
        true = nig(2.0, 0.5, 1.0, 1.0)
        fit = nig_fit_mle(nig_sample(true, stream(100), 50_000))
        p = fit.params
        for est, ref in [(p.alpha, 2.0), (p.beta, 0.5), (p.delta, 1.0), (p.mu, 1.0)]:
            assert abs(est / ref - 1) < 0.05, (est, ref)
        q = nig(2.0, 0.5, 1.0, 0.0)
        x = nig_sample(q, stream(11), 100_000)
        grid = np.linspace(-12, 12, 2401)
        f = lambda t: float(nig_pdf(t, q))  # noqa: E731
        mass = [integrate.quad(f, -np.inf, grid[0])[0]]
        mass += [integrate.quad(f, grid[i], grid[i + 1])[0] for i in range(len(grid) - 1)]
        cdf = np.cumsum(mass)
        assert stats.kstest(x, lambda t: np.interp(t, grid, cdf)).pvalue > 0.01
        for params in (q, nig(1.0, -0.6, 0.5, 2.0), nig(30.0, 5.0, 3.0, -1.0)):
            g = lambda t: float(nig_pdf(t, params))  # noqa: E731
            total = sum(integrate.quad(g, a, b, limit=200)[0] for a, b in
                        ((-np.inf, params.mu - 20), (params.mu - 20, params.mu + 20), (params.mu + 20, np.inf)))
            assert abs(total - 1) < 1e-6


def test_criterion_07_garch(record_criterion, model):
    with criterion(record_criterion, 7, "GARCH recovery and filter round trip", 180.0):
        r, h, z = model.simulate(5000, stream(2))
        h2, eps, _ = model.filter(r)
        assert np.max(np.abs(eps - z)) < 1e-10
        true = GarchNigModel(m=0.05, a=0.9, b=0.05, lambda0=0.1, innovation=standardized_nig(1e4, 0.0), h0=1.0)
        r, _, _ = true.simulate(50_000, stream(300))
        fit = fit_garch_nig_returns(r)
        for est, ref in [(fit.m, 0.05), (fit.a, 0.9), (fit.b, 0.05)]:
            assert abs(est / ref - 1) < 0.10, (est, ref)


def test_criterion_08_risk_budgets(record_criterion, tmp_path):
    with criterion(record_criterion, 8, "risk-budget identities and table structure", 60.0):
        rng = stream(8)
        x = 0.4 * rng.standard_t(4, size=(2000, 1)) + rng.standard_t(3, size=(2000, 12)) * np.linspace(0.5, 2, 12)
        w = equal_weights(12)
        m = std_mctr(x, w)
        assert abs(m.sum() - (x @ w).std(ddof=1)) < 1e-10
        for level in (0.95, 0.99):
            e = etl_mctr(x, w, level)
            rp = x @ w
            assert e.sum() == pytest.approx(-rp[rp <= np.quantile(rp, 1 - level)].mean(), rel=1e-14)
            assert abs(pctr(e).sum() - 100) < 1e-8
        assert abs(pctr(m).sum() - 100) < 1e-8
        base = risk_budget(x, w)
        for c in (2.0, 0.25):  # powers of two scale without rounding
            scaled = risk_budget(c * x, w)
            for k in base.mctr:
                assert np.array_equal(scaled.mctr[k], c * base.mctr[k])
                assert np.allclose(scaled.pctr[k], base.pctr[k], rtol=0, atol=1e-12)
        sym = stream(21).standard_t(5, size=(100_000, 5))
        ws = equal_weights(5)
        for level in (0.95, 0.99):
            e = etl_mctr(sym, ws, level)
            tail = sym @ ws <= np.quantile(sym @ ws, 1 - level)
            se = 100 * ws * sym[tail].std(axis=0, ddof=1) / math.sqrt(tail.sum()) / e.sum()
            assert np.all(np.abs(pctr(e) - 20) < 3 * se)
        p = pctr(std_mctr(sym, ws))
        xc = sym - sym.mean(axis=0)
        rc = xc @ ws
        infl = ws * (xc * rc[:, None] - (p / 100) * (rc**2)[:, None]) / rc.var()
        assert np.all(np.abs(p - 20) < 3 * 100 * infl.std(axis=0) / math.sqrt(sym.shape[0]))
        paths = write_synthetic_inputs(tmp_path, SynthConfig(seed=8))
        panel = ingest_files(paths["storms"], CpiTable.from_csv(paths["cpi"]), (1996, 2018))
        rep = risk_budget(return_panel(panel), min_tail=4)
        rep.to_csv(tmp_path / "table.csv", sort_by="ETL95")
        got, published = pd.read_csv(tmp_path / "table.csv"), pd.read_csv(TABLE)
        assert list(got.columns) == list(published.columns)
        assert sorted(got.event_type) == sorted(EVENT_TYPES)
        # the published rows name the same types, except Marine Hail for Marine Heavy Freezing Spray
        names = {canonical_event_type(t) or t for t in published.event_type}
        assert names ^ set(EVENT_TYPES) == {"Marine Hail", "Marine Heavy Freezing Spray"}


def test_criterion_09_co_measures(record_criterion):
    with criterion(record_criterion, 9, "co-measure oracles", 120.0):
        rng = stream(50)
        x, y = rng.standard_normal(100_000), rng.standard_normal(100_000)
        for q in (0.10, 0.05):
            assert abs(covar(x, y, q) / np.quantile(y, q) - 1) < 0.02
        for q in (0.10, 0.05, 0.01):
            assert coetl(y, y, q) == y[y <= np.quantile(y, q)].mean()
        p = BivNigParams(2.0, [0.3, -0.2], 1.5, [0.1, 0.2], np.array([[1.2, 0.4], [0.4, 1.0]]) / math.sqrt(1.04))
        sim = simulate_bivariate_nig(p, 200_000, stream(37))
        rows = [(covar(sim[:, 0], sim[:, 1], q), coes(sim[:, 0], sim[:, 1], q), coetl(sim[:, 0], sim[:, 1], q))
                for q in (0.10, 0.05, 0.01)]
        for a, b in zip(rows, rows[1:]):
            assert all(lo <= hi for lo, hi in zip(b, a))
        for seed in range(20):
            g = stream(900, seed)
            n = int(g.integers(5_000, 20_000))
            u = g.standard_t(3, n)
            v = g.uniform(-1, 1) * u + g.standard_t(4, n)
            for q in (0.10, 0.05, 0.01):
                assert coes(u, v, q) <= covar(u, v, q)


@pytest.mark.realdata
def test_criterion_10_real_data(record_criterion, tmp_path):
    with criterion(record_criterion, 10, "qualitative reproduction on the real data", 600.0):
        missing = [k for k in REAL_DATA_ENV if not os.environ.get(k)]
        if missing:
            pytest.skip(f"set {', '.join(missing)} to run")
        from ndi.cli import main

        storms = [p for p in os.environ["NDI_STORM_CSV"].split(os.pathsep) if p]
        code = main(["all", "--storm-csv", *storms, "--cpi", os.environ["NDI_CPI"],
                     "--max-temp", os.environ["NDI_MAX_TEMP"], "--pdsi", os.environ["NDI_PDSI"],
                     "--out", str(tmp_path)])
        assert code == 0
        table = pd.read_csv(tmp_path / "budget_table.csv").sort_values("PCTR_ETL95", ascending=False)
        top = list(table.event_type[:5])
        assert {"Flood", "Flash Flood"} <= set(top), top
        assert set(top) & set(FLOOD_FAMILY)
        stress = pd.read_csv(tmp_path / "stress_table.csv").set_index(["factor", "q"])
        assert stress.loc[("max_temp", 0.01), "coetl"] > stress.loc[("pdsi", 0.01), "covar"]
