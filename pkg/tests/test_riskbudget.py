import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose

from ndi.errors import (
    OverlappingGroups,
    PanelTooShort,
    TooFewTailScenarios,
    UncoveredTypes,
    ZeroPortfolioVariance,
    ZeroTotalRisk,
)
from ndi.ingest import EVENT_TYPES, FLOOD_FAMILY, LossPanel, semimonthly_periods
from ndi.riskbudget import (
    ReturnPanel,
    equal_weights,
    etl_mctr,
    group_mctr,
    pctr,
    read_groups,
    return_panel,
    risk_budget,
    rolling_budgets,
    std_mctr,
    window_count,
)
from ndi.rng import stream

TABLE = Path(__file__).parent / "data" / "budget_table.csv"


def brute_std_mctr(x, w):
    """Finite-difference Euler contributions ``w_i dR/dw_i`` of the portfolio std."""
    cov = np.cov(x, rowvar=False)
    R = lambda v: math.sqrt(v @ cov @ v)  # noqa: E731
    out = np.empty_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        h = 1e-6
        e[i] = h
        out[i] = w[i] * (R(w + e) - R(w - e)) / (2 * h)
    return out


def brute_etl(x, w, level):
    """Expected tail loss from a sorted scan, with the tail cutoff found by
    explicit type-7 interpolation."""
    rp = x @ w
    srt = np.sort(rp)
    h = (rp.size - 1) * (1 - level)
    lo = int(math.floor(h))
    var = srt[lo] + (h - lo) * (srt[min(lo + 1, rp.size - 1)] - srt[lo])
    tail = [t for t in range(rp.size) if rp[t] <= var]
    return -float(np.mean([rp[t] for t in tail])), tail


@pytest.fixture(scope="module")
def panel():
    rng = stream(20)
    n, k = 1200, 12
    common = rng.standard_t(4, size=(n, 1))
    x = 0.5 * common + rng.standard_t(3, size=(n, k)) * np.linspace(0.5, 2, k)
    return ReturnPanel([str(i) for i in range(n)], [f"T{i}" for i in range(k)], x)


class TestStd:
    def test_two_uncorrelated(self):
        # exact orthogonal columns with equal variance
        x = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float)
        sigma = x[:, 0].std(ddof=1)
        m = std_mctr(x, [0.5, 0.5])
        assert_allclose(m, sigma / (2 * math.sqrt(2)), rtol=1e-14)
        assert_allclose(pctr(m), [50.0, 50.0], rtol=1e-14)

    def test_single_asset(self, panel):
        w = np.zeros(12)
        w[3] = 1.0
        m = std_mctr(panel, w)
        assert_allclose(m[3], panel.returns[:, 3].std(ddof=1), rtol=1e-12)
        assert np.all(m[np.arange(12) != 3] == 0)

    def test_euler_and_finite_difference(self, panel):
        w = equal_weights(12)
        m = std_mctr(panel, w)
        port = (panel.returns @ w).std(ddof=1)
        assert abs(m.sum() - port) < 1e-10 * port
        assert_allclose(m, brute_std_mctr(panel.returns, w), rtol=1e-6)

    def test_zero_variance(self):
        with pytest.raises(ZeroPortfolioVariance):
            std_mctr(np.ones((10, 3)))

    def test_constant_panel_with_rounding_residue(self):
        # the mean of 60 copies of this value is not exactly the value
        x = np.full((60, 4), 1.07033257)
        assert np.any(x - x.mean(axis=0) != 0)
        with pytest.raises(ZeroPortfolioVariance):
            std_mctr(x, np.array([0.1, 0.2, 0.3, 0.4]))


class TestEtl:
    @pytest.mark.parametrize("level", [0.95, 0.99])
    def test_sum_is_portfolio_etl(self, panel, level):
        w = equal_weights(12)
        m = etl_mctr(panel, w, level)
        etl, tail = brute_etl(panel.returns, w, level)
        assert abs(m.sum() - etl) < 1e-12 * abs(etl)
        assert_allclose(m, -w * panel.returns[tail].mean(axis=0), rtol=1e-12)

    def test_null_asset(self, panel):
        x = panel.returns.copy()
        x[:, 5] = 0.0
        assert etl_mctr(x, level=0.95)[5] == 0.0

    def test_ties_included(self):
        x = np.array([[-1.0], [-1.0], [-1.0], [2.0], [3.0]])
        # 40% quantile is -1: all three tied periods are in the tail
        assert_allclose(etl_mctr(x, [1.0], 0.6, min_tail=3), [1.0])

    def test_too_few_tail(self):
        with pytest.raises(TooFewTailScenarios):
            etl_mctr(np.random.default_rng(0).normal(size=(400, 3)), level=0.99)
        assert etl_mctr(np.random.default_rng(0).normal(size=(400, 3)), level=0.99, min_tail=4).shape == (3,)

    def test_symmetric_assets(self):
        n_obs, k = 100_000, 5
        x = stream(21).standard_t(5, size=(n_obs, k))
        w = equal_weights(k)
        for level in (0.95, 0.99):
            m = etl_mctr(x, w, level)
            tail = x @ w <= np.quantile(x @ w, 1 - level)
            se = 100 * w * x[tail].std(axis=0, ddof=1) / math.sqrt(tail.sum()) / m.sum()
            assert np.all(np.abs(pctr(m) - 100 / k) < 3 * se)
        m = std_mctr(x, w)
        # delta-method SE of the share w_i cov(x_i, r_p) / var(r_p)
        p = pctr(m)
        xc = x - x.mean(axis=0)
        rc = xc @ w
        infl = w * (xc * rc[:, None] - (p / 100) * (rc**2)[:, None]) / rc.var()
        se = 100 * infl.std(axis=0) / math.sqrt(n_obs)
        assert np.all(np.abs(p - 100 / k) < 3 * se)


class TestPctr:
    def test_published_table(self):
        table = pd.read_csv(TABLE)
        assert len(table) == 50
        for m in ("ETL95", "ETL99", "Std"):
            got = pctr(table[f"MCTR_{m}"].to_numpy())
            # table entries are rounded to 4 decimals (MCTR) and 2 (PCTR)
            assert_allclose(got, table[f"PCTR_{m}"].to_numpy(), atol=0.01)

    def test_named_rows(self):
        table = pd.read_csv(TABLE).set_index("event_type")
        p95 = pctr(table["MCTR_ETL95"].to_numpy())
        p99 = pctr(table["MCTR_ETL99"].to_numpy())
        i_ff = table.index.get_loc("Flash Flood")
        i_tor = table.index.get_loc("Tornado")
        # the MCTR inputs carry 4 decimals, enough to pin PCTR to +-0.01 points
        assert abs(p95[i_ff] - 4.96) < 0.01
        assert abs(p99[i_tor] + 1.13) < 0.01

    def test_equal(self):
        assert_allclose(pctr(np.full(50, 0.3)), 2.0, rtol=1e-14)

    def test_zero_total(self):
        with pytest.raises(ZeroTotalRisk):
            pctr([1.0, -1.0])


class TestGroups:
    def test_singletons_and_all(self):
        m = np.arange(1.0, 51.0)
        single = group_mctr(m, EVENT_TYPES, {t: [t] for t in EVENT_TYPES})
        assert [single[t] for t in EVENT_TYPES] == list(m)
        assert group_mctr(m, EVENT_TYPES, {"all": list(EVENT_TYPES)}) == {"all": m.sum()}

    def test_flood_family(self):
        m = np.arange(1.0, 51.0)
        groups = {"flood": list(FLOOD_FAMILY), "other": [t for t in EVENT_TYPES if t not in FLOOD_FAMILY]}
        g = group_mctr(m, EVENT_TYPES, groups)
        assert g["flood"] == sum(m[EVENT_TYPES.index(t)] for t in FLOOD_FAMILY)
        assert g["flood"] + g["other"] == m.sum()

    def test_errors(self):
        types = ["a", "b", "c"]
        with pytest.raises(OverlappingGroups):
            group_mctr([1, 2, 3], types, {"x": ["a", "b"], "y": ["b", "c"]})
        with pytest.raises(UncoveredTypes):
            group_mctr([1, 2, 3], types, {"x": ["a", "b"]})

    def test_read_groups(self, tmp_path):
        p = tmp_path / "g.csv"
        p.write_text("event_type,group\nFlood,flood\nFlash Flood,flood\nHail,other\n")
        assert read_groups(p) == {"flood": ["Flood", "Flash Flood"], "other": ["Hail"]}


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (60, 4), elements=st.floats(-10, 10)), st.floats(0.01, 100), st.permutations(range(4)))
    def test_scale_and_permutation(self, x, c, perm):
        w = np.array([0.1, 0.2, 0.3, 0.4])
        perm = list(perm)
        try:
            base = risk_budget(ReturnPanel(list(range(60)), list("abcd"), x), w, levels=(0.9,), min_tail=1)
        except (ZeroPortfolioVariance, ZeroTotalRisk):
            return
        scaled = risk_budget(ReturnPanel(list(range(60)), list("abcd"), c * x), w, levels=(0.9,), min_tail=1)
        permuted = risk_budget(ReturnPanel(list(range(60)), [list("abcd")[p] for p in perm], x[:, perm]),
                               w[perm], levels=(0.9,), min_tail=1)
        for m in base.mctr:
            assert_allclose(scaled.mctr[m], c * base.mctr[m], rtol=1e-9, atol=1e-12 * c)
            assert_allclose(scaled.pctr[m], base.pctr[m], rtol=1e-8, atol=1e-8)
            assert_allclose(permuted.mctr[m], base.mctr[m][perm], rtol=1e-10, atol=1e-14)
        assert abs(base.pctr["Std"].sum() - 100) < 1e-8
        assert abs(base.pctr["ETL90"].sum() - 100) < 1e-8


class TestRolling:
    def test_window_count(self, panel):
        small = panel.slice(0, 401)
        df = rolling_budgets(small, levels=(0.95,), window=400)
        assert df["window"].nunique() == 2 == window_count(401, 400)
        with pytest.raises(PanelTooShort):
            rolling_budgets(panel.slice(0, 400), window=400)

    def test_matches_one_shot(self, panel):
        df = rolling_budgets(panel.slice(0, 420), window=400, min_tail=4)
        one = risk_budget(panel.slice(7, 407), min_tail=4)
        got = df[(df.window == 7) & (df.measure == "ETL99")]["mctr"].to_numpy()
        assert np.array_equal(got, one.mctr["ETL99"])
        assert df[df.window == 7]["start"].iloc[0] == "7"
        assert set(df.measure) == {"ETL95", "ETL99", "Std"}

    def test_constant_panel(self):
        p = ReturnPanel([str(i) for i in range(405)], ["a", "b"], np.ones((405, 2)))
        with pytest.raises(ZeroPortfolioVariance, match="window 0"):
            rolling_budgets(p, window=400)
        df = rolling_budgets(p, window=400, on_error="record")
        assert df["window"].nunique() == 6 and df["mctr"].isna().all()
        assert df["error"].str.contains("variance").all()


class TestReport:
    def test_table_shape(self, tmp_path):
        periods = semimonthly_periods(1996, 2018)
        rng = stream(22)
        losses = rng.lognormal(10, 3, size=(552, 50)) * (rng.random((552, 50)) < 0.6)
        rp = return_panel(LossPanel(periods, list(EVENT_TYPES), losses))
        assert rp.returns.shape == (551, 50) and rp.labels[0] == "1996-01-16"
        assert_allclose(rp.returns[:, 0], np.diff(losses[:, 0] ** 0.1))
        rep = risk_budget(rp, min_tail=4)
        rep.to_csv(tmp_path / "t.csv", sort_by="ETL95")
        df = pd.read_csv(tmp_path / "t.csv")
        assert list(df.columns) == list(pd.read_csv(TABLE).columns)
        assert len(df) == 50 and np.all(np.diff(df["MCTR_ETL95"]) >= 0)
        for m in ("ETL95", "ETL99", "Std"):
            assert abs(df[f"PCTR_{m}"].sum() - 100) < 1e-6
