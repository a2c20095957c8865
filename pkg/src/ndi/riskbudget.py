"""Euler risk budgets of a portfolio of event-type loss returns.

Contributions are reported in the loss-positive convention: a positive MCTR
adds risk, a negative one diversifies. Percent contributions are in percent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    OverlappingGroups,
    PanelTooShort,
    TooFewTailScenarios,
    UncoveredTypes,
    ZeroPortfolioVariance,
    ZeroTotalRisk,
)
from .index import DEFAULT_EXPONENT, power_transform

DEFAULT_LEVELS = (0.95, 0.99)
DEFAULT_WINDOW = 400
MIN_TAIL = 10


def equal_weights(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def check_weights(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (n,):
        raise ValueError(f"expected {n} weights, got shape {w.shape}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("weights must be nonnegative and sum to one")
    return w


@dataclass
class ReturnPanel:
    """Per-type loss returns, periods x types."""

    labels: list[str]
    event_types: list[str]
    returns: np.ndarray

    def __post_init__(self):
        self.returns = np.asarray(self.returns, dtype=float)
        if self.returns.shape != (len(self.labels), len(self.event_types)):
            raise ValueError("return matrix shape does not match labels")
        if not np.all(np.isfinite(self.returns)):
            raise ValueError("return panel has missing or non-finite cells")

    def __len__(self) -> int:
        return self.returns.shape[0]

    def slice(self, start: int, stop: int) -> ReturnPanel:
        return ReturnPanel(self.labels[start:stop], self.event_types, self.returns[start:stop])


def return_panel(panel, exponent: float = DEFAULT_EXPONENT) -> ReturnPanel:
    """First differences of ``L ** exponent`` per event type of a
    :class:`~ndi.ingest.LossPanel`. Labels are the later period of each pair."""
    s = power_transform(panel.losses, exponent)
    return ReturnPanel(panel.labels[1:], list(panel.event_types), np.diff(s, axis=0))


def _as_matrix(panel) -> np.ndarray:
    return panel.returns if isinstance(panel, ReturnPanel) else np.asarray(panel, dtype=float)


# ---------------------------------------------------------------------------
# Contributions
# ---------------------------------------------------------------------------


def std_mctr(panel, w=None) -> np.ndarray:
    """``w_i (S w)_i / sqrt(w' S w)`` with ``S`` the sample covariance."""
    x = _as_matrix(panel)
    w = equal_weights(x.shape[1]) if w is None else check_weights(w, x.shape[1])
    if x.shape[0] < 2:
        raise PanelTooShort("need at least two observations")
    xc = x - x.mean(axis=0)
    # S w without forming S
    sw = xc.T @ (xc @ w) / (x.shape[0] - 1)
    var = float(w @ sw)
    # centring leaves rounding residue of order n * eps * |x|, so a constant
    # portfolio can show a tiny positive variance
    noise = x.shape[0] * np.finfo(float).eps * float(np.abs(x).max()) * float(np.abs(w).sum())
    if not np.sqrt(max(var, 0.0)) > noise:
        raise ZeroPortfolioVariance("portfolio variance is zero")
    return w * sw / np.sqrt(var)


def tail_scenarios(portfolio_returns, level: float) -> np.ndarray:
    """Boolean mask of periods at or below the ``1 - level`` empirical
    quantile (type 7) of the portfolio return."""
    rp = np.asarray(portfolio_returns, dtype=float)
    var = np.quantile(rp, 1.0 - level)
    return rp <= var


def etl_mctr(panel, w=None, level: float = 0.95, min_tail: int = MIN_TAIL) -> np.ndarray:
    """Historical-scenario Euler contributions to expected tail loss:
    ``-w_i * mean(r_i)`` over the portfolio's tail periods."""
    x = _as_matrix(panel)
    w = equal_weights(x.shape[1]) if w is None else check_weights(w, x.shape[1])
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    tail = tail_scenarios(x @ w, level)
    k = int(tail.sum())
    if k < min_tail:
        raise TooFewTailScenarios(f"{k} tail scenarios at level {level}, need {min_tail}")
    return -w * x[tail].mean(axis=0)


def pctr(mctr) -> np.ndarray:
    """Percent contributions ``100 * MCTR_i / sum(MCTR)``."""
    mctr = np.asarray(mctr, dtype=float)
    total = mctr.sum()
    if total == 0 or not np.isfinite(total):
        raise ZeroTotalRisk("total risk is zero")
    return 100.0 * mctr / total


def group_mctr(mctr, event_types, groups: dict[str, list[str]]) -> dict[str, float]:
    """Sum contributions over a partition of the event types."""
    seen: dict[str, str] = {}
    for g, members in groups.items():
        for t in members:
            if t in seen:
                raise OverlappingGroups(f"{t!r} is in both {seen[t]!r} and {g!r}")
            seen[t] = g
    missing = [t for t in event_types if t not in seen]
    unknown = [t for t in seen if t not in event_types]
    if missing or unknown:
        raise UncoveredTypes(f"groups do not partition the types: missing {missing}, unknown {unknown}")
    pos = {t: i for i, t in enumerate(event_types)}
    mctr = np.asarray(mctr, dtype=float)
    return {g: float(sum(mctr[pos[t]] for t in members)) for g, members in groups.items()}


def read_groups(path) -> dict[str, list[str]]:
    """Two-column CSV ``event_type,group``."""
    df = pd.read_csv(path)
    out: dict[str, list[str]] = {}
    for t, g in zip(df.iloc[:, 0].astype(str), df.iloc[:, 1].astype(str)):
        out.setdefault(g, []).append(t)
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def _measure_name(m) -> str:
    return "Std" if m == "std" else f"ETL{round(100 * float(m))}"


@dataclass
class RiskBudgetReport:
    """MCTR and PCTR per event type for each measure (``"Std"``,
    ``"ETL95"``, ...)."""

    event_types: list[str]
    mctr: dict[str, np.ndarray]
    pctr: dict[str, np.ndarray]
    weights: np.ndarray
    n_obs: int
    tail_counts: dict[str, int] = field(default_factory=dict)

    def total(self, measure: str) -> float:
        return float(self.mctr[measure].sum())

    def to_frame(self, sort_by: str | None = None) -> pd.DataFrame:
        df = pd.DataFrame({"event_type": self.event_types})
        for m in self.mctr:
            df[f"MCTR_{m}"] = self.mctr[m]
            df[f"PCTR_{m}"] = self.pctr[m]
        if sort_by is not None:
            df = df.sort_values(f"MCTR_{sort_by}", kind="mergesort").reset_index(drop=True)
        return df

    def to_csv(self, path, sort_by: str | None = None) -> None:
        self.to_frame(sort_by).to_csv(path, index=False, float_format="%.10g")


def risk_budget(panel: ReturnPanel, w=None, levels=DEFAULT_LEVELS, include_std: bool = True,
                min_tail: int = MIN_TAIL) -> RiskBudgetReport:
    x = _as_matrix(panel)
    w = equal_weights(x.shape[1]) if w is None else check_weights(w, x.shape[1])
    # Std first so a degenerate window reports zero variance rather than a tail error
    std = std_mctr(x, w) if include_std else None
    mctr, tails = {}, {}
    for q in levels:
        name = _measure_name(q)
        mctr[name] = etl_mctr(x, w, q, min_tail)
        tails[name] = int(tail_scenarios(x @ w, q).sum())
    if include_std:
        mctr["Std"] = std
    names = panel.event_types if isinstance(panel, ReturnPanel) else [str(i) for i in range(x.shape[1])]
    return RiskBudgetReport(list(names), mctr, {k: pctr(v) for k, v in mctr.items()}, w, x.shape[0], tails)


def rolling_budgets(panel: ReturnPanel, w=None, window: int = DEFAULT_WINDOW, levels=DEFAULT_LEVELS,
                    include_std: bool = True, min_tail: int = MIN_TAIL, step: int = 1,
                    on_error: str = "raise") -> pd.DataFrame:
    """Budgets on every window ``[k, k + window)``, ``k = 0, step, ...``.
    The panel must be longer than one window.

    Long format: ``window, start, end, event_type, measure, mctr, pctr``.
    With ``on_error="record"`` a failing window yields NaN rows and an
    ``error`` message instead of aborting.
    """
    n = len(panel)
    if n < window + 1:
        raise PanelTooShort(f"panel has {n} periods, need at least {window + 1}")
    frames = []
    for k, start in enumerate(range(0, n - window + 1, step)):
        sl = panel.slice(start, start + window)
        try:
            rep = risk_budget(sl, w, levels, include_std, min_tail)
        except (ZeroPortfolioVariance, ZeroTotalRisk, TooFewTailScenarios) as exc:
            if on_error == "raise":
                raise type(exc)(f"window {k} ({sl.labels[0]}..{sl.labels[-1]}): {exc}") from exc
            frames.append(pd.DataFrame({"window": k, "start": sl.labels[0], "end": sl.labels[-1],
                                        "event_type": panel.event_types, "measure": "",
                                        "mctr": np.nan, "pctr": np.nan, "error": str(exc)}))
            continue
        for m in rep.mctr:
            frames.append(pd.DataFrame({"window": k, "start": sl.labels[0], "end": sl.labels[-1],
                                        "event_type": rep.event_types, "measure": m,
                                        "mctr": rep.mctr[m], "pctr": rep.pctr[m], "error": ""}))
    return pd.concat(frames, ignore_index=True)


def window_count(n_periods: int, window: int = DEFAULT_WINDOW, step: int = 1) -> int:
    return max(0, (n_periods - window) // step + 1)
