"""The Natural Disasters Index: lag-1 differences of a power transform of
total semimonthly losses."""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date

import numpy as np
import pandas as pd

from .errors import TooFewPeriods, TooFewPoints

DEFAULT_EXPONENT = 0.1


def difference(series) -> np.ndarray:
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise TooFewPoints("need at least two points to difference")
    return x[1:] - x[:-1]


def power_transform(loss, exponent: float = DEFAULT_EXPONENT, floor: float | None = None) -> np.ndarray:
    """``max(loss, floor) ** exponent`` (no flooring when ``floor`` is None)."""
    x = np.asarray(loss, dtype=float)
    if floor is not None:
        x = np.maximum(x, floor)
    return x**exponent


@dataclass
class NdiSeries:
    """``s[t] = L_t ** exponent`` for t = 0..T and ``ndi[t-1] = s[t] - s[t-1]``."""

    periods: list
    loss: np.ndarray
    s: np.ndarray
    ndi: np.ndarray
    exponent: float = DEFAULT_EXPONENT

    @property
    def labels(self) -> list[str]:
        return [p.isoformat() if isinstance(p, date) else str(p) for p in self.periods]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"period": self.labels, "L": self.loss, "S": self.s,
                             "NDI": np.r_[np.nan, self.ndi]})

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)

    @classmethod
    def from_csv(cls, path, exponent: float = DEFAULT_EXPONENT) -> NdiSeries:
        df = pd.read_csv(path)
        periods = [date.fromisoformat(p) if len(p) == 10 else p for p in df["period"].astype(str)]
        s = df["S"].to_numpy(dtype=float)
        return cls(periods, df["L"].to_numpy(dtype=float), s, difference(s), exponent)

    def reconstruct_s(self) -> np.ndarray:
        return self.s[0] + np.r_[0.0, np.cumsum(self.ndi)]


def build_ndi(panel, exponent: float = DEFAULT_EXPONENT, periods=None) -> NdiSeries:
    """Build the index from a :class:`~ndi.ingest.LossPanel` or a plain
    total-loss vector."""
    if hasattr(panel, "total_loss"):
        total = np.asarray(panel.total_loss, dtype=float)
        periods = periods if periods is not None else list(panel.periods)
    else:
        total = np.asarray(panel, dtype=float)
    if total.ndim != 1 or total.size < 2:
        raise TooFewPeriods("need at least two periods")
    if np.any(total < 0):
        raise ValueError("total loss must be nonnegative")
    if periods is None:
        periods = list(range(total.size))
    s = power_transform(total, exponent)
    return NdiSeries(list(periods), total, s, difference(s), exponent)


def monthly_ndi(series: NdiSeries) -> pd.Series:
    """Month-end to month-end change of ``s``, labelled ``YYYY-MM``.

    Equals the sum of the two semimonthly index values in each month. The
    first month, which has no preceding month end, is dropped.
    """
    labels = series.labels
    s_end, months = [], []
    for i in range(1, len(labels), 2):
        if labels[i][8:10] != "16":
            raise ValueError("monthly aggregation expects alternating 1st/16th period labels")
        s_end.append(series.s[i])
        months.append(labels[i][:7])
    return pd.Series(difference(s_end), index=months[1:], name="NDI")
