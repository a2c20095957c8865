"""Storm-event ingestion: damage parsing, inflation adjustment and
semimonthly aggregation into a per-event-type loss panel."""

from __future__ import annotations

import calendar
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import EmptyWindow, MalformedDamage, MissingCpiYear, NoRecords

log = logging.getLogger(__name__)

EVENT_TYPES = (
    "Avalanche", "Blizzard", "Coastal Flood", "Cold/Wind Chill", "Debris Flow",
    "Dense Fog", "Dense Smoke", "Drought", "Dust Devil", "Dust Storm",
    "Excessive Heat", "Extreme Cold/Wind Chill", "Flash Flood", "Flood", "Frost/Freeze",
    "Funnel Cloud", "Freezing Fog", "Hail", "Heat", "Heavy Rain",
    "Heavy Snow", "High Surf", "High Wind", "Hurricane (Typhoon)", "Ice Storm",
    "Lake-Effect Snow", "Lakeshore Flood", "Lightning", "Marine Dense Fog",
    "Marine Heavy Freezing Spray",
    "Marine High Wind", "Marine Hurricane/Typhoon", "Marine Lightning", "Marine Strong Wind",
    "Marine Thunderstorm Wind",
    "Rip Current", "Seiche", "Sleet", "Storm Surge/Tide", "Strong Wind",
    "Thunderstorm Wind", "Tornado", "Tropical Depression", "Tropical Storm", "Tsunami",
    "Volcanic Ash", "Waterspout", "Wildfire", "Winter Storm", "Winter Weather",
)

FLOOD_FAMILY = ("Flood", "Flash Flood", "Coastal Flood", "Lakeshore Flood")

DEFAULT_COLUMNS = {
    "year_month": "BEGIN_YEARMONTH",
    "day": "BEGIN_DAY",
    "event_type": "EVENT_TYPE",
    "damage": "DAMAGE_PROPERTY",
    "state": "STATE",
}

_SPLIT = re.compile(r"[\s/()-]+")
_DAMAGE = re.compile(r"^\s*(\d+(?:\.\d*)?|\.\d+)\s*([KMB]?)\s*$", re.IGNORECASE)
_SCALE = {"": 1.0, "K": 1e3, "M": 1e6, "B": 1e9}


def normalize_event_type(name: str) -> str:
    """Matching key: upper case, with whitespace, '/' and parentheses
    collapsed to single spaces."""
    return _SPLIT.sub(" ", name).strip().upper()


_CANONICAL = {normalize_event_type(t): t for t in EVENT_TYPES}


def canonical_event_type(name: str, aliases: dict[str, str] | None = None) -> str | None:
    """Canonical event-type name for ``name``, or None if unknown."""
    key = normalize_event_type(name)
    if aliases:
        for raw, target in aliases.items():
            if normalize_event_type(raw) == key:
                return _CANONICAL.get(normalize_event_type(target), target)
    return _CANONICAL.get(key)


@dataclass(frozen=True)
class StormEventRecord:
    begin_date: date
    event_type: str
    damage_property_raw: str
    state: str = ""


def parse_damage(raw: str) -> float:
    """Dollar amount from a NOAA damage string such as ``"25.00K"``.

    Empty text is zero. Raises :class:`MalformedDamage` otherwise.
    """
    if raw is None or not str(raw).strip():
        return 0.0
    m = _DAMAGE.match(str(raw))
    if m is None:
        raise MalformedDamage(f"cannot parse damage amount {raw!r}")
    return float(m.group(1)) * _SCALE[m.group(2).upper()]


class CpiTable:
    """Year -> multiplicative factor into base-year dollars."""

    def __init__(self, factors: dict[int, float], base_year: int | None = None):
        self.factors = {int(y): float(f) for y, f in factors.items()}
        bad = [y for y, f in self.factors.items() if not f > 0]
        if bad:
            raise ValueError(f"non-positive deflators for years {bad}")
        if base_year is None:
            ones = [y for y, f in self.factors.items() if f == 1.0]
            base_year = max(ones) if ones else max(self.factors)
        self.base_year = int(base_year)

    def deflator(self, year: int) -> float:
        try:
            return self.factors[int(year)]
        except KeyError:
            raise MissingCpiYear(f"no CPI deflator for year {year}") from None

    def check_covers(self, years) -> None:
        missing = sorted(set(int(y) for y in years) - set(self.factors))
        if missing:
            raise MissingCpiYear(f"CPI table lacks years {missing}")

    @classmethod
    def from_csv(cls, path, base_year: int | None = None) -> CpiTable:
        df = pd.read_csv(path)
        ycol, fcol = df.columns[:2]
        return cls(dict(zip(df[ycol].astype(int), df[fcol].astype(float))), base_year)

    @classmethod
    def identity(cls, years, base_year: int | None = None) -> CpiTable:
        years = list(years)
        return cls({y: 1.0 for y in years}, base_year or max(years))


def adjust_inflation(amount: float, year: int, cpi: CpiTable) -> float:
    return amount * cpi.deflator(year)


# ---------------------------------------------------------------------------
# Semimonthly periods
# ---------------------------------------------------------------------------


def semimonthly_periods(start_year: int, end_year: int) -> list[date]:
    """Start dates of every half-month (1st and 16th) in whole years
    ``start_year..end_year`` inclusive."""
    if end_year < start_year:
        raise EmptyWindow(f"window {start_year}..{end_year} is empty")
    return [date(y, m, d) for y in range(start_year, end_year + 1)
            for m in range(1, 13) for d in (1, 16)]


def period_index(d: date, start_year: int) -> int:
    return 24 * (d.year - start_year) + 2 * (d.month - 1) + (0 if d.day <= 15 else 1)


def period_end(start: date) -> date:
    if start.day == 1:
        return date(start.year, start.month, 15)
    return date(start.year, start.month, calendar.monthrange(start.year, start.month)[1])


@dataclass
class IngestStats:
    records_read: int = 0
    accepted: int = 0
    skipped_malformed: int = 0
    skipped_unknown_type: int = 0
    skipped_out_of_window: int = 0
    unknown_types: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossPanel:
    """Inflation-adjusted losses, periods x event types."""

    periods: list[date]
    event_types: list[str]
    losses: np.ndarray
    stats: IngestStats | None = None

    def __post_init__(self):
        self.losses = np.asarray(self.losses, dtype=float)
        if self.losses.shape != (len(self.periods), len(self.event_types)):
            raise ValueError("loss matrix shape does not match labels")
        if np.any(self.losses < 0):
            raise ValueError("losses must be nonnegative")

    @property
    def total_loss(self) -> np.ndarray:
        return self.losses.sum(axis=1)

    @property
    def labels(self) -> list[str]:
        return [p.isoformat() for p in self.periods]

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.losses, columns=list(self.event_types))
        df.insert(0, "period", self.labels)
        df["TOTAL"] = self.total_loss
        return df

    def to_csv(self, path, stats_path=None) -> None:
        self.to_frame().to_csv(path, index=False)
        if stats_path is not None and self.stats is not None:
            Path(stats_path).write_text(json.dumps(self.stats.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def from_csv(cls, path) -> LossPanel:
        df = pd.read_csv(path)
        types = [c for c in df.columns if c not in ("period", "TOTAL")]
        periods = [date.fromisoformat(p) for p in df["period"]]
        return cls(periods, types, df[types].to_numpy(dtype=float))


# ---------------------------------------------------------------------------
# Reading and aggregation
# ---------------------------------------------------------------------------


def _to_date(year_month: str, day: str) -> date:
    ym = int(str(year_month).strip())
    return date(ym // 100, ym % 100, int(str(day).strip()))


def read_storm_csv(path, columns: dict[str, str] | None = None, strict: bool = False,
                   stats: IngestStats | None = None) -> list[StormEventRecord]:
    """Load NOAA StormEvents "details" rows into records.

    Rows with an unreadable date are skipped and counted (or raise in
    ``strict`` mode). Damage text is kept raw and parsed during aggregation.
    """
    cols = {**DEFAULT_COLUMNS, **(columns or {})}
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    need = [cols["year_month"], cols["day"], cols["event_type"], cols["damage"]]
    missing = [c for c in need if c not in df.columns]
    if missing:
        raise NoRecords(f"{path}: missing columns {missing}")
    state = df[cols["state"]] if cols["state"] in df.columns else pd.Series([""] * len(df))
    stats = stats if stats is not None else IngestStats()
    out = []
    for ym, day, et, dmg, st in zip(df[cols["year_month"]], df[cols["day"]], df[cols["event_type"]],
                                    df[cols["damage"]], state):
        stats.records_read += 1
        try:
            d = _to_date(ym, day)
        except ValueError:
            if strict:
                raise MalformedDamage(f"unreadable begin date {ym!r}/{day!r}") from None
            stats.skipped_malformed += 1
            continue
        out.append(StormEventRecord(d, et, dmg, st))
    return out


def aggregate_semimonthly(records, cpi: CpiTable, window: tuple[int, int],
                          aliases: dict[str, str] | None = None, strict: bool = False,
                          stats: IngestStats | None = None) -> LossPanel:
    """Sum inflation-adjusted damages into (half-month, event type) cells.

    ``window`` is ``(first_year, last_year)``, both whole years. Records are
    attributed by begin date. Cell sums are formed after sorting the
    contributions, so the result does not depend on record order.
    """
    start, end = window
    periods = semimonthly_periods(start, end)
    cpi.check_covers(range(start, end + 1))
    records = list(records)
    if not records:
        raise NoRecords("no storm-event records supplied")
    stats = stats if stats is not None else IngestStats(records_read=len(records))
    col_of = {t: j for j, t in enumerate(EVENT_TYPES)}
    cells, amounts = [], []
    for rec in records:
        if not (start <= rec.begin_date.year <= end):
            stats.skipped_out_of_window += 1
            continue
        name = canonical_event_type(rec.event_type, aliases)
        if name is None:
            stats.skipped_unknown_type += 1
            stats.unknown_types[rec.event_type] = stats.unknown_types.get(rec.event_type, 0) + 1
            continue
        try:
            dollars = parse_damage(rec.damage_property_raw)
        except MalformedDamage:
            if strict:
                raise
            log.debug("skipping record with damage %r", rec.damage_property_raw)
            stats.skipped_malformed += 1
            continue
        stats.accepted += 1
        cells.append(period_index(rec.begin_date, start) * len(EVENT_TYPES) + col_of[name])
        amounts.append(adjust_inflation(dollars, rec.begin_date.year, cpi))
    if stats.skipped_malformed:
        log.warning("skipped %d records with malformed damage", stats.skipped_malformed)
    if stats.unknown_types:
        log.info("dropped unknown event types: %s", stats.unknown_types)
    losses = np.zeros(len(periods) * len(EVENT_TYPES))
    if cells:
        cells = np.asarray(cells)
        amounts = np.asarray(amounts)
        order = np.lexsort((amounts, cells))
        cells, amounts = cells[order], amounts[order]
        starts = np.flatnonzero(np.r_[True, cells[1:] != cells[:-1]])
        losses[cells[starts]] = np.add.reduceat(amounts, starts)
    return LossPanel(periods, list(EVENT_TYPES), losses.reshape(len(periods), len(EVENT_TYPES)), stats)


def ingest_files(paths, cpi: CpiTable, window: tuple[int, int], columns=None,
                 aliases=None, strict: bool = False) -> LossPanel:
    stats = IngestStats()
    records = []
    for p in ([paths] if isinstance(paths, (str, Path)) else paths):
        records.extend(read_storm_csv(p, columns, strict, stats))
    return aggregate_semimonthly(records, cpi, window, aliases, strict, stats)
