"""Synthetic inputs with the same layout as the real ones.

A latent monthly wetness process raises flood-family event rates and lowers
the drought index; a temperature anomaly raises heat-type rates. Damage
amounts are lognormal per event type and written in the K/M/B text form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .ingest import EVENT_TYPES, FLOOD_FAMILY, period_end, semimonthly_periods
from .rng import stream

HEAT_TYPES = ("Excessive Heat", "Heat", "Drought", "Wildfire")
STATES = ("TEXAS", "KANSAS", "FLORIDA", "OHIO", "IOWA", "CALIFORNIA", "LOUISIANA", "MONTANA")


@dataclass(frozen=True)
class SynthConfig:
    start_year: int = 1996
    end_year: int = 2018
    base_year: int = 2019
    seed: int = 0
    mean_events: float = 2.0  # average events per type per half-month
    zero_damage_share: float = 0.4
    malformed_rate: float = 0.0005
    unknown_rate: float = 0.0005
    inflation: float = 0.025
    flood_severity: float = 2.5  # log-mean uplift of flood-family damages
    heat_severity: float = 1.0
    wet_effect: float = 1.5  # log-rate response to the wetness driver
    heat_effect: float = 0.8


def format_damage(amount: float) -> str:
    if amount == 0:
        return "0.00K"
    if amount < 1e6:
        return f"{amount / 1e3:.2f}K"
    if amount < 1e9:
        return f"{amount / 1e6:.2f}M"
    return f"{amount / 1e9:.2f}B"


def _ar1(rng, n, phi, sd):
    x = np.empty(n)
    x[0] = rng.normal(0, sd / math.sqrt(1 - phi * phi))
    for t in range(1, n):
        x[t] = phi * x[t - 1] + rng.normal(0, sd)
    return x


def climate_drivers(cfg: SynthConfig):
    """Monthly (wetness, temperature anomaly, max temperature, PDSI)."""
    n = 12 * (cfg.end_year - cfg.start_year + 1)
    rng = stream(cfg.seed, 0)
    wet = _ar1(rng, n, 0.6, 0.8)
    temp_anom = _ar1(rng, n, 0.5, 1.2)
    # anomaly-style factor, like an extremes index, so no seasonal cycle
    max_temp = 24.0 + 3.0 * temp_anom
    u = np.zeros(n)
    for t in range(n):
        u[t] = (0.3 * u[t - 1] if t else 0.0) + wet[t] - 0.3 * temp_anom[t]
    pdsi = 4.0 * np.tanh(0.5 * u)
    return wet, temp_anom, max_temp, pdsi


def synth_storm_rows(cfg: SynthConfig):
    """Yield ``(yyyymm, day, state, event_type, damage_text)`` rows."""
    wet, temp_anom, _, _ = climate_drivers(cfg)
    prng = stream(cfg.seed, 1)
    k = len(EVENT_TYPES)
    rate = cfg.mean_events * prng.lognormal(0, 1.0, k) / math.exp(0.5)
    mu = prng.uniform(8.0, 11.5, k)
    sigma = prng.uniform(0.8, 1.6, k)
    season = prng.uniform(0, 2 * np.pi, k)
    flood = np.array([t in FLOOD_FAMILY for t in EVENT_TYPES])
    heat = np.array([t in HEAT_TYPES for t in EVENT_TYPES])
    # the driven types carry most of the dollar losses
    rate = np.where(flood, 2.0 * cfg.mean_events, rate)
    mu = np.where(flood, mu + cfg.flood_severity, np.where(heat, mu + cfg.heat_severity, mu))
    rng = stream(cfg.seed, 2)
    for p, start in enumerate(semimonthly_periods(cfg.start_year, cfg.end_year)):
        m = p // 2
        lam = rate * (1 + 0.6 * np.sin(2 * np.pi * start.month / 12 + season))
        lam = np.where(flood, lam * np.exp(cfg.wet_effect * wet[m]), lam)
        lam = np.where(heat, lam * np.exp(cfg.heat_effect * temp_anom[m]), lam)
        counts = rng.poisson(lam)
        last = period_end(start).day
        ym = start.year * 100 + start.month
        inflate = (1 + cfg.inflation) ** (cfg.base_year - start.year)
        for i in np.flatnonzero(counts):
            n = int(counts[i])
            days = rng.integers(start.day, last + 1, n)
            real = rng.lognormal(mu[i], sigma[i], n)
            zero = rng.random(n) < cfg.zero_damage_share
            states = rng.integers(0, len(STATES), n)
            odd = rng.random(n)
            for j in range(n):
                text = "" if zero[j] and odd[j] < 0.5 else format_damage(0.0 if zero[j] else real[j] / inflate)
                etype = EVENT_TYPES[i]
                if odd[j] < cfg.malformed_rate:
                    text = "1..5K"
                elif odd[j] > 1 - cfg.unknown_rate:
                    etype = "Landslide"
                yield ym, int(days[j]), STATES[states[j]], etype, text


def write_synthetic_inputs(dest, cfg: SynthConfig = SynthConfig()) -> dict[str, Path]:
    """Write ``storms.csv``, ``cpi.csv``, ``max_temp.csv`` and ``pdsi.csv``
    into ``dest`` and return their paths."""
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    paths = {name: dest / f"{name}.csv" for name in ("storms", "cpi", "max_temp", "pdsi")}
    with open(paths["storms"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["BEGIN_YEARMONTH", "BEGIN_DAY", "STATE", "EVENT_TYPE", "DAMAGE_PROPERTY"])
        w.writerows(synth_storm_rows(cfg))
    years = range(cfg.start_year, cfg.base_year + 1)
    pd.DataFrame({"year": list(years),
                  "deflator_to_base": [round((1 + cfg.inflation) ** (cfg.base_year - y), 10) for y in years]}
                 ).to_csv(paths["cpi"], index=False)
    _, _, max_temp, pdsi = climate_drivers(cfg)
    months = [f"{y}-{m:02d}" for y in range(cfg.start_year, cfg.end_year + 1) for m in range(1, 13)]
    pd.DataFrame({"month": months, "max_temp": np.round(max_temp, 4)}).to_csv(paths["max_temp"], index=False)
    pd.DataFrame({"month": months, "pdsi": np.round(pdsi, 4)}).to_csv(paths["pdsi"], index=False)
    return paths
