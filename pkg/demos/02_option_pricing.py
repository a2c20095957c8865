"""
Pricing index options under the Esscher measure
===============================================

Log-returns of the level ``S_t`` follow a GARCH(1,1)-in-mean model with
NIG innovations. At every simulated step the innovation law is exponentially
tilted so that the discounted level is a martingale, then calls and puts
are averaged over shared paths.
"""

import logging
import math
import tempfile

import numpy as np

from ndi.garch import fit_garch_nig
from ndi.index import build_ndi
from ndi.ingest import CpiTable, ingest_files
from ndi.pricing import (
    PricingConfig,
    implied_vol_surface,
    parse_strikes,
    price_options,
    simulate_q_paths,
    solve_esscher,
)
from ndi.synth import write_synthetic_inputs

logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
paths = write_synthetic_inputs(tempfile.mkdtemp(prefix="ndi_demo_"))
panel = ingest_files(paths["storms"], CpiTable.from_csv(paths["cpi"]), (1996, 2018))
series = build_ndi(panel)

# %%
# Fit. Zero-loss periods would give ``log 0``, so losses are floored at $1
# before the power transform.
rate = 0.0005  # per half-month
model = fit_garch_nig(series.s, riskfree=rate, loss_floor=1.0)
print({k: v for k, v in model.to_dict().items() if k in ("m", "a", "b", "lambda0", "innovation_shape")})
print(f"persistence a + b = {model.a + model.b:.3f}, next-step variance {model.forecast_variance:.5f}")

# %%
# One Esscher step by hand: the tilt that makes E[exp(R)] = exp(r').
h = model.forecast_variance
drift = rate + model.lambda0 * math.sqrt(h) - h / 2
sol = solve_esscher(model.innovation, h, rate, drift)
print(f"theta = {sol.theta:.4f}, residual {sol.residual:.1e}")

# %%
# Risk-neutral paths and prices. Ten thousand paths, two years of
# half-months, strikes on the index change.
cfg = PricingConfig(n_paths=10_000, horizon=48, strikes=parse_strikes("-0.6:0.6:0.1"), riskfree=rate, seed=1)
ps = simulate_q_paths(model, cfg, last_ndi=float(series.ndi[-1]))
disc = math.exp(-rate * cfg.horizon) * ps.s[:, -1]
print(f"martingale check: {disc.mean():.4f} vs S0 = {ps.s[0, 0]:.4f} "
      f"(se {disc.std(ddof=1) / math.sqrt(disc.size):.4f})")

surface = price_options(ps, cfg)
df = surface.to_frame()
print(df[df["T"].isin([1, 12, 48])].round(4).to_string(index=False))

# %%
# Calls fall and puts rise with the strike on every maturity, because all
# strikes share the same paths.
assert np.all(np.diff(surface.call, axis=1) <= 0) and np.all(np.diff(surface.put, axis=1) >= 0)

# %%
# Implied volatility needs a positive spot, so it is computed on options
# written on the level ``S`` rather than on the index change, which can be
# negative.
s0 = ps.s[0, 0]
level_cfg = PricingConfig(n_paths=10_000, horizon=48, strikes=tuple(s0 / np.array([1.4, 1.2, 1.0, 0.9, 0.8])),
                          riskfree=rate, seed=1, underlying="level")
iv = implied_vol_surface(price_options(simulate_q_paths(model, level_cfg), level_cfg))
print(iv.pivot(index="T", columns="M", values="iv").iloc[[0, 11, 23, 47]].round(3))
