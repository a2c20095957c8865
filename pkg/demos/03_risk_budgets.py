"""
Which disaster types carry the risk
===================================

An equally weighted portfolio of the fifty per-type loss series, each
transformed like the index. Euler allocation splits the portfolio standard
deviation and its expected tail loss into per-type contributions that add
up to the total.
"""

import logging
import tempfile

from ndi.ingest import CpiTable, FLOOD_FAMILY, EVENT_TYPES, ingest_files
from ndi.riskbudget import group_mctr, return_panel, risk_budget, rolling_budgets
from ndi.synth import write_synthetic_inputs

logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
paths = write_synthetic_inputs(tempfile.mkdtemp(prefix="ndi_demo_"))
panel = ingest_files(paths["storms"], CpiTable.from_csv(paths["cpi"]), (1996, 2018))
rp = return_panel(panel)
print("returns:", rp.returns.shape)

# %%
# Full-sample budgets. At 99% a 551-period sample leaves only six tail
# periods, so the minimum tail count is lowered from the default of ten.
rep = risk_budget(rp, min_tail=4)
table = rep.to_frame(sort_by="ETL95")
print(table.tail(8).round(4).to_string(index=False))
print("PCTR sums:", {m: round(float(v.sum()), 10) for m, v in rep.pctr.items()})

# %%
# Negative contributions diversify: those types tend to be quiet when the
# portfolio is in its tail.
print("diversifiers at 95%:", list(table.event_type[table.MCTR_ETL95 < 0]))

# %%
# Grouped view: the flood family against everything else.
groups = {"flood family": list(FLOOD_FAMILY), "other": [t for t in EVENT_TYPES if t not in FLOOD_FAMILY]}
for m in rep.mctr:
    g = group_mctr(rep.mctr[m], rep.event_types, groups)
    print(m, {k: f"{100 * v / sum(g.values()):.1f}%" for k, v in g.items()})

# %%
# Rolling 400-period windows, in long format for stacked-area plots.
roll = rolling_budgets(rp, window=400, step=25, min_tail=4)
flood = roll[roll.event_type.isin(FLOOD_FAMILY) & (roll.measure == "ETL95")]
print(flood.groupby("end")["pctr"].sum().round(1))
