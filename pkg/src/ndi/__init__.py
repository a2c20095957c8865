"""Natural Disasters Index: construction from storm-event losses, GARCH-NIG
option pricing, Euler risk budgets and climate stress tests."""

__version__ = "0.1.0"
