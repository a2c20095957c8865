"""Command-line pipeline: ingest, index, fit, then price, budget and stress.

Configuration comes from built-in defaults, then an INI file (``--config``,
sections ``run``, ``synth``, ``ingest``, ``index``, ``garch``, ``pricing``,
``riskbudget``, ``stress``), then ``NDI_OUTPUT_DIR`` for the output
directory, then command-line flags. A run manifest written next to the
outputs records the resolved configuration and file digests; passing the
manifest back as ``--config`` reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure. Failures name their pipeline stage on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import contextlib
import hashlib
import json
import logging
import os
import platform
import sys
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import ConfigError, DataError, InvalidParams, NumericalError, StageError

log = logging.getLogger("ndi")

ENV_OUTPUT_DIR = "NDI_OUTPUT_DIR"
COMMANDS = ("synth", "ingest", "index", "fit", "price", "budget", "stress", "all")
PIPELINE = ("ingest", "index", "fit", "price", "budget", "stress")


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    kind: str  # int, float, bool, str, path, paths, floats, strs
    default: object
    commands: tuple
    help: str
    flag: str | None = None

    @property
    def name(self) -> str:
        return f"{self.section}.{self.key}"

    @property
    def flag_name(self) -> str:
        return self.flag or "--" + self.key.replace("_", "-")


_ALL = COMMANDS
OPTIONS = (
    Option("run", "seed", "int", 0, _ALL, "global seed for every random stream"),
    Option("run", "output_dir", "path", "out", _ALL, f"output directory (env {ENV_OUTPUT_DIR})", "--out"),
    Option("run", "panel", "path", "", ("index", "budget"), "loss panel CSV (default OUT/panel.csv)"),
    Option("run", "ndi", "path", "", ("fit", "price", "stress"), "index CSV (default OUT/ndi.csv)"),
    Option("run", "model", "path", "", ("price",), "fitted model JSON (default OUT/garch_fit.json)"),
    Option("synth", "base_year", "int", 2019, ("synth",), "dollar base year of the synthetic CPI table"),
    Option("synth", "mean_events", "float", 2.0, ("synth",), "mean events per type per half-month"),
    Option("synth", "malformed_rate", "float", 0.0005, ("synth",), "share of rows with unparseable damage"),
    Option("synth", "unknown_rate", "float", 0.0005, ("synth",), "share of rows with an unknown event type"),
    Option("synth", "inflation", "float", 0.025, ("synth",), "annual inflation of the synthetic CPI"),
    Option("ingest", "storm_csv", "paths", [], ("ingest", "all"), "storm-event CSV files", "--storm-csv"),
    Option("ingest", "cpi", "path", "", ("ingest", "all"), "CPI CSV (year, deflator_to_base)"),
    Option("ingest", "start_year", "int", 1996, ("synth", "ingest", "all"), "first year of the study window"),
    Option("ingest", "end_year", "int", 2018, ("synth", "ingest", "all"), "last year of the study window"),
    Option("ingest", "base_year", "int", None, ("ingest", "all"), "CPI base year (default: inferred)"),
    Option("ingest", "strict", "bool", False, ("ingest", "all"), "fail on malformed records"),
    Option("index", "exponent", "float", 0.1, ("index", "fit", "price", "budget", "all"), "power transform exponent"),
    Option("garch", "rate", "float", 0.0, ("fit", "price", "all"), "per-period risk-free rate r'"),
    Option("garch", "loss_floor", "float", 1.0, ("fit", "price", "all"), "smallest admissible period loss"),
    Option("garch", "fix_lambda0", "bool", False, ("fit", "price", "all"), "fix the risk premium at zero"),
    Option("garch", "maxiter", "int", 2000, ("fit", "price", "all"), "optimizer iteration cap"),
    Option("pricing", "paths", "int", 10_000, ("price", "all"), "Monte Carlo paths"),
    Option("pricing", "horizon", "int", 24, ("price", "all"), "maturity horizon in periods"),
    Option("pricing", "strikes", "str", "-1:1:0.1", ("price", "all"), "strike list 'a,b,c' or 'min:max:step'"),
    Option("pricing", "underlying", "str", "ndi", ("price", "all"), "payoff on 'ndi' or on the 'level' S"),
    Option("pricing", "legacy_recursion", "bool", False, ("price", "all"), "NDI_t = R^10 + NDI_{t-1} reconstruction"),
    Option("riskbudget", "window", "int", 400, ("budget", "all"), "rolling window length"),
    Option("riskbudget", "step", "int", 1, ("budget", "all"), "rolling window step"),
    Option("riskbudget", "levels", "floats", [0.95, 0.99], ("budget", "all"), "ETL confidence levels"),
    Option("riskbudget", "measures", "strs", ["etl", "std"], ("budget", "all"), "measures: etl, std"),
    Option("riskbudget", "groups", "path", "", ("budget", "all"), "CSV event_type,group for grouped budgets"),
    Option("riskbudget", "min_tail", "int", 4, ("budget", "all"), "fewest tail scenarios per ETL estimate"),
    Option("stress", "max_temp", "path", "", ("stress", "all"), "monthly max-temperature CSV"),
    Option("stress", "pdsi", "path", "", ("stress", "all"), "monthly PDSI CSV"),
    Option("stress", "levels", "floats", [0.10, 0.05, 0.01], ("stress", "all"), "stress quantile levels", "--stress-levels"),
    Option("stress", "n_sim", "int", 200_000, ("stress", "all"), "simulated pairs per factor"),
    Option("stress", "lb_lags", "int", 20, ("stress", "all"), "Ljung-Box lags"),
    Option("stress", "em_restarts", "int", 5, ("stress", "all"), "EM restarts"),
    Option("stress", "scatter_size", "int", 10_000, ("stress", "all"), "simulated pairs kept for the scatter CSV"),
)
_BY_NAME = {o.name: o for o in OPTIONS}


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


def _split(text) -> list[str]:
    if isinstance(text, (list, tuple)):
        return [str(t) for t in text]
    return [t.strip() for t in str(text).replace("\n", ",").split(",") if t.strip()]


def parse_value(opt: Option, raw, base: Path | None = None):
    """Convert a file, flag or manifest value to the option's type. Relative
    paths are resolved against ``base``."""
    try:
        if raw is None or (opt.kind not in ("str", "paths", "floats", "strs") and raw == ""):
            return None if opt.default is None else opt.default
        if opt.kind == "int":
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if opt.kind == "float":
            return float(raw)
        if opt.kind == "bool":
            if isinstance(raw, bool):
                return raw
            t = str(raw).strip().lower()
            if t in ("1", "true", "yes", "on"):
                return True
            if t in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if opt.kind == "str":
            return str(raw)
        if opt.kind == "floats":
            return [float(t) for t in _split(raw)]
        if opt.kind == "strs":
            return [t.lower() for t in _split(raw)]
        if opt.kind == "path":
            return _resolve(str(raw), base) if str(raw) else ""
        if opt.kind == "paths":
            return [_resolve(t, base) for t in _split(raw)]
    except (TypeError, ValueError):
        raise ConfigError(f"{opt.name}: cannot read {raw!r} as {opt.kind}") from None
    raise AssertionError(opt.kind)


def _resolve(path: str, base: Path | None) -> str:
    p = Path(path).expanduser()
    if not p.is_absolute() and base is not None:
        p = base / p
    return str(p.resolve())


def read_config_file(path) -> tuple[dict, Path]:
    """Raw ``section.key -> value`` pairs from an INI file or a run manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = {}
    if path.suffix == ".json":
        try:
            doc = json.loads(path.read_text())
            config = doc["config"]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from None
        raw = dict(config)
    else:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for sec in cp.sections():
            for key, val in cp.items(sec):
                raw[f"{sec}.{key}"] = val
    unknown = sorted(k for k in raw if k not in _BY_NAME)
    if unknown:
        raise ConfigError(f"{path}: unknown settings {unknown}")
    return raw, path.resolve().parent


def resolve_config(command: str, file_values: dict | None = None, file_base: Path | None = None,
                   flags: dict | None = None, env=None) -> dict:
    """Defaults < config file < environment (output dir only) < flags, over
    the options that apply to ``command``."""
    env = os.environ if env is None else env
    file_values = file_values or {}
    flags = flags or {}
    cwd = Path.cwd()
    cfg = {}
    for opt in OPTIONS:
        if command not in opt.commands:
            continue
        value = parse_value(opt, opt.default, cwd) if opt.kind in ("path", "paths") else opt.default
        if opt.name in file_values:
            value = parse_value(opt, file_values[opt.name], file_base)
        if opt.name == "run.output_dir" and env.get(ENV_OUTPUT_DIR):
            value = parse_value(opt, env[ENV_OUTPUT_DIR], cwd)
        if flags.get(opt.name) is not None:
            value = parse_value(opt, flags[opt.name], cwd)
        cfg[opt.name] = list(value) if isinstance(value, list) else value
    _validate(command, cfg)
    return cfg


def _validate(command: str, cfg: dict) -> None:
    from .pricing import PricingConfig, parse_strikes

    def need_file(name, label):
        p = cfg.get(name)
        if not p:
            raise ConfigError(f"{name} is required ({label})")
        if not Path(p).is_file():
            raise ConfigError(f"{label} not found: {p}")

    if command in ("ingest", "all"):
        if not cfg["ingest.storm_csv"]:
            raise ConfigError("ingest.storm_csv is required (storm-event CSV files)")
        for p in cfg["ingest.storm_csv"]:
            if not Path(p).is_file():
                raise ConfigError(f"storm CSV file not found: {p}")
        need_file("ingest.cpi", "CPI file")
    if "ingest.start_year" in cfg and cfg["ingest.start_year"] > cfg["ingest.end_year"]:
        raise ConfigError("ingest.start_year is after ingest.end_year")
    if "index.exponent" in cfg and not cfg["index.exponent"] > 0:
        raise ConfigError("index.exponent must be positive")
    if "garch.loss_floor" in cfg and not cfg["garch.loss_floor"] > 0:
        raise ConfigError("garch.loss_floor must be positive")
    if "pricing.paths" in cfg:
        try:
            PricingConfig(cfg["pricing.paths"], cfg["pricing.horizon"], parse_strikes(cfg["pricing.strikes"]),
                          underlying=cfg["pricing.underlying"])
        except (ValueError, InvalidParams) as exc:
            raise ConfigError(f"pricing: {exc}") from None
    if "riskbudget.measures" in cfg:
        bad = set(cfg["riskbudget.measures"]) - {"etl", "std"}
        if bad or not cfg["riskbudget.measures"]:
            raise ConfigError(f"riskbudget.measures must be drawn from etl, std (got {sorted(bad)})")
        if any(not 0 < q < 1 for q in cfg["riskbudget.levels"]):
            raise ConfigError("riskbudget.levels must lie in (0, 1)")
        if cfg["riskbudget.window"] < 2 or cfg["riskbudget.step"] < 1:
            raise ConfigError("riskbudget.window must be >= 2 and riskbudget.step >= 1")
        if cfg["riskbudget.groups"] and not Path(cfg["riskbudget.groups"]).is_file():
            raise ConfigError(f"groups file not found: {cfg['riskbudget.groups']}")
    if "stress.levels" in cfg:
        if any(not 0 < q < 1 for q in cfg["stress.levels"]):
            raise ConfigError("stress.levels must lie in (0, 1)")
        for key in ("stress.max_temp", "stress.pdsi"):
            if cfg[key] and not Path(cfg[key]).is_file():
                raise ConfigError(f"factor file not found: {cfg[key]}")
        if command == "stress" and not (cfg["stress.max_temp"] or cfg["stress.pdsi"]):
            raise ConfigError("stress needs at least one factor file (stress.max_temp or stress.pdsi)")


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    import numba
    import scipy

    return {"ndi": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pandas": pd.__version__, "numba": numba.__version__}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


@contextlib.contextmanager
def stage(name: str):
    """Report any failure inside the block as a failure of stage ``name``."""
    try:
        yield
    except (ConfigError, StageError):
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


class Run:
    """One command's resolved configuration, inputs and outputs."""

    def __init__(self, command: str, cfg: dict):
        self.command = command
        self.cfg = cfg
        self.out = Path(cfg["run.output_dir"])
        self.inputs: list[Path] = []
        self.outputs: list[Path] = []

    def get(self, name):
        return self.cfg[name]

    def intermediate(self, key: str, default_name: str) -> Path:
        """Path of an upstream artifact; the default under the output
        directory is written back so the manifest names it explicitly."""
        p = Path(self.cfg.get(key) or self.out / default_name).resolve()
        self.cfg[key] = str(p)
        return p

    def read(self, path) -> Path:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"input file not found: {path}")
        self.inputs.append(path)
        return path

    def output(self, name: str) -> Path:
        p = (self.out / name).resolve()
        if any(p == i.resolve() for i in self.inputs):
            raise ConfigError(f"output {p} would overwrite an input")
        self.outputs.append(p)
        return p

    def write_json(self, name: str, doc: dict) -> None:
        self.output(name).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")

    def manifest(self) -> dict:
        return {"command": self.command, "config": self.cfg, "config_sha256": config_digest(self.cfg),
                "seed": self.cfg["run.seed"], "versions": versions(),
                "inputs": {str(p): file_digest(p) for p in dict.fromkeys(self.inputs)},
                "outputs": {p.name: file_digest(p) for p in self.outputs}}


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def cmd_synth(run: Run) -> None:
    from .synth import SynthConfig, write_synthetic_inputs

    cfg = SynthConfig(start_year=run.get("ingest.start_year"), end_year=run.get("ingest.end_year"),
                      base_year=run.get("synth.base_year"), seed=run.get("run.seed"),
                      mean_events=run.get("synth.mean_events"), malformed_rate=run.get("synth.malformed_rate"),
                      unknown_rate=run.get("synth.unknown_rate"), inflation=run.get("synth.inflation"))
    with stage("synth"):
        paths = write_synthetic_inputs(run.out, cfg)
    for name in ("storms", "cpi", "max_temp", "pdsi"):
        run.output(paths[name].name)


def cmd_ingest(run: Run) -> None:
    from .ingest import CpiTable, ingest_files

    storms = [run.read(p) for p in run.get("ingest.storm_csv")]
    cpi_path = run.read(run.get("ingest.cpi"))
    with stage("ingest:cpi"):
        cpi = CpiTable.from_csv(cpi_path, run.get("ingest.base_year"))
    with stage("ingest"):
        panel = ingest_files(storms, cpi, (run.get("ingest.start_year"), run.get("ingest.end_year")),
                             strict=run.get("ingest.strict"))
    panel.to_csv(run.output("panel.csv"), run.output("panel_stats.json"))


def cmd_index(run: Run) -> None:
    from .index import build_ndi
    from .ingest import LossPanel

    src = run.read(run.intermediate("run.panel", "panel.csv"))
    with stage("index:read_panel"):
        panel = LossPanel.from_csv(src)
    with stage("index"):
        series = build_ndi(panel, run.get("index.exponent"))
    series.to_csv(run.output("ndi.csv"))


def _fit(run: Run):
    from .garch import fit_garch_nig
    from .index import NdiSeries

    src = run.read(run.intermediate("run.ndi", "ndi.csv"))
    with stage("fit:read_ndi"):
        series = NdiSeries.from_csv(src, run.get("index.exponent"))
    with stage("fit"):
        model = fit_garch_nig(series.s, riskfree=run.get("garch.rate"), fix_lambda0=run.get("garch.fix_lambda0"),
                              maxiter=run.get("garch.maxiter"), loss_floor=run.get("garch.loss_floor"),
                              exponent=run.get("index.exponent"))
    return model, float(series.ndi[-1])


def _fit_doc(run: Run, model, last_ndi: float) -> dict:
    return {"model": model.to_dict(), "last_ndi": last_ndi, "settings": _fit_settings(run)}


def _fit_settings(run: Run) -> dict:
    return {k: run.get(k) for k in ("garch.rate", "garch.loss_floor", "garch.fix_lambda0", "garch.maxiter",
                                    "index.exponent")}


def cmd_fit(run: Run) -> None:
    model, last_ndi = _fit(run)
    run.write_json("garch_fit.json", _fit_doc(run, model, last_ndi))


def cmd_price(run: Run) -> None:
    from .garch import GarchNigModel
    from .pricing import PricingConfig, implied_vol_surface, parse_strikes, price_options, simulate_q_paths

    model_path = run.intermediate("run.model", "garch_fit.json")
    doc = None
    if model_path.is_file():
        with stage("price:read_model"):
            doc = json.loads(model_path.read_text())
        if doc.get("settings") == _fit_settings(run):
            run.read(model_path)
        else:
            log.warning("%s was fitted with other settings; refitting", model_path)
            doc = None
    if doc is None:
        model, last_ndi = _fit(run)
        source = "refit"
    else:
        with stage("price:read_model"):
            model, last_ndi = GarchNigModel.from_dict(doc["model"]), float(doc["last_ndi"])
        source = model_path.name
    cfg = PricingConfig(run.get("pricing.paths"), run.get("pricing.horizon"), parse_strikes(run.get("pricing.strikes")),
                        run.get("garch.rate"), run.get("run.seed"), run.get("garch.loss_floor"),
                        run.get("pricing.legacy_recursion"), run.get("pricing.underlying"))
    with stage("price:simulate"):
        paths = simulate_q_paths(model, cfg, last_ndi=last_ndi)
    with stage("price:options"):
        surface = price_options(paths, cfg)
    with stage("price:implied_vol"):
        iv = implied_vol_surface(surface)
    surface.to_csv(run.output("prices.csv"))
    iv.to_csv(run.output("iv_surface.csv"), index=False, float_format="%.10g")
    run.write_json("price.json", {"model": model.to_dict(), "model_source": source, "pricing": cfg.to_dict(),
                                  "spot": surface.spot, "paths_digest": paths.digest(), **surface.meta})


def cmd_budget(run: Run) -> None:
    from .ingest import LossPanel
    from .riskbudget import group_mctr, read_groups, return_panel, risk_budget, rolling_budgets

    src = run.read(run.intermediate("run.panel", "panel.csv"))
    with stage("budget:read_panel"):
        rp = return_panel(LossPanel.from_csv(src), run.get("index.exponent"))
    measures = run.get("riskbudget.measures")
    levels = tuple(run.get("riskbudget.levels")) if "etl" in measures else ()
    include_std = "std" in measures
    min_tail = run.get("riskbudget.min_tail")
    with stage("budget:full_sample"):
        rep = risk_budget(rp, None, levels, include_std, min_tail)
    sort_by = next(iter(rep.mctr))
    rep.to_csv(run.output("budget_table.csv"), sort_by=sort_by)
    if run.get("riskbudget.groups"):
        gpath = run.read(run.get("riskbudget.groups"))
        with stage("budget:groups"):
            groups = read_groups(gpath)
            rows = []
            for m, v in rep.mctr.items():
                g = group_mctr(v, rep.event_types, groups)
                total = sum(g.values())
                rows += [{"group": k, "measure": m, "mctr": x, "pctr": 100 * x / total} for k, x in g.items()]
        pd.DataFrame(rows).to_csv(run.output("budget_groups.csv"), index=False, float_format="%.10g")
    window = run.get("riskbudget.window")
    if len(rp) > window:
        with stage("budget:rolling"):
            df = rolling_budgets(rp, None, window, levels, include_std, min_tail, run.get("riskbudget.step"),
                                 on_error="record")
        df.to_csv(run.output("budget_rolling.csv"), index=False, float_format="%.10g")
    else:
        log.warning("panel has %d return periods, no rolling window of %d fits; skipping", len(rp), window)


def cmd_stress(run: Run) -> None:
    from .index import NdiSeries
    from .stress import read_factor_csv, stress_pipeline

    src = run.read(run.intermediate("run.ndi", "ndi.csv"))
    factors = {}
    for key in ("max_temp", "pdsi"):
        path = run.get(f"stress.{key}")
        if path:
            with stage(f"stress:read_{key}"):
                factors[key] = read_factor_csv(run.read(path))
    if not factors:
        raise ConfigError("stress needs at least one factor file (stress.max_temp or stress.pdsi)")
    with stage("stress:read_ndi"):
        series = NdiSeries.from_csv(src)
    try:
        rep = stress_pipeline(series, factors, tuple(run.get("stress.levels")), run.get("stress.n_sim"),
                              run.get("run.seed"), run.get("stress.lb_lags"), run.get("stress.scatter_size"),
                              run.get("stress.em_restarts"))
    except StageError as exc:
        raise StageError(f"stress:{exc.stage}", exc.cause) from exc
    rep.to_csv(run.output("stress_table.csv"))
    rep.scatter_frame().to_csv(run.output("stress_scatter.csv"), index=False, float_format="%.10g")
    rep.contour_frame().to_csv(run.output("stress_contours.csv"), index=False, float_format="%.10g")
    run.output("stress.json").write_text(rep.to_json() + "\n")


HANDLERS = {"synth": cmd_synth, "ingest": cmd_ingest, "index": cmd_index, "fit": cmd_fit,
            "price": cmd_price, "budget": cmd_budget, "stress": cmd_stress}


def execute(command: str, cfg: dict) -> list[dict]:
    """Run ``command`` with a resolved configuration; return its manifests."""
    Path(cfg["run.output_dir"]).mkdir(parents=True, exist_ok=True)
    steps = PIPELINE if command == "all" else (command,)
    manifests = []
    for step in steps:
        if step == "stress" and command == "all" and not (cfg["stress.max_temp"] or cfg["stress.pdsi"]):
            log.warning("no factor files configured; skipping stress")
            continue
        sub = {k: v for k, v in cfg.items() if step in _BY_NAME[k].commands}
        run = Run(step, sub)
        HANDLERS[step](run)
        m = run.manifest()
        run.out.joinpath(f"manifest_{step}.json").write_text(json.dumps(m, indent=2, sort_keys=True) + "\n")
        manifests.append(m)
    if command == "all":
        doc = {"command": "all", "config": cfg, "config_sha256": config_digest(cfg), "seed": cfg["run.seed"],
               "versions": versions(), "steps": [m["command"] for m in manifests]}
        Path(cfg["run.output_dir"], "manifest_all.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return manifests


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


_HELP = {
    "synth": "write synthetic storm, CPI and climate-factor CSVs",
    "ingest": "parse storm CSVs into an inflation-adjusted semimonthly loss panel",
    "index": "build the index series from a loss panel",
    "fit": "fit the GARCH(1,1)-M model with NIG innovations",
    "price": "Monte Carlo option prices under the Esscher measure",
    "budget": "Euler risk budgets across event types",
    "stress": "CoVaR, CoES and CoETL against climate factors",
    "all": "run ingest, index, fit, price, budget and stress",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ndi", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for cmd in COMMANDS:
        p = subs.add_parser(cmd, help=_HELP[cmd], description=_HELP[cmd])
        p.add_argument("--config", help="INI config file or a previous run manifest")
        for opt in OPTIONS:
            if cmd not in opt.commands:
                continue
            kw = {"dest": opt.name, "default": None, "help": f"{opt.help} [{opt.name}]"}
            if opt.kind == "bool":
                p.add_argument(opt.flag_name, action=argparse.BooleanOptionalAction, **kw)
            elif opt.kind == "paths":
                p.add_argument(opt.flag_name, nargs="+", metavar="PATH", **kw)
            else:
                p.add_argument(opt.flag_name, metavar=opt.kind.upper(), **kw)
    return parser


def exit_code(exc: BaseException) -> int | None:
    """Exit status for an error, or None when it is not an expected failure."""
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ConfigError):
        return 2
    if isinstance(cause, (NumericalError, InvalidParams, ArithmeticError, np.linalg.LinAlgError)):
        return 4
    if isinstance(cause, (DataError, ValueError, KeyError, pd.errors.ParserError, pd.errors.EmptyDataError)):
        return 3
    return None


def _show_warning(message, category, filename, lineno, file=None, line=None):
    log.warning("%s: %s", category.__name__, message)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="ndi: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k in _BY_NAME}
    with warnings.catch_warnings():
        warnings.showwarning = _show_warning
        try:
            file_values, base = read_config_file(args.config) if args.config else ({}, None)
            cfg = resolve_config(args.command, file_values, base, flags)
            execute(args.command, cfg)
        except Exception as exc:
            code = exit_code(exc)
            if code is None:
                raise
            print(_describe(exc, code), file=sys.stderr)
            return code
    return 0


def _describe(exc: BaseException, code: int) -> str:
    if isinstance(exc, StageError):
        return f"ndi: error in stage {exc.stage}: {type(exc.cause).__name__}: {exc.cause}"
    if code == 2:
        return f"ndi: config error: {exc}"
    return f"ndi: error: {type(exc).__name__}: {exc}"

if __name__ == "__main__":
    sys.exit(main())
