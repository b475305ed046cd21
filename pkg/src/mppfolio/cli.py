"""Command-line entry point: ``mppfolio {generate,validate,backtest}``.

Every command reads a JSON config (``--config``), applies flag overrides,
writes the fully resolved config to ``<out>/run_config.json`` and puts all
outputs under ``--out``. Rerunning with the archived config reproduces the
outputs byte for byte.

Config keys
-----------
data
    ``{"path": "panel.csv"}`` or ``{"synthetic": {"n", "m", "T", "seed",
    "noise_scale", "feature_mode", "signal_scale"}}``.
model
    ``{"family": "ols"|"elastic_net"|"random_forest"|"svr", "params": {...},
    "grid": {param: [values]}, "vol_params": {...}}``. With a ``grid``, the
    backtest first selects hyperparameters on the validation window.
strategies
    List of strategy objects (``kind`` plus optional ``weight_cap``,
    ``leg``, ``lookback``, ``timing_clamp``, ...).
weight_cap, risk_aversion
    Defaults for strategies that do not set their own.
schedule
    Month indices as in :class:`mppfolio.backtest.Schedule`; omitted means
    a 40/20/40 split of the panel.
seed
    Seeds the synthetic generator and the model's random streams.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import re
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ._io import atomic_write_text, csv_text, fmt_float, json_text
from .backtest import (
    BacktestError,
    BacktestNumericalError,
    ForecastError,
    Schedule,
    StrategySpec,
    forecast_panel,
    run_backtest,
)
from .backtest.engine import MODEL_NAMES
from .backtest.strategies import TIMING_KINDS, StrategyKind
from .data import PanelDataset, PanelFormatError, generate_synthetic, load_panel, write_panel, write_truth
from .models import FAMILIES, ModelSpec, SvrFitError, grid_validate
from .mpp import MppError
from .numerics import NumericsError

logger = logging.getLogger("mppfolio")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_SYNTHETIC = {"n": 50, "m": 3, "T": 360, "seed": 0, "noise_scale": 1.0, "feature_mode": "factors",
                     "signal_scale": 0.03}
DEFAULT_STRATEGIES = [{"kind": "BuyHold"}, {"kind": "MktEql"}, {"kind": "Mpp"}, {"kind": "MinErr"}]


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mppfolio", description="Maximally predictable portfolio toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "generate": "write a synthetic panel and its ground truth",
        "validate": "select model hyperparameters on the validation window",
        "backtest": "run strategies over the holdout window",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="JSON run config")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--threads", type=int, default=None, help="worker threads for independent strategies")
    return parser


# ---------------------------------------------------------------- config


def _read_config(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def resolve_config(raw: dict, command: str, seed: int | None, threads: int | None, base_dir: Path) -> dict:
    """Fill defaults and flag overrides; the result is what gets archived."""
    cfg = copy.deepcopy(raw)
    known = {"data", "model", "strategies", "weight_cap", "risk_aversion", "schedule", "seed", "threads"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    if threads is not None:
        cfg["threads"] = threads
    cfg.setdefault("threads", 1)
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be a positive integer")

    data = cfg.setdefault("data", {"synthetic": {}})
    if not isinstance(data, dict) or len(data) != 1 or next(iter(data)) not in ("path", "synthetic"):
        raise ConfigError('data must be {"path": ...} or {"synthetic": {...}}')
    if "synthetic" in data:
        syn = {**DEFAULT_SYNTHETIC, **(data["synthetic"] or {})}
        if seed is not None or "seed" not in (data["synthetic"] or {}):
            syn["seed"] = cfg["seed"]
        extra = set(syn) - set(DEFAULT_SYNTHETIC)
        if extra:
            raise ConfigError(f"unknown synthetic keys: {sorted(extra)}")
        for k in ("n", "m", "T"):
            if not isinstance(syn[k], int) or syn[k] < 1:
                raise ConfigError(f"synthetic.{k} must be a positive integer, got {syn[k]!r}")
        if syn["noise_scale"] < 0:
            raise ConfigError("synthetic.noise_scale must be nonnegative")
        if syn["feature_mode"] not in ("factors", "exposures"):
            raise ConfigError("synthetic.feature_mode must be 'factors' or 'exposures'")
        data["synthetic"] = syn
    else:
        p = Path(data["path"])
        data["path"] = str(p if p.is_absolute() else (base_dir / p).resolve())
    if command == "generate":
        if "synthetic" not in data:
            raise ConfigError("generate needs a synthetic data spec")
        return {"data": data, "seed": cfg["seed"], "threads": cfg["threads"]}

    model = cfg.setdefault("model", {"family": "ols"})
    family = model.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"model.family must be one of {FAMILIES}, got {family!r}")
    extra = set(model) - {"family", "params", "grid", "vol_params"}
    if extra:
        raise ConfigError(f"unknown model keys: {sorted(extra)}")
    params = dict(model.get("params", {}))
    if family in ("random_forest", "svr"):
        params.setdefault("seed", cfg["seed"])
    model["params"] = params
    if "grid" in model:
        grid = model["grid"]
        if not isinstance(grid, dict) or any(not isinstance(v, list) or not v for v in grid.values()):
            raise ConfigError("model.grid must map parameter names to nonempty lists")
    elif command == "validate":
        raise ConfigError("validate needs model.grid")
    try:
        ModelSpec(family, params)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    cfg.setdefault("weight_cap", 0.3)
    cfg.setdefault("risk_aversion", 4.0)
    strategies = cfg.setdefault("strategies", copy.deepcopy(DEFAULT_STRATEGIES))
    if not isinstance(strategies, list) or not strategies:
        raise ConfigError("strategies must be a nonempty list")
    resolved = []
    for s in strategies:
        if not isinstance(s, dict) or "kind" not in s:
            raise ConfigError(f"strategy entries need a kind: {s!r}")
        entry = {"weight_cap": cfg["weight_cap"], "risk_aversion": cfg["risk_aversion"], **s}
        try:
            resolved.append(StrategySpec.from_dict(entry).to_dict())
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad strategy {s!r}: {exc}") from None
    cfg["strategies"] = resolved
    if "schedule" in cfg:
        try:
            Schedule.from_dict(cfg["schedule"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from None
    return cfg


def _schedule(cfg: dict, panel: PanelDataset) -> Schedule:
    if "schedule" not in cfg:
        cfg["schedule"] = Schedule.proportional(panel.T, window=min(60, max(12, panel.T // 6))).to_dict()
    sch = Schedule.from_dict(cfg["schedule"])
    if sch.holdout_end > panel.T:
        raise DataError(f"schedule needs {sch.holdout_end} months but the panel has {panel.T}")
    return sch


def _load_data(cfg: dict) -> PanelDataset:
    data = cfg["data"]
    if "synthetic" in data:
        s = data["synthetic"]
        panel, _ = generate_synthetic(s["n"], s["m"], s["T"], s["seed"], s["noise_scale"],
                                      signal_scale=s["signal_scale"], feature_mode=s["feature_mode"])
        return panel
    path = Path(data["path"])
    if not path.is_file():
        raise DataError(f"data file not found: {path}")
    return load_panel(path)


# ---------------------------------------------------------------- commands


def cmd_generate(cfg: dict, out: Path) -> None:
    s = cfg["data"]["synthetic"]
    panel, truth = generate_synthetic(s["n"], s["m"], s["T"], s["seed"], s["noise_scale"],
                                      signal_scale=s["signal_scale"], feature_mode=s["feature_mode"])
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / ".panel.csv.tmp"
    write_panel(panel, tmp)
    tmp.replace(out / "panel.csv")
    tmp = out / ".truth.json.tmp"
    write_truth(truth, tmp)
    tmp.replace(out / "truth.json")
    atomic_write_text(out / "run_config.json", json_text(cfg))
    logger.info("wrote synthetic panel T=%d n=%d to %s", panel.T, panel.n, out)


def _validate(cfg: dict, panel: PanelDataset, schedule: Schedule):
    model = cfg["model"]
    base = model["params"]
    grid = {k: v for k, v in model["grid"].items()}
    specs = _grid_specs(model["family"], base, grid)
    return grid_validate(model["family"], specs, panel, schedule)


def _grid_specs(family: str, base: dict, grid: dict) -> list[ModelSpec]:
    import itertools

    names = sorted(grid)
    return [ModelSpec(family, {**base, **dict(zip(names, combo))})
            for combo in itertools.product(*(grid[k] for k in names))]


def cmd_validate(cfg: dict, out: Path) -> None:
    panel = _load_data(cfg)
    schedule = _schedule(cfg, panel)
    result = _validate(cfg, panel, schedule)
    atomic_write_text(out / "hyperparams.json", json_text(result.to_dict()))
    atomic_write_text(out / "run_config.json", json_text(cfg))
    logger.info("selected %s with R2_oos %.6f", result.best.params, result.score)


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", text).strip("_").lower()


def _dedupe(specs: list[StrategySpec]) -> list[StrategySpec]:
    seen, out = set(), []
    for s in specs:
        key = json.dumps(s.to_dict(), sort_keys=True)
        if key in seen:
            logger.warning("duplicate strategy %s removed", s.to_dict())
            continue
        seen.add(key)
        out.append(s)
    return out


def cmd_backtest(cfg: dict, out: Path) -> None:
    panel = _load_data(cfg)
    schedule = _schedule(cfg, panel)
    model = cfg["model"]
    hyper = None
    if "grid" in model:
        hyper = _validate(cfg, panel, schedule)
        spec = hyper.best
    else:
        spec = ModelSpec(model["family"], model["params"])
    vol_spec = ModelSpec(spec.family, {**spec.for_volatility().params, **model.get("vol_params", {})})
    strategies = _dedupe([StrategySpec.from_dict(s) for s in cfg["strategies"]])
    needs_model = any(s.kind is not StrategyKind.BUY_HOLD for s in strategies)
    needs_vol = any(s.kind in TIMING_KINDS for s in strategies)
    fc = forecast_panel(panel, spec, schedule, with_vol=needs_vol, vol_spec=vol_spec) if needs_model else None
    name = MODEL_NAMES[spec.family]

    def run(s: StrategySpec):
        try:
            return run_backtest(panel, spec, s, schedule, forecasts=fc, model_name=name)
        except BacktestError as exc:
            raise type(exc)(f"strategy {s.label(name)}: {exc}") from exc

    with ThreadPoolExecutor(max_workers=cfg["threads"]) as pool:
        results = list(pool.map(run, strategies))

    labels = [r.label for r in results]
    caps = [r.strategy.weight_cap for r in results]
    if len(set(labels)) < len(labels):
        labels = [f"{lab} (w={cap:g})" for lab, cap in zip(labels, caps)]
    # every output is computed before anything is written
    for lab, r in zip(labels, results):
        r.write(out / "strategies" / _slug(lab))
    cols = ("annual_return", "annual_stdev", "sharpe", "turnover")
    modelless = (StrategyKind.BUY_HOLD, StrategyKind.MKT_EQL)
    rows = [(lab, "" if r.strategy.kind in modelless else name,
             "" if r.strategy.kind in modelless else fmt_float(r.strategy.weight_cap),
             *(fmt_float(r.summary.get(c)) for c in cols)) for lab, r in zip(labels, results)]
    atomic_write_text(out / "table3.csv", csv_text(("strategy", "model", "weight_cap", *cols), rows))
    months = results[0].months
    atomic_write_text(out / "fig_rolling_r2.csv", csv_text(
        ("month", *labels), ([m, *(fmt_float(r.rolling_r2[t]) for r in results)] for t, m in enumerate(months))))
    atomic_write_text(out / "fig_wealth.csv", csv_text(
        ("month", *labels),
        ([m, *(fmt_float(r.cumulative_wealth[t]) for r in results)] for t, m in enumerate(months))))
    if hyper is not None:
        atomic_write_text(out / "hyperparams.json", json_text(hyper.to_dict()))
    atomic_write_text(out / "run_config.json", json_text(cfg))
    logger.info("backtested %d strategies into %s", len(results), out)


COMMANDS = {"generate": cmd_generate, "validate": cmd_validate, "backtest": cmd_backtest}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    base_dir = args.config.resolve().parent if args.config else Path.cwd()
    try:
        cfg = resolve_config(_read_config(args.config), args.command, args.seed, args.threads, base_dir)
        if args.command != "generate":
            # probe the data early so a bad path fails before any output exists
            if "path" in cfg["data"] and not Path(cfg["data"]["path"]).is_file():
                raise DataError(f"data file not found: {cfg['data']['path']}")
        COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PanelFormatError, ForecastError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BacktestNumericalError, MppError, SvrFitError, NumericsError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except BacktestError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
