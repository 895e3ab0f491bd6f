"""Command-line entry point: solve | simulate | estimate | backtest | report.

Configuration precedence: command-line flags > HFMM_* environment variables >
config-file values > built-in defaults. The default seed is 12345; all
randomness in a run flows from the single configured seed, so repeated runs
with identical inputs produce byte-identical outputs.

Exit codes: 0 success, 1 invalid inputs or total failure, 2 missing
parameter/config file, 3 empty report.
"""

from __future__ import annotations

import argparse
import csv as _csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import backtest as bt
from .estimation import (compute_break_errors, estimate_day, rolling_params,
                         structural_break_flags)
from .lob import read_events_binary, read_events_csv, replay
from .model import (MarketParams, load_params, save_params, validate_params)
from .simulator import (DemandDistribution, PriceModel, SimMarket,
                        TwoPointIndependent, make_table_policy,
                        monte_carlo_value, run_episode)
from .solver import backward_pass, optimal_spreads, table_to_csv

DEFAULT_SEED = 12345
ENV_PREFIX = "HFMM_"

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_MISSING_PARAMS = 2
EXIT_EMPTY_REPORT = 3


# ---------------------------------------------------------------------------
# Configuration plumbing
# ---------------------------------------------------------------------------

def _env(name, cast=str):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    return None if raw is None else cast(raw)


def load_run_config(args) -> dict:
    """Merge defaults <- config file <- environment <- flags."""
    cfg = {
        "seed": DEFAULT_SEED,
        "out": "out",
        "workers": 1,
        "window": 20,
        "policies": ["optimal_forecast", "optimal_martingale",
                     "fixed_level_1", "fixed_level_2", "fixed_level_3"],
        "n_paths": 10000,
        "chunk_size": 8192,
        "pi11_grid": [0.0, 0.05, 0.1, 0.2],
        "inventory_grid": [0.0],
        "order_volume": bt.DEFAULT_ORDER_VOLUME,
        "level_depth": 10,
        "break_quantile": 0.95,
    }
    config_path = args.config or _env("config")
    if config_path:
        if not Path(config_path).exists():
            raise FileNotFoundError(config_path)
        with open(config_path) as fh:
            cfg.update(yaml.safe_load(fh) or {})
    for key, cast in [("seed", int), ("out", str), ("workers", int),
                      ("window", int), ("lambda", float), ("params", str),
                      ("events", str)]:
        v = _env(key, cast)
        if v is not None:
            cfg[key] = v
    pols = _env("policies")
    if pols is not None:
        cfg["policies"] = pols.split(",")
    for key in ("seed", "out", "workers", "window", "params", "events"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if getattr(args, "lam", None) is not None:
        cfg["lambda"] = args.lam
    if getattr(args, "policies", None):
        cfg["policies"] = args.policies.split(",")
    return cfg


def _load_params_or_exit(cfg) -> MarketParams:
    path = cfg.get("params")
    if not path or not Path(path).exists():
        print(f"parameter file not found: {path!r}", file=sys.stderr)
        sys.exit(EXIT_MISSING_PARAMS)
    p = load_params(path)
    if "lambda" in cfg:
        p = MarketParams(grid=p.grid, arrivals=p.arrivals, moments=p.moments,
                         lam=float(cfg["lambda"]), tick_size=p.tick_size)
    report = validate_params(p)
    if not report.valid:
        for v in report.violations:
            print(f"invalid params: {v}", file=sys.stderr)
        sys.exit(EXIT_FAILURE)
    return p


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _make_policy(name: str, table, order_volume: int) -> bt.Policy:
    if name == "optimal_martingale":
        return bt.optimal_martingale_policy(table, order_volume)
    if name == "optimal_forecast":
        return bt.optimal_forecast_policy(table, order_volume)
    if name.startswith("fixed_level_"):
        return bt.fixed_level_policy(int(name.rsplit("_", 1)[1]), order_volume)
    raise ValueError(f"unknown policy {name!r}")


def _read_events(path: Path):
    if path.suffix == ".csv":
        return read_events_csv(path)
    return read_events_binary(path)


def _day_files(events_dir: Path):
    files = sorted(p for p in events_dir.iterdir()
                   if p.suffix in (".bin", ".csv"))
    if not files:
        raise FileNotFoundError(f"no event files in {events_dir}")
    return files


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_solve(cfg) -> int:
    p = _load_params_or_exit(cfg)
    out = _outdir(cfg)
    table = backward_pass(p)
    table_to_csv(table, out / "coefficients.csv")

    pi11_grid = [float(x) for x in cfg["pi11_grid"]]
    inv_grid = [float(x) for x in cfg["inventory_grid"]]
    tables = []
    for pi11 in pi11_grid:
        arr = p.arrivals
        lo = np.maximum(arr.pi_plus + arr.pi_minus - 1.0, 0.0)
        hi = np.minimum(arr.pi_plus, arr.pi_minus)
        pj = np.clip(np.full_like(arr.pi_plus, pi11), lo, hi)
        variant = MarketParams(
            grid=p.grid,
            arrivals=type(arr)(pi_plus=arr.pi_plus, pi_minus=arr.pi_minus,
                               pi_joint=pj),
            moments=p.moments, lam=p.lam, tick_size=p.tick_size)
        tables.append(backward_pass(variant))
    with open(out / "spread_surface.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        header = ["k"] + [f"spread_pi11_{pi11}_I_{I}"
                          for pi11 in pi11_grid for I in inv_grid]
        w.writerow(header)
        for k in range(p.grid.n_steps):
            row = [k]
            for t in tables:
                for I in inv_grid:
                    Lp, Lm = optimal_spreads(t, k, I)
                    row.append(f"{Lp + Lm:.10f}")
            w.writerow(row)
    print(f"wrote {out / 'coefficients.csv'} and {out / 'spread_surface.csv'}")
    return EXIT_OK


def cmd_simulate(cfg) -> int:
    p = _load_params_or_exit(cfg)
    out = _outdir(cfg)
    table = backward_pass(p)
    mom = p.moments
    for side in (mom.plus, mom.minus):
        if side.mu_p is None:
            print("simulate requires mu_p/mu_p2 in the parameter file",
                  file=sys.stderr)
            return EXIT_FAILURE
    demand = DemandDistribution(
        plus=TwoPointIndependent.from_mean_var(
            mom.plus.mu_c, mom.plus.mu_c2 - mom.plus.mu_c ** 2,
            mom.plus.mu_p, mom.plus.mu_p2 - mom.plus.mu_p ** 2),
        minus=TwoPointIndependent.from_mean_var(
            mom.minus.mu_c, mom.minus.mu_c2 - mom.minus.mu_c ** 2,
            mom.minus.mu_p, mom.minus.mu_p2 - mom.minus.mu_p ** 2))
    market = SimMarket(params=p, demand=demand,
                       price=PriceModel(S0=float(cfg.get("S0", 100.0))))
    policy = make_table_policy(table)
    n_paths = int(cfg["n_paths"])
    seed = int(cfg["seed"])
    (mean, se) = monte_carlo_value(policy, market, n_paths, seed,
                                   chunk_size=int(cfg["chunk_size"]))
    g0 = float(table.g[0])
    summary = {
        "n_paths": n_paths,
        "seed": seed,
        "mean_objective": mean,
        "se": se if n_paths > 1 else None,
        "g0": g0,
        "z": (mean - g0) / se if n_paths > 1 and se > 0 else None,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    ep = run_episode(policy, market, seed)
    with open(out / "episode0.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["k", "S", "W", "I", "L_plus", "L_minus",
                    "Q_plus", "Q_minus"])
        for k in range(p.grid.n_steps):
            w.writerow([k, ep.S[k], ep.W[k], ep.I[k], ep.L_plus[k],
                        ep.L_minus[k], ep.Q_plus[k], ep.Q_minus[k]])
    print(f"mean={mean:.6f} se={se:.6f} g0={g0:.6f}")
    return EXIT_OK


def cmd_estimate(cfg) -> int:
    events_dir = Path(cfg.get("events", ""))
    if not events_dir.is_dir():
        print(f"event directory not found: {events_dir}", file=sys.stderr)
        return EXIT_MISSING_PARAMS
    out = _outdir(cfg)
    grid_cfg = {"n_steps": int(cfg.get("n_steps", 0)) or None,
                "step_seconds": float(cfg.get("step_seconds", 1.0)),
                "tick_size": float(cfg.get("tick_size", 1.0)),
                "session_start_ns": int(cfg.get("session_start_ns",
                                                10 ** 9))}
    window = int(cfg["window"])
    lam = float(cfg.get("lambda", 0.0005))
    from .model import TimeGrid
    store = []
    failures = 0
    files = _day_files(events_dir)
    for i, path in enumerate(files):
        try:
            events = _read_events(path)
            n_steps = grid_cfg["n_steps"]
            if n_steps is None:
                raise ValueError("config must set n_steps")
            grid = TimeGrid(n_steps=n_steps,
                            step_seconds=grid_cfg["step_seconds"],
                            session_start_ns=grid_cfg["session_start_ns"])
            rep = replay(events, grid, tick_size=grid_cfg["tick_size"])
            store.append(estimate_day(rep, i,
                                      level_depth=int(cfg["level_depth"]),
                                      tick_size=grid_cfg["tick_size"]))
        except Exception as exc:
            print(f"day {path.name} failed: {exc}", file=sys.stderr)
            failures += 1
    if not store:
        print("all days failed", file=sys.stderr)
        return EXIT_FAILURE
    n_params = 0
    for i in range(window, len(store)):
        p = rolling_params(i, store, window=window, lam=lam,
                           tick_size=grid_cfg["tick_size"],
                           step_seconds=grid_cfg["step_seconds"],
                           session_start_ns=grid_cfg["session_start_ns"])
        save_params(p, out / f"params_day_{i:04d}.yaml")
        n_params += 1
    if len(store) > window:
        ids, ep, em, ej = compute_break_errors(store, window=window)
        rep = structural_break_flags(ids, ep, em, ej,
                                     q=float(cfg["break_quantile"]))
        with open(out / "break_flags.json", "w") as fh:
            json.dump({"flagged": [int(d) for d in rep.flagged]}, fh)
    print(f"estimated {len(store)} days, wrote {n_params} parameter files, "
          f"{failures} failures")
    return EXIT_OK


def _backtest_one_day(task):
    """Worker: one (day, params file, events file) triple -> result rows."""
    day_idx, params_path, events_path, policy_names, order_volume = task
    p = load_params(params_path)
    events = _read_events(Path(events_path))
    rep = replay(events, p.grid, tick_size=p.tick_size)
    table = None
    rows = []
    for name in policy_names:
        if name.startswith("optimal") and table is None:
            table = backward_pass(p)
        pol = _make_policy(name, table, order_volume)
        r = bt.run_day(p, pol, rep, day_id=day_idx)
        rows.append([day_idx, name, r.objective, r.liquidation_value,
                     r.W_T, r.I_T, r.S_T, r.fills, int(r.incomplete)])
    return day_idx, rows


def cmd_backtest(cfg) -> int:
    events_dir = Path(cfg.get("events", ""))
    params_dir = Path(cfg.get("params", ""))
    if not events_dir.is_dir() or not params_dir.is_dir():
        print("backtest needs events and params directories", file=sys.stderr)
        return EXIT_MISSING_PARAMS
    out = _outdir(cfg)
    files = _day_files(events_dir)
    tasks = []
    for i, path in enumerate(files):
        pp = params_dir / f"params_day_{i:04d}.yaml"
        if pp.exists():
            tasks.append((i, str(pp), str(path), list(cfg["policies"]),
                          int(cfg["order_volume"])))
    if not tasks:
        print("no days with calibrated parameters", file=sys.stderr)
        return EXIT_FAILURE
    workers = int(cfg["workers"])
    results = {}
    failures = 0
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for day_idx, rows in pool.map(_backtest_one_day, tasks):
                results[day_idx] = rows
    else:
        for task in tasks:
            try:
                day_idx, rows = _backtest_one_day(task)
                results[day_idx] = rows
            except Exception as exc:
                print(f"day {task[0]} failed: {exc}", file=sys.stderr)
                failures += 1
    if not results:
        print("all days failed", file=sys.stderr)
        return EXIT_FAILURE
    with open(out / "day_results.csv", "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["day", "policy", "objective", "liquidation_value",
                    "W_T", "I_T", "S_T", "fills", "incomplete"])
        for day_idx in sorted(results):
            for row in results[day_idx]:
                w.writerow(row)
    print(f"backtested {len(results)} days "
          f"({failures} failures) -> {out / 'day_results.csv'}")
    return EXIT_OK


def cmd_report(cfg) -> int:
    out = _outdir(cfg)
    results_path = Path(cfg.get("results", out / "day_results.csv"))
    if not results_path.exists():
        print(f"results file not found: {results_path}", file=sys.stderr)
        return EXIT_EMPTY_REPORT
    by_policy = {}
    with open(results_path, newline="") as fh:
        r = _csv.reader(fh)
        next(r, None)
        for row in r:
            if not row or int(row[8]):
                continue
            by_policy.setdefault(row[1], []).append(
                (int(row[0]), float(row[2]), float(row[3])))
    if not by_policy:
        print("empty report", file=sys.stderr)
        return EXIT_EMPTY_REPORT
    flagged = set()
    flags_path = Path(cfg.get("break_flags", out / "break_flags.json"))
    if flags_path.exists():
        with open(flags_path) as fh:
            flagged = set(json.load(fh).get("flagged", []))
    report = {"policies": {}, "n_days": max(len(v) for v in by_policy.values()),
              "n_excluded": len(flagged)}
    for name, rows in sorted(by_policy.items()):
        entry = {}
        for label in ("all", "filtered"):
            keep = [x for x in rows if label == "all" or x[0] not in flagged]
            objs = np.array([x[1] for x in keep])
            liqs = np.array([x[2] for x in keep])
            n = len(objs)
            block = {
                "n_days": n,
                "objective_mean": float(np.mean(objs)) if n else float("nan"),
                "objective_std": float(np.std(objs, ddof=1)) if n > 1 else 0.0,
                "liquidation_mean": (float(np.mean(liqs)) if n
                                     else float("nan")),
                "liquidation_std": (float(np.std(liqs, ddof=1)) if n > 1
                                    else 0.0),
            }
            if n >= 5:
                lo, hi = bt.subsample_bootstrap_ci(objs,
                                                   seed=int(cfg["seed"]))
                block["ci_bootstrap"] = [lo, hi]
                se = block["objective_std"] / np.sqrt(n)
                m = block["objective_mean"]
                block["ci_normal"] = [m - 1.96 * se, m + 1.96 * se]
            entry[label] = block
        report["policies"][name] = entry
    bt.report_to_csv(report, out / "report.csv")
    bt.report_to_json(report, out / "report.json")
    print(f"wrote {out / 'report.csv'} and {out / 'report.json'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hfmm",
        description="Discrete-time market-making engine: solve, simulate, "
                    "calibrate, backtest, report.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "simulate", "estimate", "backtest", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML run configuration file")
        sp.add_argument("--params", help="parameter file (solve/simulate) or "
                                         "calibrated params dir (backtest)")
        sp.add_argument("--events", help="event file directory")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="base random seed "
                                                 f"(default {DEFAULT_SEED})")
        sp.add_argument("--workers", type=int, help="parallel day workers")
        sp.add_argument("--lambda", dest="lam", type=float,
                        help="inventory penalty override")
        sp.add_argument("--window", type=int, help="rolling window (days)")
        sp.add_argument("--policies", help="comma-separated policy list")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
    except FileNotFoundError as exc:
        print(f"config file not found: {exc}", file=sys.stderr)
        return EXIT_MISSING_PARAMS
    handler = {
        "solve": cmd_solve,
        "simulate": cmd_simulate,
        "estimate": cmd_estimate,
        "backtest": cmd_backtest,
        "report": cmd_report,
    }[args.command]
    return handler(cfg)


if __name__ == "__main__":
    sys.exit(main())
