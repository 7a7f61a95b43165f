"""Command-line pipeline: ingest -> backtest -> evaluate -> portfolio.

Each stage reads a JSON config, consumes the previous stage's files from the
output directory, and writes its own inspectable artifacts there, so stages
are independently rerunnable. A handful of flags override config keys; the
QHSPOT_OUTPUT_DIR environment variable overrides the output directory.

Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import backtest as bt
from . import estimators, evaluation
from . import market_data as md
from . import portfolio as pf
from .errors import ConfigError, DataError, NumericalError, QhSpotError

DATASET_SUBDIR = "dataset"
PANEL_FILE = "panel.csv"
RUN_MANIFEST = "run_manifest.json"


#: Keys that change how a run executes but not what it computes.
_EXECUTION_KEYS = ("jobs", "resume", "output_dir")


def canonical_config_hash(config: dict) -> str:
    """Hash that is invariant to key order and execution-only settings."""
    payload = {k: v for k, v in config.items() if k not in _EXECUTION_KEYS}
    encoded = json.dumps(payload, sort_keys=True, separators=(",", ":"),
                         ensure_ascii=True)
    return hashlib.sha256(encoded.encode()).hexdigest()


def _date(value: str) -> dt.date:
    return dt.date.fromisoformat(value)


def load_config(path: str | Path, overrides: dict | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    for key, value in (overrides or {}).items():
        if value is not None:
            config[key] = value
    if "QHSPOT_OUTPUT_DIR" in os.environ:
        config["output_dir"] = os.environ["QHSPOT_OUTPUT_DIR"]
    config.setdefault("output_dir", "out")
    return config


def _plan_from(config: dict) -> bt.RollingPlan:
    plan = config.get("plan", {})
    try:
        kwargs = {}
        if "initial_train" in plan:
            kwargs["initial_train"] = tuple(_date(d) for d in plan["initial_train"])
        if "test_range" in plan:
            kwargs["test_range"] = tuple(_date(d) for d in plan["test_range"])
        if "refit_every" in plan:
            kwargs["refit_every"] = int(plan["refit_every"])
        if config.get("refit_every") is not None:
            kwargs["refit_every"] = int(config["refit_every"])
        if "window_policy" in plan:
            kwargs["window_policy"] = plan["window_policy"]
        if plan.get("qh_subset"):
            kwargs["qh_subset"] = tuple(int(q) for q in plan["qh_subset"])
        return bt.RollingPlan(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid plan: {exc}") from None


def _output_dir(config: dict) -> Path:
    out = Path(config["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def cmd_ingest(config: dict) -> int:
    data = config.get("data")
    if not data:
        raise ConfigError("config key 'data' (series -> csv path) is required")
    schema = config.get("schema", "long")
    out = _output_dir(config)
    series = []
    for name, path in sorted(data.items()):
        sid = md.SeriesId.of(name)
        raw = md.ingest_csv(path, schema, expected=sid)
        series.append(md.impute_gaps(raw))
    dataset = md.assemble(series)
    manifest = md.export_dataset(dataset, out / DATASET_SUBDIR)
    manifest["config_hash"] = canonical_config_hash(config)
    (out / DATASET_SUBDIR / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))
    start, end = dataset.date_range
    print(f"ingested {len(series)} series over [{start}, {end}] "
          f"-> {out / DATASET_SUBDIR}")
    return 0


def cmd_backtest(config: dict) -> int:
    out = _output_dir(config)
    dataset = md.load_dataset(out / DATASET_SUBDIR)
    plan = _plan_from(config)
    models = config.get("models", ["NaiveEXAA", "Expert_EN"])
    targets = config.get("targets", ["EPEX_QH_AUCTION"])
    config_hash = canonical_config_hash(config)
    checkpoint = None
    if config.get("resume"):
        checkpoint = bt.Checkpoint(out / "checkpoint", config_hash)
    t0 = time.time()
    panel = bt.run(
        dataset, plan, models, targets,
        transform_mode=config.get("transform_mode", "full_period"),
        alpha=float(config.get("alpha", estimators.DEFAULT_ALPHA)),
        grid_steps=int(config.get("grid_steps", estimators.DEFAULT_GRID_STEPS)),
        cv_folds=int(config.get("cv_folds", estimators.DEFAULT_CV_FOLDS)),
        cv_shuffle=bool(config.get("cv_shuffle", False)),
        seed=config.get("seed"),
        jobs=int(config.get("jobs", 1)),
        audit=bool(config.get("audit", False)),
        checkpoint=checkpoint,
    )
    bt.export_panel(panel, out / PANEL_FILE)
    manifest = bt.manifest(panel, config_hash,
                           timings={"backtest_seconds": time.time() - t0})
    (out / RUN_MANIFEST).write_text(json.dumps(manifest, indent=2,
                                               sort_keys=True))
    models_dir = out / "models"
    models_dir.mkdir(exist_ok=True)
    for (model_id, target), per_qh in sorted(
            panel.last_models.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        fitted = [per_qh[qh] for qh in sorted(per_qh)]
        (models_dir / f"{model_id}_{target.value}.json").write_text(
            estimators.model_to_json(fitted))
    n = sum(panel.n_evaluated(m, t) for m in panel.models
            for t in panel.targets)
    print(f"backtest wrote {n} evaluated slots -> {out / PANEL_FILE} "
          f"({len(panel.skips)} skips)")
    return 0


def cmd_evaluate(config: dict) -> int:
    out = _output_dir(config)
    panel = bt.load_panel(out / PANEL_FILE)
    evaluation.metrics_table(panel).to_csv(out / "metrics.csv", index=False)
    for target in panel.targets:
        for model in panel.models:
            frame = evaluation.per_qh_metrics(panel, model, target)
            frame.to_csv(out / f"per_qh_{target.value}_{model}.csv",
                         index=False)
    benchmark = config.get("dm_benchmark", "NaiveEXAA")
    if benchmark in panel.models and len(panel.models) > 1:
        for target in panel.targets:
            frame = evaluation.dm_table(panel, benchmark, target)
            frame.to_csv(out / f"dm_{target.value}.csv", index=False)
    if len(panel.targets) == 2:
        for model in panel.models:
            try:
                frame = evaluation.dacc_pt_table(panel, model)
            except DataError:
                # e.g. the naive model predicts both venues identically
                continue
            frame.to_csv(out / f"dacc_pt_{model}.csv", index=False)
    print(f"evaluation reports -> {out}")
    return 0


def _portfolio_models(config: dict, panel: bt.ForecastPanel) -> list[str]:
    wanted = config.get("portfolio_models")
    if wanted:
        missing = [m for m in wanted if m not in panel.models]
        if missing:
            raise ConfigError(f"portfolio_models not in panel: {missing}")
        return list(wanted)
    return [m for m in panel.models if m != estimators.NAIVE_EXAA]


def export_ledger_csv(ledger: pf.StrategyLedger, path: Path,
                      volume_mw: float, fees: float = 0.0) -> None:
    """Slot-level ledger rows: date,qh,strategy,venue_or_w2,price,volume_mw,
    cashflow_eur (cash signed positive for sales, negative for purchases)."""
    sign = 0.0
    if ledger.side is pf.Side.SELL:
        sign = 1.0
    elif ledger.side is pf.Side.BUY:
        sign = -1.0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "qh", "strategy", "venue_or_w2", "price",
                         "volume_mw", "cashflow_eur"])
        for d, day in enumerate(ledger.days):
            for q in range(ledger.price.shape[1]):
                price = ledger.price[d, q]
                if not np.isfinite(price):
                    continue
                if ledger.w2 is not None:
                    chosen = repr(float(ledger.w2[d, q]))
                elif ledger.venue is not None and ledger.venues is not None:
                    chosen = ledger.venues[int(ledger.venue[d, q])].value
                else:
                    chosen = ""
                cash = (sign if sign else 1.0) * price * volume_mw \
                    * pf.HOURS_PER_SLOT
                writer.writerow([day.isoformat(), q + 1, ledger.name, chosen,
                                 repr(float(price)), volume_mw,
                                 repr(float(cash))])


def cmd_portfolio(config: dict) -> int:
    out = _output_dir(config)
    panel = bt.load_panel(out / PANEL_FILE)
    dataset = md.load_dataset(out / DATASET_SUBDIR)
    plan = _plan_from(config)
    volume = float(config.get("volume_mw", pf.DEFAULT_VOLUME_MW))
    gamma = float(config.get("gamma", pf.DEFAULT_GAMMA))
    fees = float(config.get("fees", 0.0))

    if len(panel.targets) != 2:
        raise DataError("portfolio stage needs forecasts for both QH venues "
                        f"(panel has {[t.value for t in panel.targets]})")

    naive_markets = [md.Market.EXAA_QH, *pf.DEFAULT_VENUES]
    if md.Market.REBAP in dataset:
        naive_markets.append(md.Market.REBAP)
    naive = {m: pf.naive_strategy(dataset, m, panel.days, volume,
                                  qhs=panel.qhs)
             for m in naive_markets if m in dataset}

    ledgers: list[pf.StrategyLedger] = list(naive.values())
    for side in (pf.Side.BUY, pf.Side.SELL):
        ledgers.append(pf.perfect_strategy(panel, side, volume_mw=volume,
                                           qhs=panel.qhs))

    moments = pf.rolling_moments(dataset, panel.days, plan.train_days)
    for model in _portfolio_models(config, panel):
        for side in (pf.Side.BUY, pf.Side.SELL):
            ledgers.append(pf.base_strategy(panel, model, side,
                                            volume_mw=volume))
            ledgers.append(pf.meanvar_strategy(panel, model, side, moments,
                                               gamma, volume_mw=volume))

    benchmarks = {f"Naive_{m.value}": led for m, led in naive.items()}
    summaries = []
    for ledger in ledgers:
        usable = {name: b for name, b in benchmarks.items()
                  if ledger.side is not None
                  and np.array_equal(b.evaluated, ledger.evaluated)}
        summaries.append(pf.account(ledger, volume, fees, usable or None))
        export_ledger_csv(ledger, out / f"ledger_{_slug(ledger.name)}.csv",
                          volume, fees)
    pf.summary_table(summaries).to_csv(out / "portfolio_summary.csv",
                                       index=False)

    _write_price_tests(out, ledgers)
    savings = {
        s.name: s.delta_vs for s in summaries if s.delta_vs
    }
    (out / "savings.json").write_text(json.dumps(
        {"volume_mw": volume, "fees_eur_mwh": fees, "delta_eur": savings},
        indent=2, sort_keys=True))
    print(f"portfolio reports for {len(ledgers)} strategies -> {out}")
    return 0


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in name)


def _write_price_tests(out: Path, ledgers: list[pf.StrategyLedger]) -> None:
    """Pairwise mean t-tests and Sharpe equality tests on matched ledgers."""
    rows_t, rows_s = [], []
    for i, a in enumerate(ledgers):
        for b in ledgers[i + 1:]:
            if not np.array_equal(a.evaluated, b.evaluated):
                continue
            pa, pb = a.prices(), b.prices()
            try:
                tt = evaluation.mean_ttest(pa, pb)
                rows_t.append({"a": a.name, "b": b.name,
                               "statistic": tt.statistic,
                               "p_value": tt.p_value})
            except QhSpotError:
                pass
            try:
                st = evaluation.sharpe_equality_pairwise(pa, pb)
                rows_s.append({"a": a.name, "b": b.name,
                               "statistic": st.statistic,
                               "p_value": st.p_value})
            except QhSpotError:
                pass
    pd.DataFrame(rows_t).to_csv(out / "mean_ttests.csv", index=False)
    pd.DataFrame(rows_s).to_csv(out / "sharpe_tests.csv", index=False)


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qhspot",
        description="Quarter-hourly price forecasting and portfolio engine")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("ingest", "validate input CSVs and persist the dataset"),
            ("backtest", "run the rolling out-of-sample forecasts"),
            ("evaluate", "accuracy metrics and forecast-comparison tests"),
            ("portfolio", "strategy ledgers, results table, and tests")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--output-dir", help="override config output_dir")
        if name == "backtest":
            p.add_argument("--refit-every", type=int,
                           help="override plan refit cadence")
            p.add_argument("--jobs", type=int,
                           help="worker threads across quarter-hours")
            p.add_argument("--resume", action="store_true",
                           help="continue from the last checkpointed day")
        if name == "portfolio":
            p.add_argument("--volume", type=float,
                           help="position size in MW per quarter-hour")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"output_dir": args.output_dir}
    if args.command == "backtest":
        overrides["refit_every"] = args.refit_every
        overrides["jobs"] = args.jobs
        if args.resume:
            overrides["resume"] = True
    if args.command == "portfolio" and args.volume is not None:
        overrides["volume_mw"] = args.volume
    try:
        config = load_config(args.config, overrides)
        command = {"ingest": cmd_ingest, "backtest": cmd_backtest,
                   "evaluate": cmd_evaluate, "portfolio": cmd_portfolio}
        return command[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
