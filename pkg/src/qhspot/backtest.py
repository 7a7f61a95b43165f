"""Rolling-origin backtest: fit on a moving window, predict the next day.

Each test day d is predicted from models fitted on the window ending d-1
(per-quarter-hour, independently for each model and target). The window then
slides forward by one day. ``refit_every`` > 1 reuses fitted coefficients,
transform constants, PCA loadings and similar-day candidates from the last
refit; predictions are still made every day from that day's feature row.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .features import (FeatureKind, FeatureSetKind, WindowDesignFactory,
                       audit_columns, publication_timestamp)
from .market_data import QH_PER_DAY, Dataset, Market
from .transform import TransformSpec, fit_spec, invert_values, transform_values
from . import estimators

DEFAULT_TRAIN = (dt.date(2015, 10, 8), dt.date(2016, 10, 6))
DEFAULT_TEST = (dt.date(2016, 10, 7), dt.date(2018, 5, 31))

MIN_WINDOW_DAYS = 30

_MODEL_ID = re.compile(r"^(Expert|Full)_(LM|EN)(_EXAA)?$")


@dataclass(frozen=True)
class RollingPlan:
    """When to train, when to predict, and how the window moves.

    The step is fixed to one day (96 quarter-hours). ``qh_subset`` restricts
    the evaluated quarter-hours, which keeps synthetic validation runs fast;
    None means all 96.
    """

    initial_train: tuple[dt.date, dt.date] = DEFAULT_TRAIN
    test_range: tuple[dt.date, dt.date] = DEFAULT_TEST
    refit_every: int = 1
    window_policy: str = "sliding"
    qh_subset: tuple[int, ...] | None = None

    def __post_init__(self):
        t0, t1 = self.initial_train
        s0, s1 = self.test_range
        if t1 < t0 or s1 < s0:
            raise ConfigError("date ranges must be non-empty")
        if t1 >= s0:
            raise ConfigError(f"training end {t1} must precede the first "
                              f"test day {s0}")
        if self.refit_every < 1:
            raise ConfigError("refit_every must be >= 1")
        if self.window_policy not in ("sliding", "expanding"):
            raise ConfigError("window_policy must be 'sliding' or 'expanding'")
        if self.train_days < MIN_WINDOW_DAYS:
            raise ConfigError(f"training window of {self.train_days} days is "
                              f"shorter than {MIN_WINDOW_DAYS}")
        if self.qh_subset is not None:
            qhs = tuple(sorted(set(int(q) for q in self.qh_subset)))
            if not qhs or qhs[0] < 1 or qhs[-1] > QH_PER_DAY:
                raise ConfigError("qh_subset entries must lie in 1..96")
            object.__setattr__(self, "qh_subset", qhs)

    @property
    def train_days(self) -> int:
        t0, t1 = self.initial_train
        return (t1 - t0).days + 1

    @property
    def qhs(self) -> tuple[int, ...]:
        return self.qh_subset or tuple(range(1, QH_PER_DAY + 1))

    def test_days(self) -> list[dt.date]:
        s0, s1 = self.test_range
        return [s0 + dt.timedelta(days=i) for i in range((s1 - s0).days + 1)]

    def window_for(self, day: dt.date) -> tuple[dt.date, dt.date]:
        """Training window for predicting ``day``."""
        end = day - dt.timedelta(days=1)
        if self.window_policy == "expanding":
            return (self.initial_train[0], end)
        return (end - dt.timedelta(days=self.train_days - 1), end)


@dataclass(frozen=True)
class ModelSpec:
    """One entry of the model menu: estimator plus (optional) feature set."""

    model_id: str
    estimator: str                       # NaiveEXAA | LM | EN
    kind: FeatureKind | None = None
    exaa_enriched: bool = False

    @classmethod
    def parse(cls, model_id: str) -> "ModelSpec":
        if model_id == estimators.NAIVE_EXAA:
            return cls(model_id, estimators.NAIVE_EXAA)
        m = _MODEL_ID.match(model_id)
        if not m:
            raise ConfigError(
                f"unknown model id {model_id!r}; expected 'NaiveEXAA' or "
                "'{Expert|Full}_{LM|EN}[_EXAA]'")
        return cls(model_id, m.group(2), FeatureKind(m.group(1)),
                   m.group(3) is not None)

    def feature_set(self, target: Market) -> FeatureSetKind:
        if self.kind is None:
            raise ConfigError(f"{self.model_id} has no feature set")
        return FeatureSetKind(self.kind, target, self.exaa_enriched)


@dataclass(frozen=True)
class SkipRecord:
    day: dt.date
    target: Market
    model: str
    reason: str

    def to_json_dict(self) -> dict:
        return {"date": self.day.isoformat(), "target": self.target.value,
                "model": self.model, "reason": self.reason}


@dataclass
class ForecastPanel:
    """Out-of-sample predictions and realizations on a (day x 96) grid.

    ``predictions[(model, target)]`` and ``realized[target]`` are raw
    EUR/MWh; ``predictions_t`` keeps the transformed-scale values. Slots
    without a prediction are NaN and covered by a skip record.
    """

    days: tuple[dt.date, ...]
    targets: tuple[Market, ...]
    models: tuple[str, ...]
    predictions: dict[tuple[str, Market], np.ndarray]
    predictions_t: dict[tuple[str, Market], np.ndarray]
    realized: dict[Market, np.ndarray]
    qhs: tuple[int, ...] = tuple(range(1, QH_PER_DAY + 1))
    skips: list[SkipRecord] = field(default_factory=list)
    audit_log: list[dict] = field(default_factory=list)
    #: fitted models of the final refit, keyed by (model_id, target):
    #: {qh: FittedModel}; kept for inspection/serialization.
    last_models: dict = field(default_factory=dict)

    def day_index(self, day: dt.date) -> int:
        idx = (day - self.days[0]).days
        if not 0 <= idx < len(self.days) or self.days[idx] != day:
            raise DataError(f"{day} not in panel")
        return idx

    def errors(self, model: str, target: Market) -> np.ndarray:
        """Realized minus predicted, raw scale; NaN where skipped."""
        return self.realized[Market(target)] - self.predictions[(model, Market(target))]

    def evaluated_mask(self, model: str, target: Market) -> np.ndarray:
        target = Market(target)
        return (np.isfinite(self.predictions[(model, target)])
                & np.isfinite(self.realized[target]))

    def n_evaluated(self, model: str, target: Market) -> int:
        return int(self.evaluated_mask(model, target).sum())

    def validate_coverage(self) -> None:
        """Every (day, qh) is predicted or covered by a skip record."""
        skip_keys = {(s.day, s.target, s.model) for s in self.skips}
        qh_cols = np.array(self.qhs) - 1
        for (model, target), grid in self.predictions.items():
            missing = ~np.isfinite(grid[:, qh_cols])
            for d in np.nonzero(missing.any(axis=1))[0]:
                if (self.days[d], target, model) not in skip_keys:
                    raise DataError(
                        f"no prediction and no skip record for {model} / "
                        f"{target.value} on {self.days[d]}")


TRANSFORM_MODES = ("training_only", "full_period", "normalize_only", "none")


def _transform_specs(dataset: Dataset, markets: Iterable[Market],
                     window: tuple[dt.date, dt.date],
                     mode: str) -> dict[Market, TransformSpec]:
    """Transform constants per series for one rolling window.

    ``training_only`` and ``full_period`` are the spec'd modes (window vs
    whole-sample median/MAD, then the log step). ``normalize_only`` keeps the
    affine median/MAD scaling but skips the log step, and ``none`` runs on
    the raw scale; both exist for validation on synthetic linear data.
    """
    if mode not in TRANSFORM_MODES:
        raise ConfigError(f"unknown transform mode {mode!r}; "
                          f"use one of {TRANSFORM_MODES}")
    if mode == "none":
        from .market_data import SeriesId
        return {m: TransformSpec.identity(SeriesId.of(m)) for m in markets}
    if mode == "full_period":
        window = dataset.date_range
    specs = {}
    for m in markets:
        fit_mode = "full_period" if mode == "full_period" else "training_only"
        spec = fit_spec(dataset.get(m), window, fit_mode)
        if mode == "normalize_only":
            spec = replace(spec, use_mlog=False, mode="normalize_only")
        specs[m] = spec
    return specs


def run(dataset: Dataset,
        plan: RollingPlan,
        models: Sequence[str],
        targets: Sequence[Market | str] = (Market.EPEX_QH_AUCTION,),
        transform_mode: str = "training_only",
        alpha: float = estimators.DEFAULT_ALPHA,
        grid_steps: int = estimators.DEFAULT_GRID_STEPS,
        cv_folds: int = estimators.DEFAULT_CV_FOLDS,
        cv_shuffle: bool = False,
        seed: int | None = None,
        jobs: int = 1,
        audit: bool = False,
        checkpoint: "Checkpoint | None" = None,
        ) -> ForecastPanel:
    """Roll through the test range and collect the forecast panel."""
    targets = tuple(Market(t) for t in targets)
    specs = [ModelSpec.parse(m) for m in models]
    start, end = dataset.date_range
    t0, _ = plan.initial_train
    s0, s1 = plan.test_range
    if t0 < start or s1 > end:
        raise DataError(f"dataset [{start}, {end}] does not cover the plan "
                        f"[{t0}, {s1}]")
    for spec in specs:
        if spec.estimator == estimators.NAIVE_EXAA:
            if Market.EXAA_QH not in dataset:
                raise DataError("dataset is missing required series EXAA_QH")
            continue
        for target in targets:
            for market in spec.feature_set(target).required_markets():
                if market not in dataset:
                    raise DataError(
                        f"dataset is missing required series {market.value} "
                        f"for model {spec.model_id}")

    first_window = plan.window_for(plan.test_days()[0])
    if first_window[0] < start:
        raise DataError(
            f"dataset starts {start}, but the window for the first test day "
            f"needs {first_window[0]}")

    days = plan.test_days()
    n_days = len(days)
    shape = (n_days, QH_PER_DAY)
    panel = ForecastPanel(
        days=tuple(days),
        targets=targets,
        models=tuple(s.model_id for s in specs),
        predictions={(s.model_id, t): np.full(shape, np.nan)
                     for s in specs for t in targets},
        predictions_t={(s.model_id, t): np.full(shape, np.nan)
                       for s in specs for t in targets},
        realized={t: np.empty(shape) for t in targets},
        qhs=plan.qhs,
    )
    for t in targets:
        grid = dataset.values(t)
        i0 = dataset.day_index(days[0])
        panel.realized[t][:] = grid[i0:i0 + n_days]

    feature_sets = {}
    for spec in specs:
        if spec.kind is not None:
            for target in targets:
                fs = spec.feature_set(target)
                feature_sets.setdefault((fs, target), []).append(spec)

    start_idx = 0
    if checkpoint is not None:
        start_idx = checkpoint.restore(panel)

    state: dict = {"window": None, "specs": None, "models": {}}

    for di in range(start_idx, n_days):
        day = days[di]
        window = plan.window_for(day)
        # Absolute schedule so the refit days do not depend on restarts.
        refit = (di % plan.refit_every == 0) or state["window"] is None
        if refit:
            w0, w1 = window
            if (w1 - w0).days + 1 < MIN_WINDOW_DAYS:
                raise DataError(f"window [{w0}, {w1}] shorter than "
                                f"{MIN_WINDOW_DAYS} days")
            markets = set()
            for (fs, target), _ in feature_sets.items():
                markets.update(fs.required_markets())
            markets.update(targets)
            if any(s.estimator == estimators.NAIVE_EXAA for s in specs):
                markets.add(Market.EXAA_QH)
            state["specs"] = _transform_specs(dataset, markets, window,
                                              transform_mode)
            state["window"] = window
            state["models"] = {}

        _predict_day(dataset, panel, plan, specs, feature_sets, targets,
                     state, di, day, refit=refit, alpha=alpha,
                     grid_steps=grid_steps, cv_folds=cv_folds,
                     cv_shuffle=cv_shuffle, seed=seed, jobs=jobs, audit=audit)
        if checkpoint is not None:
            checkpoint.save_day(panel, di)

    panel.validate_coverage()
    if checkpoint is not None:
        checkpoint.finish()
    return panel


def _predict_day(dataset, panel, plan, specs, feature_sets, targets, state,
                 di, day, refit, alpha, grid_steps, cv_folds, cv_shuffle,
                 seed, jobs, audit):
    tspecs = state["specs"]
    window = state["window"]

    # Naive pass-through: the same-day EXAA price for every target.
    naive = [s for s in specs if s.estimator == estimators.NAIVE_EXAA]
    if naive:
        exaa_raw = dataset.values(Market.EXAA_QH)[dataset.day_index(day)]
        for target in targets:
            tgt_spec = tspecs[target]
            for qh in plan.qhs:
                raw = float(exaa_raw[qh - 1])
                panel.predictions[(naive[0].model_id, target)][di, qh - 1] = raw
                panel.predictions_t[(naive[0].model_id, target)][di, qh - 1] = \
                    float(transform_values(raw, tgt_spec))

    for (fs, target), members in feature_sets.items():
        try:
            factory = WindowDesignFactory(dataset, fs, window,
                                          specs=tspecs, predict_day=day)
        except DataError as exc:
            for spec in members:
                panel.skips.append(SkipRecord(day, target, spec.model_id,
                                              str(exc)))
            if refit:
                state["models"].pop((fs, target), None)
            continue

        key = (fs, target)
        if refit:
            fitted = _fit_models(factory, members, plan.qhs, alpha,
                                 grid_steps, cv_folds, cv_shuffle, seed, jobs)
            state["models"][key] = fitted
            for spec in members:
                panel.last_models[(spec.model_id, target)] = {
                    qh: m for (mid, qh), m in fitted.items()
                    if mid == spec.model_id}
        fitted = state["models"].get(key)
        if fitted is None:
            for spec in members:
                panel.skips.append(SkipRecord(day, target, spec.model_id,
                                              "no fitted model available"))
            continue

        tgt_spec = tspecs[target]
        audit_entry = None
        for qh in plan.qhs:
            design = factory.design(qh)
            if audit and audit_entry is None:
                bad = audit_columns(design.columns, target)
                if bad:
                    raise DataError(f"causality violation in columns {bad}")
                stamps = [publication_timestamp(c.market, day, c.day_lag)
                          for c in design.columns if c.market is not None]
                audit_entry = {
                    "day": day.isoformat(), "target": target.value,
                    "features": fs.kind.value,
                    "latest_publication": max(stamps).isoformat(),
                    "decision_time": dt.datetime.combine(
                        day - dt.timedelta(days=1), dt.time(15, 0)).isoformat(),
                }
                audit_entry["ok"] = (audit_entry["latest_publication"]
                                     <= audit_entry["decision_time"])
                panel.audit_log.append(audit_entry)
            row = design.predict_row
            for spec in members:
                model = fitted.get((spec.model_id, qh))
                if model is None:
                    continue
                pred_t = model.predict(row, design.names)
                panel.predictions_t[(spec.model_id, target)][di, qh - 1] = pred_t
                panel.predictions[(spec.model_id, target)][di, qh - 1] = \
                    float(invert_values(pred_t, tgt_spec))


def _fit_models(factory, members, qhs, alpha, grid_steps, cv_folds,
                cv_shuffle, seed, jobs):
    """Fit every member model for every quarter-hour on one window."""
    fitted: dict[tuple[str, int], estimators.FittedModel] = {}

    def fit_qh(qh: int):
        out = []
        design = factory.design(qh)
        for spec in members:
            if spec.estimator == estimators.KIND_LM:
                out.append(((spec.model_id, qh), estimators.fit_ols(design)))
            elif spec.estimator == estimators.KIND_EN:
                grid = estimators.LambdaGrid.for_design(
                    design.X, design.y, alpha=alpha, steps=grid_steps)
                out.append(((spec.model_id, qh),
                            estimators.fit_en(design, grid=grid, alpha=alpha,
                                              folds=cv_folds,
                                              shuffle=cv_shuffle, seed=seed)))
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(fit_qh, qhs):
                fitted.update(chunk)
    else:
        for qh in qhs:
            fitted.update(fit_qh(qh))
    return fitted


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

PANEL_HEADER = ["date", "qh", "target", "model", "prediction", "realized"]


def export_panel(panel: ForecastPanel, path: str | Path) -> None:
    """Write the panel as long CSV with a deterministic row order."""
    rows = 0
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(PANEL_HEADER)
        for target in sorted(panel.targets, key=lambda t: t.value):
            for model in panel.models:
                pred = panel.predictions[(model, target)]
                real = panel.realized[target]
                for di, day in enumerate(panel.days):
                    for qh in panel.qhs:
                        p = pred[di, qh - 1]
                        if not np.isfinite(p):
                            continue
                        writer.writerow([day.isoformat(), qh, target.value,
                                         model, repr(float(p)),
                                         repr(float(real[di, qh - 1]))])
                        rows += 1
    if rows == 0:
        path.unlink(missing_ok=True)
        raise DataError("panel has no evaluated slots to export")


def load_panel(path: str | Path) -> ForecastPanel:
    """Rebuild a panel from :func:`export_panel` output."""
    by_key: dict[tuple[str, Market], dict[tuple[dt.date, int], float]] = {}
    realized: dict[Market, dict[tuple[dt.date, int], float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PANEL_HEADER:
            raise DataError(f"{path}: not a forecast panel (header {header})")
        for row in reader:
            day = dt.date.fromisoformat(row[0])
            qh = int(row[1])
            target = Market(row[2])
            by_key.setdefault((row[3], target), {})[(day, qh)] = float(row[4])
            realized.setdefault(target, {})[(day, qh)] = float(row[5])
    if not by_key:
        raise DataError(f"{path}: empty panel")
    all_days = sorted({d for cells in realized.values() for d, _ in cells})
    day0, day1 = all_days[0], all_days[-1]
    days = tuple(day0 + dt.timedelta(days=i)
                 for i in range((day1 - day0).days + 1))
    day_idx = {d: i for i, d in enumerate(days)}
    targets = tuple(sorted(realized, key=lambda t: t.value))
    models = tuple(sorted({m for m, _ in by_key}))
    qhs = tuple(sorted({qh for cells in realized.values() for _, qh in cells}))
    shape = (len(days), QH_PER_DAY)
    panel = ForecastPanel(
        days=days, targets=targets, models=models,
        predictions={(m, t): np.full(shape, np.nan)
                     for m in models for t in targets},
        predictions_t={(m, t): np.full(shape, np.nan)
                       for m in models for t in targets},
        realized={t: np.full(shape, np.nan) for t in targets},
        qhs=qhs,
    )
    for (model, target), cells in by_key.items():
        for (day, qh), value in cells.items():
            panel.predictions[(model, target)][day_idx[day], qh - 1] = value
    for target, cells in realized.items():
        for (day, qh), value in cells.items():
            panel.realized[target][day_idx[day], qh - 1] = value
    return panel


class Checkpoint:
    """Day-level resume support for long backtests.

    After each completed day the prediction rows are appended to a partial
    CSV and the state file records the day index; a rerun with the same
    config hash continues from there.
    """

    def __init__(self, directory: str | Path, config_hash: str):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.state_path = self.dir / "checkpoint.json"
        self.rows_path = self.dir / "panel.partial.csv"

    def restore(self, panel: ForecastPanel) -> int:
        """Load completed days into the panel; returns the next day index."""
        if not self.state_path.exists():
            return 0
        state = json.loads(self.state_path.read_text())
        if state.get("config_hash") != self.config_hash:
            self.state_path.unlink()
            self.rows_path.unlink(missing_ok=True)
            return 0
        done = state["completed_days"]
        if done <= 0 or not self.rows_path.exists():
            return 0
        with open(self.rows_path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                day = dt.date.fromisoformat(row[0])
                di = (day - panel.days[0]).days
                if not 0 <= di < done:
                    continue
                key = (row[3], Market(row[2]))
                qh = int(row[1])
                panel.predictions[key][di, qh - 1] = float(row[4])
                panel.predictions_t[key][di, qh - 1] = float(row[5])
        return done

    def save_day(self, panel: ForecastPanel, di: int) -> None:
        with open(self.rows_path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            day = panel.days[di]
            for (model, target), pred in panel.predictions.items():
                pred_t = panel.predictions_t[(model, target)]
                for qh in panel.qhs:
                    if np.isfinite(pred[di, qh - 1]):
                        writer.writerow([day.isoformat(), qh, target.value,
                                         model, repr(float(pred[di, qh - 1])),
                                         repr(float(pred_t[di, qh - 1]))])
        self.state_path.write_text(json.dumps(
            {"config_hash": self.config_hash, "completed_days": di + 1}))

    def finish(self) -> None:
        self.rows_path.unlink(missing_ok=True)
        self.state_path.unlink(missing_ok=True)


def manifest(panel: ForecastPanel, config_hash: str = "",
             timings: Mapping[str, float] | None = None) -> dict:
    """Run manifest: evaluated counts, skip log, audit summary."""
    counts = {f"{m}/{t.value}": panel.n_evaluated(m, t)
              for m in panel.models for t in panel.targets}
    return {
        "config_hash": config_hash,
        "days": [panel.days[0].isoformat(), panel.days[-1].isoformat()],
        "quarter_hours": list(panel.qhs),
        "models": list(panel.models),
        "targets": [t.value for t in panel.targets],
        "evaluated_slots": counts,
        "skips": [s.to_json_dict() for s in panel.skips],
        "audit": panel.audit_log,
        "timings": dict(timings or {}),
    }
