"""Per-quarter-hour design matrices for the Expert and Full feature sets.

Every feature is on the transformed scale and respects the day-ahead
decision time (day d-1, 15:00): same-day values are only used for series
whose results are published before that (EXAA 10:20, EPEX DA 12:42, the QH
auction 14:40, TSO wind/PV 08:00, load ~10:00). Intraday VWAPs enter with a
lag of at least one day.

The Expert set keeps hand-picked lags {1, 2, 7}, weekday dummies for Monday,
Saturday and Sunday, and compresses each source's 96-slot day vector to its
first three principal components. The Full set uses all lags 1..7, all seven
weekday dummies, and the raw 96-slot day vectors in place of the PCA scores.
PV forecasts enter only for quarter-hours 29..76, the daylight window.
"""

from __future__ import annotations

import datetime as dt
import enum
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError
from .market_data import QH_PER_DAY, Dataset, Market, SeriesId
from .transform import TransformSpec, fit_spec, transform_values

#: 1-based quarter-hours with meaningful PV production.
PV_QH_FIRST, PV_QH_LAST = 29, 76

#: Slots one hour earlier carry the ramp information.
RAMP_SLOT_OFFSET = 4

PCA_COMPONENTS = 3

#: Day-ahead decision time: both targets are predicted at d-1, 15:00.
DECISION_HOUR = 15

#: Publication time of each series for delivery day d, in days before
#: delivery and wall-clock time. Series published on the delivery day itself
#: (intraday VWAP, imbalance settlement) may only be used lagged.
PUBLICATION_TIME: Mapping[Market, tuple[int, dt.time]] = {
    Market.EXAA_QH: (1, dt.time(10, 20)),
    Market.EPEX_DA_H: (1, dt.time(12, 42)),
    Market.EPEX_QH_AUCTION: (1, dt.time(14, 40)),
    Market.LOAD_FCST: (1, dt.time(10, 0)),
    Market.WIND_FCST: (1, dt.time(8, 0)),
    Market.PV_FCST: (1, dt.time(8, 0)),
    Market.EPEX_QH_ID_VWAP: (0, dt.time(23, 59)),
    Market.REBAP: (0, dt.time(23, 59)),
}


class FeatureKind(str, enum.Enum):
    EXPERT = "Expert"
    FULL = "Full"


TARGETS = (Market.EPEX_QH_AUCTION, Market.EPEX_QH_ID_VWAP)


@dataclass(frozen=True)
class FeatureSetKind:
    """Which design to build: Expert or Full, for which target market,
    with or without the same-day EXAA information."""

    kind: FeatureKind
    target: Market
    exaa_enriched: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", FeatureKind(self.kind))
        object.__setattr__(self, "target", Market(self.target))
        if self.target not in TARGETS:
            raise DataError(f"target must be one of "
                            f"{[t.value for t in TARGETS]}, "
                            f"got {self.target.value}")

    @property
    def own_lags(self) -> tuple[int, ...]:
        return (1, 2, 7) if self.kind is FeatureKind.EXPERT else tuple(range(1, 8))

    @property
    def cross_lags(self) -> tuple[int, ...]:
        """Lags for the EPEX DA and EXAA price histories (0 = same day)."""
        return (0, 1, 2, 7) if self.kind is FeatureKind.EXPERT else tuple(range(0, 8))

    @property
    def weekday_dummies(self) -> tuple[int, ...]:
        """ISO weekday numbers carrying a dummy (1 = Monday)."""
        return (1, 6, 7) if self.kind is FeatureKind.EXPERT else tuple(range(1, 8))

    def required_markets(self) -> tuple[Market, ...]:
        base = [self.target, Market.EXAA_QH, Market.EPEX_DA_H,
                Market.LOAD_FCST, Market.WIND_FCST, Market.PV_FCST]
        if self.target is Market.EPEX_QH_ID_VWAP:
            base.append(Market.EPEX_QH_AUCTION)
        return tuple(dict.fromkeys(base))

    def pca_sources(self) -> tuple[tuple[str, Market, int], ...]:
        """(block name, source market, source day lag) per daily price shape.

        The same-day shapes come from markets already published at decision
        time; the last block is always yesterday's own-market day vector.
        """
        sources: list[tuple[str, Market, int]] = []
        if self.exaa_enriched:
            sources.append(("exaa", Market.EXAA_QH, 0))
        sources.append(("da", Market.EPEX_DA_H, 0))
        if self.target is Market.EPEX_QH_ID_VWAP:
            sources.append(("auction", Market.EPEX_QH_AUCTION, 0))
        sources.append(("own_prev", self.target, 1))
        return tuple(sources)

    def model_tag(self, estimator: str) -> str:
        """Conventional model id, e.g. 'Expert_EN_EXAA'."""
        tag = f"{self.kind.value}_{estimator}"
        return f"{tag}_EXAA" if self.exaa_enriched else tag


@dataclass(frozen=True)
class ColumnInfo:
    """Provenance of one design column: where its value comes from.

    ``market`` is None for calendar features (weekday dummies); ``day_lag``
    is the delivery-day lag of the underlying observation (0 = same day).
    """

    name: str
    market: Market | None
    day_lag: int | None
    note: str = ""


@dataclass(frozen=True)
class DesignMatrix:
    """Feature matrix and response for one quarter-hour.

    Rows are the usable response days of the window, in day order. When
    built with a prediction day, ``predict_row`` holds that day's features
    (its response is unknown at decision time).
    """

    qh: int
    kind: FeatureSetKind
    days: tuple[dt.date, ...]
    X: np.ndarray
    y: np.ndarray
    columns: tuple[ColumnInfo, ...]
    predict_day: dt.date | None = None
    predict_row: np.ndarray | None = None

    def __post_init__(self):
        if not 1 <= self.qh <= QH_PER_DAY:
            raise DataError(f"qh must be in 1..96, got {self.qh}")
        if self.X.shape != (len(self.days), len(self.columns)):
            raise DataError("X shape does not match days x columns")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_columns(self) -> int:
        return self.X.shape[1]

    def constant_columns(self) -> list[str]:
        """Non-dummy columns without variation over the rows."""
        out = []
        for j, col in enumerate(self.columns):
            if col.note == "dummy":
                continue
            v = self.X[:, j]
            if v.size and np.all(v == v[0]):
                out.append(col.name)
        return out


@dataclass(frozen=True)
class PcaFactors:
    """Principal directions of daily 96-slot shape vectors.

    ``loadings`` is 96 x k with orthonormal columns; a day's scores are
    ``loadings.T @ (day - mean)``. The sign of each column is fixed so its
    largest-magnitude entry is positive.
    """

    source: SeriesId
    mean: np.ndarray
    loadings: np.ndarray
    explained: np.ndarray

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    def scores(self, day_vectors: np.ndarray) -> np.ndarray:
        day_vectors = np.atleast_2d(np.asarray(day_vectors, dtype=np.float64))
        return (day_vectors - self.mean) @ self.loadings


def pca_fit(day_vectors: np.ndarray, k: int = PCA_COMPONENTS,
            source: SeriesId | None = None) -> PcaFactors:
    """Top-k principal components of the column-centered day vectors.

    Rank-deficient inputs yield fewer than k components with a warning;
    constant inputs yield zero components.
    """
    X = np.asarray(day_vectors, dtype=np.float64)
    if X.ndim != 2:
        raise DataError(f"day_vectors must be 2-d, got shape {X.shape}")
    n = X.shape[0]
    if n < k + 1:
        raise DataError(f"need at least {k + 1} days for {k} components, got {n}")
    if not np.isfinite(X).all():
        raise DataError("day_vectors contain non-finite values")
    mean = X.mean(axis=0)
    centered = X - mean
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    # Singular values at numerical noise level do not define a direction.
    tol = s[0] * max(X.shape) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    k_eff = min(k, rank)
    if k_eff < k:
        warnings.warn(f"day vectors have rank {rank} < {k}; "
                      f"returning {k_eff} components", stacklevel=2)
    loadings = vt[:k_eff].T.copy()
    for j in range(k_eff):
        pivot = np.argmax(np.abs(loadings[:, j]))
        if loadings[pivot, j] < 0:
            loadings[:, j] = -loadings[:, j]
    explained = (s[:k_eff] ** 2) / max(n - 1, 1)
    if source is None:
        source = SeriesId.of(Market.EPEX_QH_AUCTION)
    return PcaFactors(source, mean, loadings, explained)


def similar_load_day(load_history: np.ndarray, target_load: np.ndarray) -> int:
    """Index of the history day with minimum Euclidean distance to the target.

    History rows must be ordered oldest to newest and all lie strictly
    before the target day; distance ties resolve to the most recent day.
    """
    history = np.atleast_2d(np.asarray(load_history, dtype=np.float64))
    if history.shape[0] == 0:
        raise DataError("empty load history")
    target = np.asarray(target_load, dtype=np.float64)
    d2 = np.sum((history - target) ** 2, axis=1)
    return int(np.flatnonzero(d2 == d2.min())[-1])


def decision_time_guard(market: Market | str | None, day_lag: int,
                        target: Market | None = None) -> bool:
    """True when the feature is published before the d-1 15:00 decision.

    ``market`` None denotes calendar features, always available. Any lag of
    one day or more is historical and allowed; same-day values are allowed
    only for series published day-ahead before the decision hour.
    """
    if market is None:
        return True
    market = Market(market)
    if market not in PUBLICATION_TIME:
        raise DataError(f"no publication rule for series {market}")
    if day_lag >= 1:
        return True
    days_ahead, pub_time = PUBLICATION_TIME[market]
    return days_ahead >= 1 and pub_time < dt.time(DECISION_HOUR, 0)


def publication_timestamp(market: Market, delivery_day: dt.date,
                          day_lag: int) -> dt.datetime:
    """Wall-clock moment when the (lagged) observation became public."""
    observed_day = delivery_day - dt.timedelta(days=day_lag)
    days_ahead, pub_time = PUBLICATION_TIME[Market(market)]
    pub_day = observed_day - dt.timedelta(days=days_ahead)
    return dt.datetime.combine(pub_day, pub_time)


def audit_columns(columns: Sequence[ColumnInfo],
                  target: Market | None = None) -> list[str]:
    """Names of columns violating the decision-time guard (should be empty)."""
    return [c.name for c in columns
            if not decision_time_guard(c.market, c.day_lag or 0, target)]


# ---------------------------------------------------------------------------
# Window design factory
# ---------------------------------------------------------------------------

class WindowDesignFactory:
    """Builds the 96 per-quarter-hour designs for one rolling window.

    Day-level inputs shared by all quarter-hours (PCA factors and scores,
    similar-load-day assignment, daily min/max, weekday dummies) are computed
    once here. Transform specs default to a fit over the window itself
    (no lookahead); callers doing full-period reproduction pass their own.
    """

    def __init__(self, dataset: Dataset, kind: FeatureSetKind,
                 window: tuple[dt.date, dt.date],
                 specs: Mapping[Market, TransformSpec] | None = None,
                 predict_day: dt.date | None = None):
        self.dataset = dataset
        self.kind = kind
        for market in kind.required_markets():
            if market not in dataset:
                raise DataError(f"dataset is missing required series "
                                f"{market.value} for {kind.kind.value} designs")
        w0, w1 = window
        if w1 < w0:
            raise DataError(f"empty window [{w0}, {w1}]")
        self._w0 = dataset.day_index(w0)
        self._w1 = dataset.day_index(w1)
        self._pred = dataset.day_index(predict_day) if predict_day else None
        if self._pred is not None and self._pred <= self._w1:
            raise DataError(f"prediction day {predict_day} must follow the "
                            f"window end {w1}")
        self.predict_day = predict_day

        # Usable response rows: need lag-7 history inside the dataset.
        row0 = max(self._w0, 7)
        if row0 > self._w1:
            raise DataError(f"window [{w0}, {w1}] leaves no usable rows "
                            "after the 7-day lag burn-in")
        self.rows = np.arange(row0, self._w1 + 1)
        if self._pred is not None and self._pred < 7:
            raise DataError("prediction day lacks 7 days of history")

        if specs is None:
            specs = {m: fit_spec(dataset.get(m), window)
                     for m in kind.required_markets()}
        self.specs = specs
        self._grid = {m: transform_values(dataset.values(m), specs[m])
                      for m in kind.required_markets()}

        self._prepare_day_features()

    # -- day-level blocks ---------------------------------------------------

    def _all_days(self) -> np.ndarray:
        if self._pred is None:
            return self.rows
        return np.append(self.rows, self._pred)

    def _prepare_day_features(self):
        kind = self.kind
        tgt = self._grid[kind.target]
        days = self._all_days()

        self._weekdays = np.array(
            [self.dataset.date_at(int(t)).isoweekday() for t in days])
        self._prev_min = tgt[days - 1].min(axis=1)
        self._prev_max = tgt[days - 1].max(axis=1)

        self.pca: dict[str, PcaFactors] = {}
        self._pca_scores: dict[str, np.ndarray] = {}
        if kind.kind is FeatureKind.EXPERT:
            for block, market, lag in kind.pca_sources():
                fit_vectors = self._grid[market][self.rows - lag]
                factors = pca_fit(fit_vectors, PCA_COMPONENTS,
                                  SeriesId.of(market))
                self.pca[block] = factors
                self._pca_scores[block] = factors.scores(
                    self._grid[market][days - lag])

        load = self._grid[Market.LOAD_FCST]
        sim = np.empty(days.size, dtype=np.int64)
        for i, t in enumerate(days.tolist()):
            first = self._w0 if t > self._w0 else t - 1
            candidates = np.arange(first, t)
            sim[i] = candidates[
                similar_load_day(load[candidates], load[t])]
        self._similar = sim

    # -- per-qh assembly ----------------------------------------------------

    def _column_blocks(self, qh: int):
        """Yield (ColumnInfo, per-day value vector) in the documented order."""
        kind = self.kind
        q = qh - 1
        ramp_q = q - RAMP_SLOT_OFFSET if q >= RAMP_SLOT_OFFSET else q
        days = self._all_days()
        grid = self._grid
        tgt = kind.target

        def col(name, market, lag, values, note=""):
            return ColumnInfo(name, market, lag, note), values

        for j in kind.own_lags:
            yield col(f"own_lag{j}", tgt, j, grid[tgt][days - j, q])

        yield col("wind", Market.WIND_FCST, 0,
                  grid[Market.WIND_FCST][days, q])
        yield col("wind_ramp", Market.WIND_FCST, 0,
                  grid[Market.WIND_FCST][days, ramp_q], "prev hour")
        if PV_QH_FIRST <= qh <= PV_QH_LAST:
            yield col("pv", Market.PV_FCST, 0, grid[Market.PV_FCST][days, q])
            yield col("pv_ramp", Market.PV_FCST, 0,
                      grid[Market.PV_FCST][days, ramp_q], "prev hour")

        for k in kind.cross_lags:
            yield col(f"da_lag{k}", Market.EPEX_DA_H, k,
                      grid[Market.EPEX_DA_H][days - k, q])
        for k in kind.cross_lags:
            if k == 0 and not kind.exaa_enriched:
                continue
            yield col(f"exaa_lag{k}", Market.EXAA_QH, k,
                      grid[Market.EXAA_QH][days - k, q])

        if tgt is Market.EPEX_QH_ID_VWAP:
            auction = grid[Market.EPEX_QH_AUCTION]
            if kind.kind is FeatureKind.EXPERT:
                yield col("auction_same_day", Market.EPEX_QH_AUCTION, 0,
                          auction[days, q])
            else:
                for k in range(0, 8):
                    yield col(f"auction_lag{k}", Market.EPEX_QH_AUCTION, k,
                              auction[days - k, q])

        yield col("own_prev_min", tgt, 1, self._prev_min, "daily min")
        yield col("own_prev_max", tgt, 1, self._prev_max, "daily max")

        yield col("load", Market.LOAD_FCST, 0,
                  grid[Market.LOAD_FCST][days, q])
        yield col("load_ramp", Market.LOAD_FCST, 0,
                  grid[Market.LOAD_FCST][days, ramp_q], "prev hour")

        for block, market, lag in kind.pca_sources():
            if kind.kind is FeatureKind.EXPERT:
                scores = self._pca_scores[block]
                for j in range(scores.shape[1]):
                    yield col(f"{block}_pc{j + 1}", market, lag,
                              scores[:, j], "pca")
            else:
                day_vectors = self._grid[market][days - lag]
                for s in range(QH_PER_DAY):
                    yield col(f"{block}_s{s + 1}", market, lag,
                              day_vectors[:, s], "day vector")

        for wd in kind.weekday_dummies:
            name = ("mon", "tue", "wed", "thu", "fri", "sat", "sun")[wd - 1]
            yield col(name, None, None,
                      (self._weekdays == wd).astype(np.float64), "dummy")

        sim_lag = int(np.min(days - self._similar))
        yield col("similar_day_price", tgt, sim_lag,
                  grid[tgt][self._similar, q], "similar load day")

    def design(self, qh: int) -> DesignMatrix:
        if not 1 <= qh <= QH_PER_DAY:
            raise DataError(f"qh must be in 1..96, got {qh}")
        columns: list[ColumnInfo] = []
        vectors: list[np.ndarray] = []
        for info, values in self._column_blocks(qh):
            columns.append(info)
            vectors.append(values)
        full = np.column_stack(vectors)
        n = self.rows.size
        X, predict_row = full[:n], (full[n] if self._pred is not None else None)
        y = self._grid[self.kind.target][self.rows, qh - 1]
        days = tuple(self.dataset.date_at(int(t)) for t in self.rows)
        return DesignMatrix(qh, self.kind, days, X, y, tuple(columns),
                            self.predict_day, predict_row)


def build_design(dataset: Dataset, kind: FeatureSetKind, qh: int,
                 window: tuple[dt.date, dt.date],
                 specs: Mapping[Market, TransformSpec] | None = None,
                 predict_day: dt.date | None = None) -> DesignMatrix:
    """Design matrix for one quarter-hour over one training window.

    Convenience wrapper over :class:`WindowDesignFactory`; when building many
    quarter-hours for the same window, construct the factory once instead.
    """
    factory = WindowDesignFactory(dataset, kind, window, specs, predict_day)
    return factory.design(qh)
