"""Trading strategies on top of the forecast panel, and their accounting.

All strategies allocate one quarter-hourly position between the two QH
venues (auction and continuous intraday VWAP) and settle at realized prices:

* naive: always the same single market;
* perfect: the realized-cheaper (buy) or realized-dearer (sell) venue;
* base: the venue with the lower/higher *forecast* price;
* mean-variance: weights from maximizing the risk-penalized expected price
  (gamma = 2), with rolling empirical variances and covariance.

Accounting turns realized strategy prices into the summary statistics of a
results table (average/min/max price, standard deviation, Sharpe ratio) and
into cash deltas against benchmark strategies at a given MW volume, with
quarter-hourly delivery (0.25 h per slot).
"""

from __future__ import annotations

import datetime as dt
import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .backtest import ForecastPanel
from .errors import DataError, NumericalError
from .evaluation import sharpe
from .market_data import Dataset, Market

DEFAULT_VENUES = (Market.EPEX_QH_AUCTION, Market.EPEX_QH_ID_VWAP)
DEFAULT_GAMMA = 2.0
DEFAULT_VOLUME_MW = 50.0
HOURS_PER_SLOT = 0.25

GOLDEN_TOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
#: Bracket halvings needed to shrink [0, 1] below GOLDEN_TOL.
_GOLDEN_ITERS = int(math.ceil(math.log(GOLDEN_TOL) / math.log(_INVPHI)))


class Side(str, enum.Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True)
class StrategyLedger:
    """Per-slot outcome of one strategy over the panel days.

    ``price`` is the realized strategy price (NaN on skipped slots). Discrete
    two-venue strategies also record the chosen venue (0 = first venue) and,
    for forecast-driven ones, where the forecasts were exactly tied.
    Mean-variance strategies record the weight on the second venue instead.
    """

    name: str
    side: Side | None
    days: tuple[dt.date, ...]
    price: np.ndarray
    venues: tuple[Market, Market] | None = None
    venue: np.ndarray | None = None
    w2: np.ndarray | None = None
    forecast_tie: np.ndarray | None = None
    volume_mw: float = DEFAULT_VOLUME_MW
    skipped: list[tuple[dt.date, int, str]] = field(default_factory=list)

    @property
    def evaluated(self) -> np.ndarray:
        return np.isfinite(self.price)

    def prices(self) -> np.ndarray:
        """Realized prices over evaluated slots, flattened in day order."""
        return self.price[self.evaluated]

    @property
    def n_slots(self) -> int:
        return int(self.evaluated.sum())


def _check_weights(w2: np.ndarray) -> None:
    ok = np.isfinite(w2)
    if np.any((w2[ok] < 0.0) | (w2[ok] > 1.0)):
        raise NumericalError("portfolio weights left [0, 1]")


def _require_venue_grids(panel: ForecastPanel,
                         venues: tuple[Market, Market]):
    v1, v2 = (Market(v) for v in venues)
    for v in (v1, v2):
        if v not in panel.realized:
            raise DataError(f"panel has no realized prices for {v.value}")
    return v1, v2


def _restrict_qhs(price: np.ndarray, qhs: Sequence[int] | None) -> np.ndarray:
    if qhs is None:
        return price
    keep = np.zeros(price.shape[1], dtype=bool)
    keep[np.asarray(qhs, dtype=int) - 1] = True
    return np.where(keep[None, :], price, np.nan)


def naive_strategy(dataset: Dataset, market: Market,
                   days: Sequence[dt.date],
                   volume_mw: float = DEFAULT_VOLUME_MW,
                   qhs: Sequence[int] | None = None,
                   name: str | None = None) -> StrategyLedger:
    """Trade every slot in one market at its realized price."""
    market = Market(market)
    grid = dataset.values(market)
    i0 = dataset.day_index(days[0])
    price = np.array(grid[i0:i0 + len(days)], dtype=np.float64)
    return StrategyLedger(name or f"Naive_{market.value}", None, tuple(days),
                          _restrict_qhs(price, qhs), volume_mw=volume_mw)


def perfect_strategy(panel: ForecastPanel, side: Side | str,
                     venues: tuple[Market, Market] = DEFAULT_VENUES,
                     volume_mw: float = DEFAULT_VOLUME_MW,
                     qhs: Sequence[int] | None = None) -> StrategyLedger:
    """Full-information benchmark: realized best venue per slot."""
    side = Side(side)
    v1, v2 = _require_venue_grids(panel, venues)
    y1 = _restrict_qhs(panel.realized[v1], qhs)
    y2 = _restrict_qhs(panel.realized[v2], qhs)
    evaluated = np.isfinite(y1) & np.isfinite(y2)
    better2 = np.zeros(y1.shape, dtype=bool)
    better2[evaluated] = ((y2[evaluated] < y1[evaluated]) if side is Side.BUY
                          else (y2[evaluated] > y1[evaluated]))
    venue = np.where(evaluated, better2.astype(np.int8), -1)
    price = np.where(evaluated, np.where(venue == 1, y2, y1), np.nan)
    name = "Perfect_Buy" if side is Side.BUY else "Perfect_Sell"
    return StrategyLedger(name, side, panel.days, price, (v1, v2), venue,
                          volume_mw=volume_mw)


def base_strategy(panel: ForecastPanel, model: str, side: Side | str,
                  venues: tuple[Market, Market] = DEFAULT_VENUES,
                  volume_mw: float = DEFAULT_VOLUME_MW,
                  name: str | None = None) -> StrategyLedger:
    """Buy in the lower-forecast venue, sell in the higher-forecast one.

    Forecast ties go to the first venue (the QH auction, whose variance is
    the more moderate of the two).
    """
    side = Side(side)
    v1, v2 = _require_venue_grids(panel, venues)
    f1 = panel.predictions[(model, v1)]
    f2 = panel.predictions[(model, v2)]
    y1, y2 = panel.realized[v1], panel.realized[v2]
    evaluated = (np.isfinite(f1) & np.isfinite(f2)
                 & np.isfinite(y1) & np.isfinite(y2))
    pick2 = (f2 < f1) if side is Side.BUY else (f2 > f1)
    venue = np.where(evaluated, pick2.astype(np.int8), -1)
    price = np.where(evaluated, np.where(venue == 1, y2, y1), np.nan)
    tie = evaluated & (f1 == f2)
    skipped = [(panel.days[d], q + 1, "missing forecast or price")
               for d, q in zip(*np.nonzero(~evaluated))
               if q + 1 in panel.qhs]
    if name is None:
        name = f"Base_{'Buy' if side is Side.BUY else 'Sell'}[{model}]"
    return StrategyLedger(name, side, panel.days, price, (v1, v2), venue,
                          forecast_tie=tie, volume_mw=volume_mw,
                          skipped=skipped)


# ---------------------------------------------------------------------------
# Mean-variance selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MeanVarInputs:
    """Forecast means, rolling variances and covariance for the two venues."""

    mu1: float
    mu2: float
    var1: float
    var2: float
    cov12: float
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        if self.var1 < 0.0 or self.var2 < 0.0:
            raise NumericalError("variances must be non-negative")
        bound = math.sqrt(self.var1 * self.var2)
        if abs(self.cov12) > bound * (1.0 + 1e-9) + 1e-12:
            raise NumericalError(
                f"|cov| = {abs(self.cov12):.6g} exceeds sqrt(var1*var2) "
                f"= {bound:.6g}")
        if self.gamma <= 0.0:
            raise NumericalError("gamma must be positive")


def portfolio_mean(inputs: MeanVarInputs, w2: float) -> float:
    return inputs.mu1 + w2 * (inputs.mu2 - inputs.mu1)


def portfolio_variance(inputs: MeanVarInputs, w2: float) -> float:
    return (inputs.var1 + 2.0 * w2 * (inputs.cov12 - inputs.var1)
            + w2 ** 2 * (inputs.var1 - 2.0 * inputs.cov12 + inputs.var2))


def meanvar_objective(inputs: MeanVarInputs, w2: float,
                      side: Side | str) -> float:
    """Utility to maximize: E - (g/2)V for a seller, -(E + (g/2)V) for a buyer."""
    e = portfolio_mean(inputs, w2)
    v = portfolio_variance(inputs, w2)
    if Side(side) is Side.SELL:
        return e - 0.5 * inputs.gamma * v
    return -(e + 0.5 * inputs.gamma * v)


def _gain_coefficients(mu1, mu2, var1, var2, cov12, gamma, side: Side):
    """Utility gain over w2 = 0 as A*w - B*w^2 (same argmax, offset-free)."""
    spread = mu2 - mu1
    d = var1 - 2.0 * cov12 + var2
    if side is Side.SELL:
        a = spread - gamma * (cov12 - var1)
    else:
        a = -spread - gamma * (cov12 - var1)
    return a, 0.5 * gamma * d


def _golden_max_quadratic(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """argmax over [0, 1] of a*w - b*w^2 (b > 0) by golden-section search."""
    lo = np.zeros_like(a)
    hi = np.ones_like(a)
    for _ in range(_GOLDEN_ITERS):
        x1 = hi - _INVPHI * (hi - lo)
        x2 = lo + _INVPHI * (hi - lo)
        f1 = a * x1 - b * x1 ** 2
        f2 = a * x2 - b * x2 ** 2
        left = f1 >= f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
    return 0.5 * (lo + hi)


def _weights(mu1, mu2, var1, var2, cov12, gamma, side: Side) -> np.ndarray:
    """Vectorized optimal w2 in [0, 1] per slot."""
    a, b = _gain_coefficients(np.asarray(mu1, dtype=np.float64),
                              np.asarray(mu2, dtype=np.float64),
                              np.asarray(var1, dtype=np.float64),
                              np.asarray(var2, dtype=np.float64),
                              np.asarray(cov12, dtype=np.float64),
                              gamma, side)
    a = np.atleast_1d(a)
    b = np.atleast_1d(np.maximum(b, 0.0))
    w = np.zeros_like(a)
    # Degenerate (linear) slots: boundary with the better objective, tie -> 0.
    linear = b <= 0.0
    w[linear] = (a[linear] > 0.0).astype(np.float64)
    if np.any(~linear):
        w[~linear] = _golden_max_quadratic(a[~linear], b[~linear])
    return w


def meanvar_weight(inputs: MeanVarInputs, side: Side | str) -> float:
    """Optimal weight on the second venue, by golden-section search.

    The quadratic utility is unimodal on [0, 1]; the search runs on the
    offset-free gain so the tolerance of 1e-10 is meaningful at price scale.
    """
    side = Side(side)
    w = _weights(inputs.mu1, inputs.mu2, inputs.var1, inputs.var2,
                 inputs.cov12, inputs.gamma, side)
    return float(w[0])


def closed_form_weight(inputs: MeanVarInputs, side: Side | str) -> float:
    """Clipped analytic optimum; the independent cross-check for the search."""
    side = Side(side)
    d = inputs.var1 - 2.0 * inputs.cov12 + inputs.var2
    if d <= 0.0:
        return meanvar_weight(inputs, side)
    sign = 1.0 if side is Side.SELL else -1.0
    w = (sign * (inputs.mu2 - inputs.mu1) / inputs.gamma
         - (inputs.cov12 - inputs.var1)) / d
    return float(min(max(w, 0.0), 1.0))


@dataclass(frozen=True)
class MomentGrids:
    """Rolling per-slot variance/covariance of the two venues' prices."""

    venues: tuple[Market, Market]
    days: tuple[dt.date, ...]
    window_days: int
    var1: np.ndarray
    var2: np.ndarray
    cov12: np.ndarray

    def inputs_at(self, day_index: int, qh: int, mu1: float, mu2: float,
                  gamma: float = DEFAULT_GAMMA) -> MeanVarInputs:
        q = qh - 1
        return MeanVarInputs(mu1, mu2, float(self.var1[day_index, q]),
                             float(self.var2[day_index, q]),
                             float(self.cov12[day_index, q]), gamma)


def rolling_moments(dataset: Dataset, days: Sequence[dt.date],
                    window_days: int,
                    venues: tuple[Market, Market] = DEFAULT_VENUES,
                    ) -> MomentGrids:
    """Trailing-window empirical moments per (day, quarter-hour).

    For each day d the window covers the ``window_days`` days ending at
    d - 1, so only realized history enters; shifting d by one day changes the
    moments only through the entering and leaving day.
    """
    if window_days < 30:
        raise DataError(f"moment window of {window_days} days is shorter "
                        "than 30")
    v1, v2 = (Market(v) for v in venues)
    y1 = dataset.values(v1)
    y2 = dataset.values(v2)

    first = dataset.day_index(days[0])
    if first - window_days < 0:
        raise DataError(
            f"dataset lacks {window_days} days of history before {days[0]}")
    idx = np.array([dataset.day_index(d) for d in days])

    def window_mean(grid):
        cum = np.vstack([np.zeros((1, grid.shape[1])),
                         np.cumsum(grid, axis=0)])
        return (cum[idx] - cum[idx - window_days]) / window_days

    m1 = window_mean(y1)
    m2 = window_mean(y2)
    m11 = window_mean(y1 * y1)
    m22 = window_mean(y2 * y2)
    m12 = window_mean(y1 * y2)
    var1 = np.maximum(m11 - m1 ** 2, 0.0)
    var2 = np.maximum(m22 - m2 ** 2, 0.0)
    cov = m12 - m1 * m2
    # Clamp covariance into the PSD cone against rounding noise.
    bound = np.sqrt(var1 * var2)
    cov = np.clip(cov, -bound, bound)
    return MomentGrids((v1, v2), tuple(days), window_days, var1, var2, cov)


def meanvar_strategy(panel: ForecastPanel, model: str, side: Side | str,
                     moments: MomentGrids, gamma: float = DEFAULT_GAMMA,
                     volume_mw: float = DEFAULT_VOLUME_MW,
                     name: str | None = None) -> StrategyLedger:
    """Mean-variance allocation between the venues, settled at (12)-style
    blended realized prices."""
    side = Side(side)
    v1, v2 = _require_venue_grids(panel, moments.venues)
    if moments.days != panel.days:
        raise DataError("moment grids do not cover the panel days")
    f1 = panel.predictions[(model, v1)]
    f2 = panel.predictions[(model, v2)]
    y1, y2 = panel.realized[v1], panel.realized[v2]
    evaluated = (np.isfinite(f1) & np.isfinite(f2)
                 & np.isfinite(y1) & np.isfinite(y2))

    w2 = np.full(f1.shape, np.nan)
    ok = evaluated
    w2[ok] = _weights(f1[ok], f2[ok], moments.var1[ok], moments.var2[ok],
                      moments.cov12[ok], gamma, side)
    _check_weights(w2)
    price = np.where(ok, (1.0 - w2) * y1 + w2 * y2, np.nan)
    if name is None:
        name = f"MeanVar_{'Buy' if side is Side.BUY else 'Sell'}[{model}]"
    return StrategyLedger(name, side, panel.days, price, (v1, v2), w2=w2,
                          volume_mw=volume_mw)


# ---------------------------------------------------------------------------
# Accounting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrategySummary:
    """Results-table row for one strategy, plus cash deltas vs benchmarks."""

    name: str
    side: Side | None
    n_slots: int
    volume_mw: float
    fees: float
    avg_price: float
    min_price: float
    max_price: float
    std_price: float
    sharpe_ratio: float
    cash_eur: float
    delta_vs: dict[str, float] = field(default_factory=dict)


def account(ledger: StrategyLedger, volume_mw: float | None = None,
            fees: float = 0.0,
            benchmarks: Mapping[str, StrategyLedger] | None = None,
            ) -> StrategySummary:
    """Summarize a ledger and, optionally, its cash advantage per benchmark.

    The cash delta per slot is (benchmark - strategy) * volume * 0.25h on the
    buy side and its negation on the sell side, so positive deltas are
    savings (buyer) or extra revenue (seller). Fees in EUR/MWh worsen the
    effective price on either side.
    """
    if ledger.n_slots == 0:
        raise DataError(f"{ledger.name}: empty ledger")
    volume = ledger.volume_mw if volume_mw is None else float(volume_mw)
    prices = ledger.prices()
    if fees:
        if ledger.side is None:
            raise DataError("fees need a buy/sell side")
        prices = prices + fees if ledger.side is Side.BUY else prices - fees

    deltas: dict[str, float] = {}
    if benchmarks:
        if ledger.side is None:
            raise DataError("cash deltas need a buy/sell side")
        sign = 1.0 if ledger.side is Side.BUY else -1.0
        for bname, bench in benchmarks.items():
            if bench.price.shape != ledger.price.shape or not np.array_equal(
                    bench.evaluated, ledger.evaluated):
                raise DataError(
                    f"benchmark {bname} covers different slots than "
                    f"{ledger.name}")
            gap = sign * (bench.prices() - prices)
            deltas[bname] = float(np.sum(gap) * volume * HOURS_PER_SLOT)

    return StrategySummary(
        name=ledger.name,
        side=ledger.side,
        n_slots=ledger.n_slots,
        volume_mw=volume,
        fees=fees,
        avg_price=float(prices.mean()),
        min_price=float(prices.min()),
        max_price=float(prices.max()),
        std_price=float(prices.std()),
        sharpe_ratio=sharpe(prices),
        cash_eur=float(np.sum(prices) * volume * HOURS_PER_SLOT),
        delta_vs=deltas,
    )


def summary_table(summaries: Sequence[StrategySummary]) -> pd.DataFrame:
    """Results table with the usual columns (price, min, max, sd, Sharpe)."""
    rows = []
    for s in summaries:
        row = {"portfolio": s.name,
               "side": s.side.value if s.side else "",
               "price": s.avg_price, "min_price": s.min_price,
               "max_price": s.max_price, "std_dev": s.std_price,
               "sharpe_ratio": s.sharpe_ratio, "n_slots": s.n_slots}
        for bench, delta in s.delta_vs.items():
            row[f"delta_eur_vs_{bench}"] = delta
        rows.append(row)
    return pd.DataFrame(rows)
