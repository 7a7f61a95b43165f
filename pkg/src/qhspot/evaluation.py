"""Forecast accuracy and significance statistics.

RMSE/MAE are computed on the raw EUR/MWh scale over all evaluated
(day, quarter-hour) slots, with per-quarter-hour variants for the intraday
term structure. Model comparisons use the Diebold-Mariano test on absolute
(or squared) loss differentials with a Bartlett long-run variance truncated
at lag 4. Directional quality is measured by the high/low-market hit rate
and the Pesaran-Timmermann independence test. Portfolio-level statistics
cover Welch's t-test on price means, the Sharpe ratio with risk-free rate
zero, and a pairwise Sharpe equality test with an HAC delta-method variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .backtest import ForecastPanel
from .errors import DataError, NumericalError
from .market_data import QH_PER_DAY, Market

DM_LAG = 4
MIN_TEST_OBS = 30
MIN_SHARPE_OBS = 100


@dataclass(frozen=True)
class TestResult:
    """Statistic, p-value, and test-specific detail."""

    statistic: float
    p_value: float
    significance_level: float = 0.05
    detail: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if np.isfinite(self.p_value) and not 0.0 <= self.p_value <= 1.0:
            raise NumericalError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def significant(self) -> bool:
        return bool(self.p_value < self.significance_level)

    @property
    def degenerate(self) -> bool:
        return bool(self.detail.get("degenerate", False))


# ---------------------------------------------------------------------------
# Point-forecast accuracy
# ---------------------------------------------------------------------------

def _errors(panel: ForecastPanel, model: str, target: Market) -> np.ndarray:
    err = panel.errors(model, target)
    mask = panel.evaluated_mask(model, target)
    if not mask.any():
        raise DataError(f"no evaluated slots for {model} / {Market(target).value}")
    out = np.full(err.shape, np.nan)
    out[mask] = err[mask]
    return out


def rmse(panel: ForecastPanel, model: str, target: Market) -> float:
    err = _errors(panel, model, target)
    return float(np.sqrt(np.nanmean(err ** 2)))


def mae(panel: ForecastPanel, model: str, target: Market) -> float:
    err = _errors(panel, model, target)
    return float(np.nanmean(np.abs(err)))


def rmse_qh(panel: ForecastPanel, model: str, target: Market) -> np.ndarray:
    """Per-quarter-hour RMSE, NaN for quarter-hours without evaluated slots."""
    err = _errors(panel, model, target)
    with np.errstate(invalid="ignore"):
        return np.sqrt(np.nanmean(err ** 2, axis=0))


def mae_qh(panel: ForecastPanel, model: str, target: Market) -> np.ndarray:
    err = _errors(panel, model, target)
    with np.errstate(invalid="ignore"):
        return np.nanmean(np.abs(err), axis=0)


def metrics_table(panel: ForecastPanel) -> pd.DataFrame:
    """Overall RMSE/MAE per (target, model), one row each."""
    rows = []
    for target in panel.targets:
        for model in panel.models:
            rows.append({"target": target.value, "model": model,
                         "rmse": rmse(panel, model, target),
                         "mae": mae(panel, model, target)})
    return pd.DataFrame(rows)


def per_qh_metrics(panel: ForecastPanel, model: str,
                   target: Market) -> pd.DataFrame:
    return pd.DataFrame({
        "qh": np.arange(1, QH_PER_DAY + 1),
        "rmse": rmse_qh(panel, model, target),
        "mae": mae_qh(panel, model, target),
    })


# ---------------------------------------------------------------------------
# Diebold-Mariano
# ---------------------------------------------------------------------------

def bartlett_lrv(x: np.ndarray, lag: int) -> float:
    """Long-run variance with Bartlett weights, truncation at ``lag``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    centered = x - x.mean()
    lrv = float(centered @ centered) / n
    for k in range(1, min(lag, n - 1) + 1):
        gamma_k = float(centered[k:] @ centered[:-k]) / n
        lrv += 2.0 * (1.0 - k / (lag + 1.0)) * gamma_k
    return max(lrv, 0.0)


def dm_statistic(loss_diff: np.ndarray, lag: int = DM_LAG) -> TestResult:
    """DM test on one loss-differential series, two-sided normal p-value."""
    d = np.asarray(loss_diff, dtype=np.float64)
    n = d.size
    if n < MIN_TEST_OBS:
        raise DataError(f"need at least {MIN_TEST_OBS} observations, got {n}")
    if np.all(d == 0.0):
        return TestResult(0.0, 1.0, detail={"degenerate": True, "lag": lag,
                                            "reason": "identical losses"})
    lrv = bartlett_lrv(d, lag)
    if lrv <= 0.0:
        stat = np.inf if d.mean() > 0 else -np.inf
        return TestResult(float(stat), 0.0,
                          detail={"degenerate": True, "lag": lag,
                                  "reason": "zero long-run variance"})
    stat = d.mean() / np.sqrt(lrv / n)
    p = 2.0 * stats.norm.sf(abs(stat))
    return TestResult(float(stat), float(p), detail={"lag": lag, "n": n})


def loss_differential(panel: ForecastPanel, m1: str, m2: str, target: Market,
                      p: int = 1) -> np.ndarray:
    """(days, 96) grid of |e_m1|^p - |e_m2|^p; NaN where either is skipped.

    Antisymmetric under swapping the models. A positive mean marks m1 as the
    worse model under this loss.
    """
    if p not in (1, 2):
        raise DataError(f"loss exponent must be 1 or 2, got {p}")
    e1 = panel.errors(m1, target)
    e2 = panel.errors(m2, target)
    both = panel.evaluated_mask(m1, target) & panel.evaluated_mask(m2, target)
    diff = np.full(e1.shape, np.nan)
    diff[both] = np.abs(e1[both]) ** p - np.abs(e2[both]) ** p
    return diff


def dm_test(panel: ForecastPanel, m1: str, m2: str, target: Market,
            p: int = 1, lag: int = DM_LAG,
            level: float = 0.05) -> dict[int, TestResult]:
    """Per-quarter-hour DM tests of m1 against m2."""
    diff = loss_differential(panel, m1, m2, target, p)
    results: dict[int, TestResult] = {}
    for qh in panel.qhs:
        d = diff[:, qh - 1]
        d = d[np.isfinite(d)]
        res = dm_statistic(d, lag)
        results[qh] = TestResult(res.statistic, res.p_value, level, res.detail)
    return results


# ---------------------------------------------------------------------------
# Directional accuracy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DaccResult:
    """Per-quarter-hour directional accuracy plus the slot-level grids.

    ``hits`` is 1.0 where the predicted high/low ordering of the two markets
    matched the realized one, NaN on excluded slots; ``ties`` marks slots
    excluded for a predicted or realized exact tie.
    """

    markets: tuple[Market, Market]
    per_qh: np.ndarray
    hits: np.ndarray
    ties: np.ndarray

    @property
    def overall(self) -> float:
        return float(np.nanmean(self.hits))

    @property
    def n_ties(self) -> int:
        return int(self.ties.sum())


def dacc(panel: ForecastPanel, model: str,
         markets: tuple[Market, Market] = (Market.EPEX_QH_AUCTION,
                                           Market.EPEX_QH_ID_VWAP)) -> DaccResult:
    """Share of slots whose high/low market was predicted correctly."""
    m1, m2 = (Market(m) for m in markets)
    f1 = panel.predictions[(model, m1)]
    f2 = panel.predictions[(model, m2)]
    y1 = panel.realized[m1]
    y2 = panel.realized[m2]
    evaluated = (np.isfinite(f1) & np.isfinite(f2)
                 & np.isfinite(y1) & np.isfinite(y2))
    pred_dir = np.sign(f1 - f2)
    real_dir = np.sign(y1 - y2)
    ties = evaluated & ((pred_dir == 0) | (real_dir == 0))
    valid = evaluated & ~ties
    if not valid.any():
        raise DataError("all evaluated slots are ties; directional accuracy "
                        "is undefined")
    hits = np.full(f1.shape, np.nan)
    hits[valid] = (pred_dir[valid] == real_dir[valid]).astype(float)
    with np.errstate(invalid="ignore"):
        per_qh = np.nanmean(hits, axis=0)
    return DaccResult((m1, m2), per_qh, hits, ties)


def pt_test(hits: np.ndarray, predicted: np.ndarray, realized: np.ndarray,
            level: float = 0.05) -> TestResult:
    """Pesaran-Timmermann test of directional independence, one-sided.

    ``predicted`` and ``realized`` are binary direction indicators and
    ``hits`` marks agreement; under the null the directions are independent.
    """
    hits = np.asarray(hits, dtype=np.float64)
    x = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(realized, dtype=np.float64)
    n = hits.size
    if x.size != n or y.size != n:
        raise DataError("hits, predicted and realized must have equal length")
    if n < MIN_TEST_OBS:
        raise DataError(f"need at least {MIN_TEST_OBS} observations, got {n}")
    p_hat = hits.mean()
    px = x.mean()
    py = y.mean()
    p_star = px * py + (1.0 - px) * (1.0 - py)
    v_hat = p_star * (1.0 - p_star) / n
    v_star = ((2.0 * py - 1.0) ** 2 * px * (1.0 - px) / n
              + (2.0 * px - 1.0) ** 2 * py * (1.0 - py) / n
              + 4.0 * px * py * (1.0 - px) * (1.0 - py) / n ** 2)
    detail: dict = {"p_hat": p_hat, "p_star": p_star, "n": n}
    if px in (0.0, 1.0) or py in (0.0, 1.0) or v_hat - v_star <= 0.0:
        detail["degenerate"] = True
        return TestResult(np.nan, np.nan, level, detail)
    stat = (p_hat - p_star) / np.sqrt(v_hat - v_star)
    return TestResult(float(stat), float(stats.norm.sf(stat)), level, detail)


def dacc_pt_table(panel: ForecastPanel, model: str,
                  markets: tuple[Market, Market] = (Market.EPEX_QH_AUCTION,
                                                    Market.EPEX_QH_ID_VWAP),
                  level: float = 0.05) -> pd.DataFrame:
    """Per-quarter-hour DAcc and PT results in one frame."""
    result = dacc(panel, model, markets)
    m1, m2 = result.markets
    f_dir = np.sign(panel.predictions[(model, m1)]
                    - panel.predictions[(model, m2)])
    r_dir = np.sign(panel.realized[m1] - panel.realized[m2])
    rows = []
    for qh in panel.qhs:
        col = result.hits[:, qh - 1]
        ok = np.isfinite(col)
        row = {"qh": qh, "dacc": result.per_qh[qh - 1],
               "n": int(ok.sum()), "ties": int(result.ties[:, qh - 1].sum()),
               "pt_statistic": np.nan, "pt_p_value": np.nan}
        if ok.sum() >= MIN_TEST_OBS:
            pt = pt_test(col[ok], (f_dir[:, qh - 1][ok] > 0),
                         (r_dir[:, qh - 1][ok] > 0), level)
            row["pt_statistic"] = pt.statistic
            row["pt_p_value"] = pt.p_value
        rows.append(row)
    return pd.DataFrame(rows)


# ---------------------------------------------------------------------------
# Portfolio-level statistics
# ---------------------------------------------------------------------------

def mean_ttest(prices_a: np.ndarray, prices_b: np.ndarray,
               level: float = 0.05) -> TestResult:
    """Welch two-sample t-test of equal mean prices, two-sided."""
    a = np.asarray(prices_a, dtype=np.float64).ravel()
    b = np.asarray(prices_b, dtype=np.float64).ravel()
    a, b = a[np.isfinite(a)], b[np.isfinite(b)]
    if min(a.size, b.size) < MIN_TEST_OBS:
        raise DataError(f"insufficient observations for the t-test "
                        f"({a.size}, {b.size}; need {MIN_TEST_OBS})")
    if np.array_equal(a, b):
        return TestResult(0.0, 1.0, level, {"n": (a.size, b.size)})
    if a.var() == 0.0 and b.var() == 0.0:
        return TestResult(np.nan, np.nan, level,
                          {"degenerate": True, "reason": "zero variance"})
    stat, p = stats.ttest_ind(a, b, equal_var=False)
    return TestResult(float(stat), float(p), level, {"n": (a.size, b.size)})


def sharpe(prices: np.ndarray, ddof: int = 0) -> float:
    """Mean realized price over its standard deviation, risk-free rate zero.

    The population standard deviation (ddof=0) is the default, consistent
    with the 1/(96T) mean; pass ddof=1 for the sample convention.
    """
    x = np.asarray(prices, dtype=np.float64).ravel()
    x = x[np.isfinite(x)]
    if x.size == 0:
        raise DataError("empty price series")
    sd = float(np.std(x, ddof=ddof))
    if sd == 0.0:
        raise NumericalError("constant price series: Sharpe ratio undefined")
    return float(x.mean() / sd)


def _sharpe_gradient(mu: float, second: float) -> tuple[float, float]:
    """d(Sharpe)/d(mean), d(Sharpe)/d(second moment) at (mu, E[x^2])."""
    var = second - mu * mu
    sd3 = var ** 1.5
    return second / sd3, -mu / (2.0 * sd3)


def sharpe_equality_pairwise(prices_a: np.ndarray, prices_b: np.ndarray,
                             level: float = 0.05,
                             lag: int | None = None) -> TestResult:
    """Delta-method test of equal Sharpe ratios with an HAC variance.

    The joint moment vector (means and second moments of both series) gets a
    Bartlett HAC covariance with truncation lag n^(1/3) by default; the
    Sharpe difference is mapped through the delta method. Two-sided normal
    p-value.
    """
    a = np.asarray(prices_a, dtype=np.float64).ravel()
    b = np.asarray(prices_b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise DataError("price series must be matched (equal length)")
    ok = np.isfinite(a) & np.isfinite(b)
    a, b = a[ok], b[ok]
    n = a.size
    if n < MIN_SHARPE_OBS:
        raise DataError(f"need at least {MIN_SHARPE_OBS} matched "
                        f"observations, got {n}")
    if lag is None:
        lag = int(np.floor(n ** (1.0 / 3.0)))

    mu_a, mu_b = a.mean(), b.mean()
    sa, sb = np.mean(a ** 2), np.mean(b ** 2)
    var_a, var_b = sa - mu_a ** 2, sb - mu_b ** 2
    if var_a <= 0.0 or var_b <= 0.0:
        return TestResult(np.nan, np.nan, level,
                          {"degenerate": True, "reason": "zero variance"})
    delta_sharpe = mu_a / np.sqrt(var_a) - mu_b / np.sqrt(var_b)

    u = np.column_stack([a - mu_a, b - mu_b, a ** 2 - sa, b ** 2 - sb])
    psi = u.T @ u / n
    for k in range(1, min(lag, n - 1) + 1):
        gamma = u[k:].T @ u[:-k] / n
        psi += (1.0 - k / (lag + 1.0)) * (gamma + gamma.T)

    ga_mu, ga_s = _sharpe_gradient(mu_a, sa)
    gb_mu, gb_s = _sharpe_gradient(mu_b, sb)
    grad = np.array([ga_mu, -gb_mu, ga_s, -gb_s])
    variance = float(grad @ psi @ grad) / n
    detail = {"lag": lag, "n": n, "delta_sharpe": float(delta_sharpe)}
    if variance <= 0.0:
        if abs(delta_sharpe) < 1e-12:
            return TestResult(0.0, 1.0, level, {**detail, "degenerate": True})
        return TestResult(np.nan, np.nan, level,
                          {**detail, "degenerate": True,
                           "reason": "non-positive variance estimate"})
    stat = delta_sharpe / np.sqrt(variance)
    p = 2.0 * stats.norm.sf(abs(stat))
    return TestResult(float(stat), float(p), level, detail)


def dm_table(panel: ForecastPanel, benchmark: str, target: Market,
             models: Sequence[str] | None = None, p: int = 1,
             lag: int = DM_LAG, level: float = 0.05) -> pd.DataFrame:
    """Per-qh DM statistics of every model against a benchmark.

    Positive statistics mean the benchmark's losses exceed the model's, i.e.
    the model outperforms.
    """
    models = [m for m in (models or panel.models) if m != benchmark]
    rows = []
    for model in models:
        diff = loss_differential(panel, benchmark, model, target, p)
        for qh in panel.qhs:
            d = diff[:, qh - 1]
            d = d[np.isfinite(d)]
            row = {"target": Market(target).value, "model": model,
                   "benchmark": benchmark, "qh": qh, "n": d.size,
                   "statistic": np.nan, "p_value": np.nan,
                   "significant": False}
            if d.size >= MIN_TEST_OBS:
                res = dm_statistic(d, lag)
                row.update(statistic=res.statistic, p_value=res.p_value,
                           significant=bool(res.p_value < level))
            rows.append(row)
    return pd.DataFrame(rows)
