"""Seeded synthetic market datasets with a known linear data-generating
process, for validation runs and demos.

The target price is built from the same features the design matrices expose,

    y[t, q] = b_wind * wind + b_load * load + b_pv * pv
              + b_sat * 1[Sat] + b_sun * 1[Sun] + eps,    eps ~ N(0, sigma^2),

so a run with the identity transform can recover the generator exactly and
the out-of-sample RMSE has sigma as its known floor. The EXAA series is a
noisy proxy of the noiseless signal (not of the realization), which makes
the naive pass-through RMSE equal sqrt(sigma^2 + sigma_exaa^2).
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .market_data import (QH_PER_DAY, Dataset, Market, QhSeries, SeriesId,
                          assemble, broadcast_hourly)

DEFAULT_START = dt.date(2017, 1, 2)


@dataclass(frozen=True)
class LinearDgp:
    """Coefficients and noise scales of the synthetic generator."""

    b_wind: float = -0.6
    b_load: float = 0.9
    b_pv: float = -0.4
    b_sat: float = -3.0
    b_sun: float = -5.0
    base: float = 0.0
    sigma: float = 2.0
    sigma_exaa: float = 1.0
    sigma_id: float = 3.0


def _qh_series(market: Market, start: dt.date, values: np.ndarray) -> QhSeries:
    mask = np.zeros_like(values, dtype=bool)
    return QhSeries(SeriesId.of(market), start, values, mask)


def _smooth_daily(rng, n_days, width, level, spread, day_scale=0.3):
    """Positive-ish series with a stable intraday shape and day-to-day drift."""
    shape = level + spread * np.sin(np.linspace(0, 2 * np.pi, width,
                                                endpoint=False) + rng.uniform(0, np.pi))
    day_factor = 1.0 + day_scale * np.cumsum(rng.normal(0, 0.08, n_days))
    day_factor = np.clip(day_factor, 0.3, None)
    noise = rng.normal(0, spread * 0.15, (n_days, width))
    return day_factor[:, None] * shape[None, :] + noise


def make_dataset(n_days: int = 260, seed: int = 0,
                 dgp: LinearDgp | None = None,
                 start: dt.date = DEFAULT_START,
                 include_id_target: bool = True) -> tuple[Dataset, LinearDgp]:
    """Dataset with target = linear function of fundamentals plus noise."""
    dgp = dgp or LinearDgp()
    rng = np.random.default_rng(seed)

    wind_h = _smooth_daily(rng, n_days, 24, level=11.0, spread=4.0)
    pv_h = np.zeros((n_days, 24))
    hours = np.arange(24)
    bell = np.clip(np.cos((hours - 13) / 6.5 * np.pi / 2), 0, None) ** 2
    season = 1.0 + 0.5 * np.sin(np.arange(n_days) / 58.0)
    pv_h = season[:, None] * 18.0 * bell[None, :] \
        + rng.normal(0, 0.4, (n_days, 24)) * (bell[None, :] > 0)
    pv_h = np.clip(pv_h, 0.0, None)
    load = _smooth_daily(rng, n_days, QH_PER_DAY, level=52.0, spread=7.0)
    da_h = _smooth_daily(rng, n_days, 24, level=38.0, spread=6.0)

    wind = np.repeat(wind_h, 4, axis=1)
    pv = np.repeat(pv_h, 4, axis=1)

    weekdays = np.array([(start + dt.timedelta(days=i)).isoweekday()
                         for i in range(n_days)])
    sat = (weekdays == 6).astype(float)[:, None]
    sun = (weekdays == 7).astype(float)[:, None]

    signal = (dgp.base + dgp.b_wind * wind + dgp.b_load * load
              + dgp.b_pv * pv + dgp.b_sat * sat + dgp.b_sun * sun)

    shape = (n_days, QH_PER_DAY)
    auction = signal + rng.normal(0, dgp.sigma, shape) if dgp.sigma else signal.copy()
    exaa = signal + rng.normal(0, dgp.sigma_exaa, shape) if dgp.sigma_exaa \
        else signal.copy()

    series = [
        _qh_series(Market.EPEX_QH_AUCTION, start, auction),
        _qh_series(Market.EXAA_QH, start, exaa),
        _qh_series(Market.LOAD_FCST, start, load),
        broadcast_hourly(_qh_series(Market.WIND_FCST, start, wind_h)),
        broadcast_hourly(_qh_series(Market.PV_FCST, start, pv_h)),
        broadcast_hourly(_qh_series(Market.EPEX_DA_H, start, da_h)),
    ]
    if include_id_target:
        vwap = signal + rng.normal(0, dgp.sigma_id, shape)
        series.append(_qh_series(Market.EPEX_QH_ID_VWAP, start, vwap))
    return assemble(series), dgp


def signal_grid(dataset: Dataset, dgp: LinearDgp) -> np.ndarray:
    """Noiseless conditional mean of the target, from the stored series."""
    wind = dataset.values(Market.WIND_FCST)
    load = dataset.values(Market.LOAD_FCST)
    pv = dataset.values(Market.PV_FCST)
    start, _ = dataset.date_range
    weekdays = np.array([(start + dt.timedelta(days=i)).isoweekday()
                         for i in range(dataset.n_days)])
    sat = (weekdays == 6).astype(float)[:, None]
    sun = (weekdays == 7).astype(float)[:, None]
    return (dgp.base + dgp.b_wind * wind + dgp.b_load * load + dgp.b_pv * pv
            + dgp.b_sat * sat + dgp.b_sun * sun)
