"""Median/MAD normalization and the sign-symmetric log transform.

Prices (and fundamentals) are first centered and scaled robustly,
z = (x - median) / MAD, then passed through

    y = sgn(z) * [log(|z| + 1/c) + log(c)] = sgn(z) * log(c|z| + 1),

which is odd, strictly increasing, finite for every real z, and has the
exact inverse z = sgn(y) * (e^|y| - 1) / c. The default c = 1/3. A fitted
spec is reversible, so model output can be mapped back to EUR/MWh.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError, NumericalError
from .market_data import QhSeries, SeriesId

DEFAULT_C = 1.0 / 3.0

FIT_MODES = ("full_period", "training_only")


@dataclass(frozen=True)
class TransformSpec:
    """Normalization constants for one series, plus fit provenance.

    ``identity`` specs (median 0, MAD 1, no log step) let the pipeline run
    on the raw scale, which synthetic validation relies on.
    """

    series: SeriesId
    median: float
    mad: float
    c: float = DEFAULT_C
    fit_window: tuple[dt.date, dt.date] | None = None
    mode: str = "training_only"
    use_mlog: bool = True

    def __post_init__(self):
        if self.mad <= 0:
            raise NumericalError(f"MAD must be positive, got {self.mad}")
        if self.c <= 0:
            raise NumericalError(f"c must be positive, got {self.c}")

    @classmethod
    def identity(cls, series: SeriesId) -> "TransformSpec":
        return cls(series, median=0.0, mad=1.0, mode="none", use_mlog=False)

    def to_json_dict(self) -> dict:
        window = None
        if self.fit_window is not None:
            window = [d.isoformat() for d in self.fit_window]
        return {
            "series": self.series.market.value,
            "median": self.median,
            "mad": self.mad,
            "c": self.c,
            "fit_window": window,
            "mode": self.mode,
            "use_mlog": self.use_mlog,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @classmethod
    def from_json_dict(cls, data: dict) -> "TransformSpec":
        window = data.get("fit_window")
        if window is not None:
            window = tuple(dt.date.fromisoformat(d) for d in window)
        return cls(SeriesId.of(data["series"]), data["median"], data["mad"],
                   data.get("c", DEFAULT_C), window,
                   data.get("mode", "training_only"),
                   data.get("use_mlog", True))


def fit_spec(series: QhSeries, window: tuple[dt.date, dt.date],
             mode: str = "training_only", c: float = DEFAULT_C) -> TransformSpec:
    """Estimate median and (unscaled) MAD over all slots of the window days."""
    if mode not in FIT_MODES:
        raise DataError(f"unknown transform mode {mode!r}; use one of {FIT_MODES}")
    start, end = window
    if end < start:
        raise DataError(f"empty fit window [{start}, {end}]")
    values = series.slice_days(start, end).values
    if np.isnan(values).any():
        raise DataError(f"{series.id.market.value}: fit window contains "
                        "unimputed gaps")
    median = float(np.median(values))
    mad = float(np.median(np.abs(values - median)))
    if mad == 0.0:
        raise NumericalError(
            f"{series.id.market.value}: constant series in window "
            f"[{start}, {end}] (MAD = 0)")
    return TransformSpec(series.id, median, mad, c, (start, end), mode)


def normalize(x, spec: TransformSpec):
    """z = (x - median) / MAD, elementwise."""
    return (np.asarray(x, dtype=np.float64) - spec.median) / spec.mad


def denormalize(z, spec: TransformSpec):
    return np.asarray(z, dtype=np.float64) * spec.mad + spec.median


def mlog(z, c: float = DEFAULT_C):
    """Sign-symmetric log transform; handles negative values and mlog(0) = 0."""
    if c <= 0:
        raise NumericalError(f"c must be positive, got {c}")
    z = np.asarray(z, dtype=np.float64)
    # log(|z| + 1/c) + log(c) == log1p(c|z|), evaluated stably.
    return np.sign(z) * np.log1p(c * np.abs(z))


def mlog_inverse(y, c: float = DEFAULT_C):
    """Exact inverse of :func:`mlog`: z = sgn(y) * (e^|y| - 1) / c."""
    if c <= 0:
        raise NumericalError(f"c must be positive, got {c}")
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.expm1(np.abs(y)) / c


def transform_values(x, spec: TransformSpec):
    """Raw units -> transformed scale (normalize, then mlog unless identity)."""
    z = normalize(x, spec)
    return mlog(z, spec.c) if spec.use_mlog else z


def invert_values(y, spec: TransformSpec):
    """Transformed scale -> raw units."""
    y = np.asarray(y, dtype=np.float64)
    z = mlog_inverse(y, spec.c) if spec.use_mlog else y
    return denormalize(z, spec)


def apply_pipeline(series: QhSeries, spec: TransformSpec) -> QhSeries:
    """Transform a whole series elementwise; id must match the spec."""
    if series.id != spec.series:
        raise DataError(f"spec fitted on {spec.series.market.value}, "
                        f"series is {series.id.market.value}")
    return series.with_values(transform_values(series.values, spec))


def invert_pipeline(series: QhSeries, spec: TransformSpec) -> QhSeries:
    """Undo :func:`apply_pipeline`, restoring original units."""
    if series.id != spec.series:
        raise DataError(f"spec fitted on {spec.series.market.value}, "
                        f"series is {series.id.market.value}")
    return series.with_values(invert_values(series.values, spec))


def refit(spec: TransformSpec, series: QhSeries,
          window: tuple[dt.date, dt.date]) -> TransformSpec:
    """Same mode/c, new window; identity specs are window-independent."""
    if not spec.use_mlog and spec.mode == "none":
        return replace(spec, fit_window=window)
    return fit_spec(series, window, spec.mode, spec.c)
