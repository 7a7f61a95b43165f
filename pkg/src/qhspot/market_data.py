"""Ingestion and storage of market series on a daily x 96 quarter-hour grid.

All series are kept on a wall-clock (Europe/Berlin) calendar grid. Daylight
saving transitions are normalized so that every day has exactly 96 slots:
the duplicated fall-back hour is averaged per slot, the missing
spring-forward hour is marked as a gap and later filled by
:func:`impute_gaps`. Hourly-native series are first gridded to 24 slots per
day and expanded with :func:`broadcast_hourly`.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping
from zoneinfo import ZoneInfo

import numpy as np

from .errors import DataError, IntegrityError, ParseError, SchemaError

TZ = ZoneInfo("Europe/Berlin")

QH_PER_DAY = 96
HOURS_PER_DAY = 24

#: Minimum overlap accepted by :func:`assemble`; lag-7 features need a week
#: of history plus at least one usable response day.
MIN_ASSEMBLY_DAYS = 8


class Market(str, enum.Enum):
    """Identifiers for the price and fundamental series the engine knows."""

    EXAA_QH = "EXAA_QH"
    EPEX_DA_H = "EPEX_DA_H"
    EPEX_QH_AUCTION = "EPEX_QH_AUCTION"
    EPEX_QH_ID_VWAP = "EPEX_QH_ID_VWAP"
    LOAD_FCST = "LOAD_FCST"
    WIND_FCST = "WIND_FCST"
    PV_FCST = "PV_FCST"
    REBAP = "REBAP"


class Unit(str, enum.Enum):
    EUR_PER_MWH = "EUR_PER_MWH"
    MW = "MW"


#: Series that are published at hourly resolution and broadcast to QH slots.
HOURLY_NATIVE = frozenset({Market.EPEX_DA_H, Market.WIND_FCST, Market.PV_FCST})

MARKET_UNIT: Mapping[Market, Unit] = {
    Market.EXAA_QH: Unit.EUR_PER_MWH,
    Market.EPEX_DA_H: Unit.EUR_PER_MWH,
    Market.EPEX_QH_AUCTION: Unit.EUR_PER_MWH,
    Market.EPEX_QH_ID_VWAP: Unit.EUR_PER_MWH,
    Market.REBAP: Unit.EUR_PER_MWH,
    Market.LOAD_FCST: Unit.MW,
    Market.WIND_FCST: Unit.MW,
    Market.PV_FCST: Unit.MW,
}


@dataclass(frozen=True)
class SeriesId:
    """Identity of one market series: which market and in which unit."""

    market: Market
    unit: Unit

    def __post_init__(self):
        canonical = MARKET_UNIT[self.market]
        if self.unit != canonical:
            raise SchemaError(
                f"{self.market.value} is quoted in {canonical.value}, "
                f"not {self.unit.value}"
            )

    @classmethod
    def of(cls, market: Market | str) -> "SeriesId":
        market = Market(market)
        return cls(market, MARKET_UNIT[market])

    @property
    def hourly_native(self) -> bool:
        return self.market in HOURLY_NATIVE


@dataclass(frozen=True)
class QhSeries:
    """One market's values on a day-major grid.

    ``values`` has shape (n_days, 96), or (n_days, 24) for an hourly-native
    series that has not been broadcast yet. ``gap_mask`` is True wherever the
    stored value was synthesized (DST averaging, imputation) rather than read
    from input; un-imputed gaps hold NaN.
    """

    id: SeriesId
    start_date: dt.date
    values: np.ndarray
    gap_mask: np.ndarray

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        mask = np.ascontiguousarray(self.gap_mask, dtype=bool)
        if values.ndim != 2 or values.shape[1] not in (QH_PER_DAY, HOURS_PER_DAY):
            raise DataError(f"grid must be (days, 96) or (days, 24), got {values.shape}")
        if mask.shape != values.shape:
            raise DataError("gap_mask shape must match values")
        if np.isnan(values[~mask]).any():
            raise DataError("NaN value outside gap_mask")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "gap_mask", mask)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_days(self) -> int:
        return self.values.shape[0]

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=self.n_days - 1)

    def dates(self) -> Iterator[dt.date]:
        for i in range(self.n_days):
            yield self.start_date + dt.timedelta(days=i)

    def day_index(self, day: dt.date) -> int:
        idx = (day - self.start_date).days
        if not 0 <= idx < self.n_days:
            raise DataError(f"{day} outside series range "
                            f"[{self.start_date}, {self.end_date}]")
        return idx

    def slice_days(self, start: dt.date, end: dt.date) -> "QhSeries":
        """Inclusive sub-range of days as a new series."""
        i0, i1 = self.day_index(start), self.day_index(end)
        return QhSeries(self.id, start,
                        self.values[i0:i1 + 1], self.gap_mask[i0:i1 + 1])

    def with_values(self, values: np.ndarray,
                    gap_mask: np.ndarray | None = None) -> "QhSeries":
        mask = self.gap_mask if gap_mask is None else gap_mask
        return QhSeries(self.id, self.start_date, values, mask)


@dataclass(frozen=True)
class Dataset:
    """Aligned collection of series over one common inclusive date range."""

    series: Mapping[Market, QhSeries]
    date_range: tuple[dt.date, dt.date]

    def __post_init__(self):
        start, end = self.date_range
        for market, s in self.series.items():
            if s.width != QH_PER_DAY:
                raise DataError(f"{market.value} not broadcast to 96 slots")
            if (s.start_date, s.end_date) != (start, end):
                raise DataError(f"{market.value} does not cover [{start}, {end}]")
        object.__setattr__(self, "series", dict(self.series))

    def __contains__(self, market: Market) -> bool:
        return Market(market) in self.series

    def get(self, market: Market | str) -> QhSeries:
        market = Market(market)
        if market not in self.series:
            raise DataError(f"dataset has no series {market.value}")
        return self.series[market]

    def values(self, market: Market | str) -> np.ndarray:
        """(n_days, 96) read-only grid of one series."""
        return self.get(market).values

    @property
    def n_days(self) -> int:
        start, end = self.date_range
        return (end - start).days + 1

    def day_index(self, day: dt.date) -> int:
        idx = (day - self.date_range[0]).days
        if not 0 <= idx < self.n_days:
            raise DataError(f"{day} outside dataset range {self.date_range}")
        return idx

    def date_at(self, index: int) -> dt.date:
        return self.date_range[0] + dt.timedelta(days=index)

    def dates(self) -> Iterator[dt.date]:
        for i in range(self.n_days):
            yield self.date_at(i)


# ---------------------------------------------------------------------------
# Calendar helpers
# ---------------------------------------------------------------------------

def _slot_of(wall: dt.datetime, width: int) -> int:
    minutes = wall.hour * 60 + wall.minute
    step = 1440 // width
    if minutes % step or wall.second or wall.microsecond:
        raise ParseError(
            f"timestamp {wall.isoformat()} not aligned to {step}-minute grid")
    return minutes // step


def slot_time(day: dt.date, slot: int, width: int = QH_PER_DAY) -> dt.datetime:
    """Wall-clock timestamp of a grid slot (first occurrence on ambiguous days)."""
    step = 1440 // width
    naive = dt.datetime.combine(day, dt.time()) + dt.timedelta(minutes=step * slot)
    return naive.replace(tzinfo=TZ, fold=0)


def _is_ambiguous(day: dt.date, slot: int, width: int) -> bool:
    """True when the slot's wall time occurs twice (DST fall-back hour)."""
    t = slot_time(day, slot, width)
    return t.utcoffset() != t.replace(fold=1).utcoffset()


def _exists(day: dt.date, slot: int, width: int) -> bool:
    """False for wall times skipped by the spring-forward transition."""
    t = slot_time(day, slot, width)
    # Round-tripping through UTC moves nonexistent wall times forward.
    return t.astimezone(dt.timezone.utc).astimezone(TZ).replace(tzinfo=None) \
        == t.replace(tzinfo=None)


def dst_gap_reason(day: dt.date, slot: int, width: int = QH_PER_DAY) -> str:
    """Classify a masked slot for the imputation log.

    Nonexistent wall times must be checked first: PEP 495 gives skipped
    times fold-dependent offsets too, so they would look ambiguous.
    """
    if not _exists(day, slot, width):
        return "dst_spring_forward"
    if _is_ambiguous(day, slot, width):
        return "dst_fall_back_mean"
    return "missing"


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def _parse_timestamp(raw: str, line: int) -> dt.datetime:
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        stamp = dt.datetime.fromisoformat(text)
    except ValueError as exc:
        raise ParseError(f"malformed timestamp {raw!r}: {exc}", line) from None
    if stamp.tzinfo is None:
        raise ParseError(f"timestamp {raw!r} lacks a UTC offset", line)
    return stamp.astimezone(TZ)


def _grid_from_observations(
    sid: SeriesId,
    observations: list[tuple[dt.date, int, float, int]],
    width: int,
) -> QhSeries:
    """Place (day, slot, value, line) observations on the calendar grid."""
    if not observations:
        raise DataError("no observations in input")
    start = min(o[0] for o in observations)
    end = max(o[0] for o in observations)
    n_days = (end - start).days + 1
    total = np.zeros((n_days, width))
    count = np.zeros((n_days, width), dtype=np.int64)
    first_line = np.zeros((n_days, width), dtype=np.int64)

    for day, slot, value, line in observations:
        d = (day - start).days
        if count[d, slot] and not _is_ambiguous(day, slot, width):
            raise IntegrityError(
                f"duplicate observation for {day} slot {slot + 1} "
                f"(lines {first_line[d, slot]} and {line})")
        if count[d, slot] >= 2:
            raise IntegrityError(
                f"more than two observations for ambiguous {day} slot {slot + 1}")
        total[d, slot] += value
        count[d, slot] += 1
        if not first_line[d, slot]:
            first_line[d, slot] = line

    with np.errstate(invalid="ignore"):
        values = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    # Mask everything synthesized: averaged fall-back slots and missing slots.
    mask = (count != 1)
    return QhSeries(sid, start, values, mask)


def _read_long_csv(path: Path, expected: SeriesId | None) -> QhSeries:
    observations: list[tuple[dt.date, int, float, int]] = []
    name: str | None = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["timestamp", "series", "value"]:
            raise SchemaError(f"{path}: long schema needs header timestamp,series,value")
        width: int | None = None
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 columns, got {len(row)}", line)
            stamp = _parse_timestamp(row[0], line)
            if name is None:
                name = row[1].strip()
                try:
                    sid = SeriesId.of(name)
                except ValueError:
                    raise SchemaError(f"{path}: unknown series {name!r}") from None
                if expected is not None and sid != expected:
                    raise SchemaError(
                        f"{path}: holds {sid.market.value}, expected "
                        f"{expected.market.value}")
                width = HOURS_PER_DAY if sid.hourly_native else QH_PER_DAY
            elif row[1].strip() != name:
                raise SchemaError(
                    f"{path}: mixed series {name!r} and {row[1].strip()!r} "
                    f"(one series per long file)")
            try:
                value = float(row[2])
            except ValueError:
                raise ParseError(f"malformed value {row[2]!r}", line) from None
            if not math.isfinite(value):
                raise ParseError(f"non-finite value {row[2]!r}", line)
            wall = stamp.replace(tzinfo=None)
            try:
                slot = _slot_of(wall, width)
            except ParseError as exc:
                raise ParseError(str(exc), line) from None
            observations.append((wall.date(), slot, value, line))
    if name is None:
        raise DataError(f"{path}: no data rows")
    return _grid_from_observations(sid, observations, width)


def _read_wide_csv(path: Path, expected: SeriesId | None) -> QhSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["date", "qh"]:
            raise SchemaError(f"{path}: wide schema needs header date,qh,<series...>")
        columns = [h.strip() for h in header[2:]]
        if expected is not None:
            if expected.market.value not in columns:
                raise SchemaError(
                    f"{path}: no column {expected.market.value} (has {columns})")
            col = columns.index(expected.market.value)
            sid = expected
        elif len(columns) == 1:
            col = 0
            sid = SeriesId.of(columns[0])
        else:
            raise SchemaError(
                f"{path}: several series columns {columns}; pass `expected`")

        observations: list[tuple[dt.date, int, float, int]] = []
        seen: set[tuple[dt.date, int]] = set()
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(f"malformed date {row[0]!r}", line) from None
            try:
                qh = int(row[1])
            except ValueError:
                raise ParseError(f"malformed qh index {row[1]!r}", line) from None
            if not 1 <= qh <= QH_PER_DAY:
                raise ParseError(f"qh index {qh} outside 1..96", line)
            if len(row) <= 2 + col:
                raise ParseError(f"row has {len(row)} columns, "
                                 f"needs {3 + col}", line)
            cell = row[2 + col].strip()
            if not cell:
                continue
            try:
                value = float(cell)
            except ValueError:
                raise ParseError(f"malformed value {cell!r}", line) from None
            # Wide rows are already on the normalized grid: duplicates are
            # always an integrity problem (DST was resolved upstream).
            if (day, qh) in seen:
                raise IntegrityError(f"duplicate (date, qh) = ({day}, {qh})")
            seen.add((day, qh))
            observations.append((day, qh - 1, value, line))
    if not observations:
        raise DataError(f"{path}: no data rows")
    series = _grid_from_observations(sid, observations, QH_PER_DAY)
    # The grid helper masks duplicates only on ambiguous slots; for wide input
    # every slot was observed at most once, so only missing slots are masked.
    return series


def ingest_csv(path: str | Path, schema: str = "long",
               expected: SeriesId | None = None) -> QhSeries:
    """Read one series from CSV onto the daily grid.

    ``schema='long'`` expects ``timestamp,series,value`` rows with explicit
    UTC offsets; ``schema='wide'`` expects ``date,qh,<series...>``. Slots of
    the duplicated DST hour are averaged and masked; missing slots (including
    the spring-forward hour) are NaN and masked, to be filled by
    :func:`impute_gaps`.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    if schema == "long":
        return _read_long_csv(path, expected)
    if schema == "wide":
        return _read_wide_csv(path, expected)
    raise SchemaError(f"unknown schema {schema!r} (use 'long' or 'wide')")


# ---------------------------------------------------------------------------
# Grid operations
# ---------------------------------------------------------------------------

def broadcast_hourly(series: QhSeries) -> QhSeries:
    """Copy each hourly value into its four quarter-hour slots."""
    if series.width == QH_PER_DAY:
        warnings.warn(f"{series.id.market.value} is already 96 slots wide; "
                      "broadcast_hourly is a no-op", stacklevel=2)
        return series
    if series.n_days == 0 or series.values.size == 0:
        raise DataError("no hourly values to broadcast")
    values = np.repeat(series.values, 4, axis=1)
    mask = np.repeat(series.gap_mask, 4, axis=1)
    return QhSeries(series.id, series.start_date, values, mask)


def impute_gaps(series: QhSeries) -> QhSeries:
    """Fill NaN slots by linear interpolation along the flattened slot order.

    Interior gaps are interpolated between the nearest observed (or
    DST-averaged) neighbours; leading/trailing gaps take the nearest value.
    Only slots with ``gap_mask`` set can change, and the mask is preserved.
    """
    flat = series.values.reshape(-1)
    missing = np.isnan(flat)
    if not missing.any():
        return series
    if missing.all():
        raise DataError(f"{series.id.market.value}: all slots are gaps")
    idx = np.arange(flat.size)
    filled = flat.copy()
    filled[missing] = np.interp(idx[missing], idx[~missing], flat[~missing])
    return series.with_values(filled.reshape(series.values.shape))


def assemble(series_list: Iterable[QhSeries]) -> Dataset:
    """Align series onto their common date range.

    Hourly-native series still in 24-slot form are broadcast here. Gaps must
    already be imputed (NaN values are rejected with a pointer to
    :func:`impute_gaps`).
    """
    series_list = list(series_list)
    if not series_list:
        raise DataError("assemble needs at least one series")
    by_market: dict[Market, QhSeries] = {}
    for s in series_list:
        if s.width == HOURS_PER_DAY:
            s = broadcast_hourly(s)
        if s.id.market in by_market:
            raise IntegrityError(f"duplicate series {s.id.market.value}")
        if np.isnan(s.values).any():
            raise DataError(
                f"{s.id.market.value} still has unimputed gaps; "
                "run impute_gaps first")
        by_market[s.id.market] = s

    start = max(s.start_date for s in by_market.values())
    end = min(s.end_date for s in by_market.values())
    if end < start:
        raise DataError("empty date intersection")
    n_days = (end - start).days + 1
    if n_days < MIN_ASSEMBLY_DAYS:
        raise DataError(
            f"date intersection [{start}, {end}] covers {n_days} days; "
            f"at least {MIN_ASSEMBLY_DAYS} are needed for lag-7 features")
    trimmed = {m: s.slice_days(start, end) for m, s in by_market.items()}
    return Dataset(trimmed, (start, end))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def export_long_csv(series: QhSeries, path: str | Path) -> None:
    """Write observed (non-masked) slots as long CSV, full float precision.

    Hourly-native series are written at hourly granularity even when the
    stored grid is already broadcast (the quarter-hour copies are derived
    data); re-ingesting and broadcasting reproduces the grid.
    """
    path = Path(path)
    values, mask, width = series.values, series.gap_mask, series.width
    if series.id.hourly_native and width == QH_PER_DAY:
        grouped = values.reshape(series.n_days, HOURS_PER_DAY, 4)
        observed = ~mask.reshape(series.n_days, HOURS_PER_DAY, 4)
        spread = np.where(observed.all(axis=2),
                          grouped.max(axis=2) - grouped.min(axis=2), 0.0)
        if np.any(spread != 0.0):
            raise DataError(f"{series.id.market.value}: hourly-native series "
                            "is not 4-periodic; cannot export hourly rows")
        values = grouped[:, :, 0]
        mask = ~observed.all(axis=2)
        width = HOURS_PER_DAY
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "series", "value"])
        name = series.id.market.value
        for d, day in enumerate(series.dates()):
            for slot in range(width):
                if mask[d, slot]:
                    continue
                stamp = slot_time(day, slot, width)
                writer.writerow([stamp.isoformat(), name,
                                 repr(float(values[d, slot]))])


def gap_log(series: QhSeries) -> list[dict]:
    """Masked slots with their classification, for the dataset manifest."""
    entries = []
    days, slots = np.nonzero(series.gap_mask)
    for d, slot in zip(days.tolist(), slots.tolist()):
        day = series.start_date + dt.timedelta(days=d)
        entries.append({
            "date": day.isoformat(),
            "slot": slot + 1,
            "reason": dst_gap_reason(day, slot, series.width),
        })
    return entries


def export_dataset(dataset: Dataset, out_dir: str | Path) -> dict:
    """Persist one long CSV per series plus a JSON manifest; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start, end = dataset.date_range
    manifest: dict = {
        "date_range": [start.isoformat(), end.isoformat()],
        "series": {},
    }
    for market in sorted(dataset.series, key=lambda m: m.value):
        s = dataset.series[market]
        filename = f"{market.value}.csv"
        export_long_csv(s, out_dir / filename)
        manifest["series"][market.value] = {
            "unit": s.id.unit.value,
            "file": filename,
            "hourly_native": s.id.hourly_native,
            "imputed_slots": gap_log(s),
        }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(manifest_dir: str | Path) -> Dataset:
    """Rebuild a Dataset from :func:`export_dataset` output."""
    manifest_dir = Path(manifest_dir)
    with open(manifest_dir / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    series = []
    for name, info in manifest["series"].items():
        s = ingest_csv(manifest_dir / info["file"], "long",
                       expected=SeriesId.of(name))
        series.append(impute_gaps(s))
    ds = assemble(series)
    want = tuple(dt.date.fromisoformat(x) for x in manifest["date_range"])
    if ds.date_range != want:
        raise DataError(f"reloaded range {ds.date_range} != manifest {want}")
    return ds
