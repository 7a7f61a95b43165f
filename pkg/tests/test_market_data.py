import datetime as dt
from zoneinfo import ZoneInfo

import numpy as np
import pytest

from qhspot import market_data as md
from qhspot.errors import (DataError, IntegrityError, ParseError, SchemaError)

TZ = ZoneInfo("Europe/Berlin")

# Europe/Berlin DST transitions in 2017.
SPRING_DAY = dt.date(2017, 3, 26)   # 23 wall-clock hours
FALL_DAY = dt.date(2017, 10, 29)    # 25 wall-clock hours
NORMAL_DAY = dt.date(2017, 1, 5)


def utc_walk(day: dt.date, steps: int, minutes: int = 15):
    """Consecutive real instants starting at local midnight of ``day``."""
    t = dt.datetime.combine(day, dt.time()).replace(tzinfo=TZ, fold=0)
    t = t.astimezone(dt.timezone.utc)
    return [(t + dt.timedelta(minutes=minutes * i)).astimezone(TZ)
            for i in range(steps)]


def write_long(path, rows, header="timestamp,series,value"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def long_rows(stamps, name, values):
    return [f"{t.isoformat()},{name},{v}" for t, v in zip(stamps, values)]


class TestIngestLong:
    def test_complete_day(self, tmp_path):
        stamps = utc_walk(NORMAL_DAY, 96)
        values = np.arange(96.0)
        path = write_long(tmp_path / "a.csv",
                          long_rows(stamps, "EPEX_QH_AUCTION", values))
        series = md.ingest_csv(path, "long")
        assert series.values.shape == (1, 96)
        assert not series.gap_mask.any()
        np.testing.assert_array_equal(series.values[0], values)

    def test_fall_back_day_averages_duplicated_hour(self, tmp_path):
        stamps = utc_walk(FALL_DAY, 100)
        values = np.arange(100.0)
        path = write_long(tmp_path / "a.csv",
                          long_rows(stamps, "EPEX_QH_AUCTION", values))
        series = md.ingest_csv(path, "long")
        assert series.values.shape == (1, 96)
        # Wall 02:00..02:45 (slots 8..11) appears twice: raw rows 8..11
        # (CEST) and 12..15 (CET); each slot stores the pair mean.
        np.testing.assert_allclose(series.values[0, 8:12],
                                   (values[8:12] + values[12:16]) / 2)
        assert series.gap_mask[0, 8:12].all()
        assert not series.gap_mask[0, :8].any()
        assert not series.gap_mask[0, 12:].any()
        # The rest of the day shifts by one hour of raw rows.
        np.testing.assert_array_equal(series.values[0, 12:], values[16:])

    def test_spring_forward_day_marks_gap(self, tmp_path):
        stamps = utc_walk(SPRING_DAY, 92)
        path = write_long(tmp_path / "a.csv",
                          long_rows(stamps, "EPEX_QH_AUCTION", range(92)))
        series = md.ingest_csv(path, "long")
        assert series.values.shape == (1, 96)
        # Wall 02:00..02:45 does not exist; slots 8..11 are gaps.
        assert series.gap_mask[0, 8:12].all()
        assert np.isnan(series.values[0, 8:12]).all()
        assert not series.gap_mask[0, :8].any()
        assert not series.gap_mask[0, 12:].any()

    def test_day_is_96_slots_on_all_days(self, tmp_path):
        for day, steps in [(SPRING_DAY, 92), (FALL_DAY, 100),
                           (NORMAL_DAY, 96)]:
            stamps = utc_walk(day, steps)
            path = write_long(tmp_path / "d.csv",
                              long_rows(stamps, "EXAA_QH", range(steps)))
            series = md.ingest_csv(path, "long")
            assert series.values.shape == (1, 96)

    def test_malformed_timestamp_reports_line(self, tmp_path):
        stamps = utc_walk(NORMAL_DAY, 3)
        rows = long_rows(stamps, "EXAA_QH", [1, 2, 3])
        rows[1] = "not-a-time,EXAA_QH,2"
        path = write_long(tmp_path / "a.csv", rows)
        with pytest.raises(ParseError, match="line 3"):
            md.ingest_csv(path, "long")

    def test_naive_timestamp_rejected(self, tmp_path):
        path = write_long(tmp_path / "a.csv",
                          ["2017-01-05T00:00:00,EXAA_QH,1.0"])
        with pytest.raises(ParseError, match="offset"):
            md.ingest_csv(path, "long")

    def test_duplicate_non_dst_slot_rejected(self, tmp_path):
        stamps = utc_walk(NORMAL_DAY, 4)
        rows = long_rows(stamps + [stamps[2]], "EXAA_QH", [1, 2, 3, 4, 99])
        path = write_long(tmp_path / "a.csv", rows)
        with pytest.raises(IntegrityError, match="duplicate"):
            md.ingest_csv(path, "long")

    def test_malformed_value_reports_line(self, tmp_path):
        stamps = utc_walk(NORMAL_DAY, 2)
        rows = long_rows(stamps, "EXAA_QH", [1, "oops"])
        path = write_long(tmp_path / "a.csv", rows)
        with pytest.raises(ParseError, match="line 3"):
            md.ingest_csv(path, "long")

    def test_mixed_series_rejected(self, tmp_path):
        stamps = utc_walk(NORMAL_DAY, 2)
        rows = [f"{stamps[0].isoformat()},EXAA_QH,1.0",
                f"{stamps[1].isoformat()},EPEX_QH_AUCTION,2.0"]
        path = write_long(tmp_path / "a.csv", rows)
        with pytest.raises(SchemaError, match="mixed series"):
            md.ingest_csv(path, "long")

    def test_expected_series_mismatch(self, tmp_path):
        stamps = utc_walk(NORMAL_DAY, 2)
        path = write_long(tmp_path / "a.csv",
                          long_rows(stamps, "EXAA_QH", [1, 2]))
        with pytest.raises(SchemaError, match="expected"):
            md.ingest_csv(path, "long",
                          expected=md.SeriesId.of("EPEX_QH_AUCTION"))

    def test_hourly_series_gridded_to_24(self, tmp_path):
        stamps = utc_walk(NORMAL_DAY, 24, minutes=60)
        path = write_long(tmp_path / "a.csv",
                          long_rows(stamps, "EPEX_DA_H", range(24)))
        series = md.ingest_csv(path, "long")
        assert series.values.shape == (1, 24)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="no such file"):
            md.ingest_csv(tmp_path / "nope.csv", "long")


class TestUnits:
    def test_unit_mismatch_is_schema_error(self):
        with pytest.raises(SchemaError, match="EUR_PER_MWH"):
            md.SeriesId(md.Market.EXAA_QH, md.Unit.MW)

    def test_canonical_units(self):
        assert md.SeriesId.of("LOAD_FCST").unit is md.Unit.MW
        assert md.SeriesId.of("REBAP").unit is md.Unit.EUR_PER_MWH


class TestIngestWide:
    def test_basic(self, tmp_path):
        rows = ["date,qh,EPEX_QH_AUCTION"]
        rows += [f"2017-01-05,{q},{float(q)}" for q in range(1, 97)]
        path = tmp_path / "w.csv"
        path.write_text("\n".join(rows) + "\n")
        series = md.ingest_csv(path, "wide")
        assert series.values.shape == (1, 96)
        np.testing.assert_array_equal(series.values[0], np.arange(1.0, 97.0))

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text("date,qh,EXAA_QH\n2017-01-05,1,1.0\n2017-01-05,1,2.0\n")
        with pytest.raises(IntegrityError):
            md.ingest_csv(path, "wide")

    def test_qh_out_of_range(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text("date,qh,EXAA_QH\n2017-01-05,97,1.0\n")
        with pytest.raises(ParseError, match="outside 1..96"):
            md.ingest_csv(path, "wide")

    def test_multi_column_needs_expected(self, tmp_path):
        path = tmp_path / "w.csv"
        path.write_text("date,qh,EXAA_QH,EPEX_QH_AUCTION\n"
                        "2017-01-05,1,1.0,2.0\n")
        with pytest.raises(SchemaError, match="several series"):
            md.ingest_csv(path, "wide")
        series = md.ingest_csv(path, "wide",
                               expected=md.SeriesId.of("EPEX_QH_AUCTION"))
        assert series.values[0, 0] == 2.0


class TestBroadcast:
    def _hourly(self, values, market=md.Market.EPEX_DA_H):
        values = np.asarray(values, dtype=float).reshape(1, -1)
        return md.QhSeries(md.SeriesId.of(market), NORMAL_DAY, values,
                           np.zeros_like(values, dtype=bool))

    def test_single_hour_copied(self):
        series = self._hourly([42.0] + [0.0] * 23)
        out = md.broadcast_hourly(series)
        np.testing.assert_array_equal(out.values[0, :4], [42.0] * 4)

    def test_four_periodic(self):
        series = self._hourly(np.arange(24.0))
        out = md.broadcast_hourly(series)
        assert out.values.shape == (1, 96)
        grouped = out.values[0].reshape(24, 4)
        assert (grouped == grouped[:, :1]).all()
        assert len(np.unique(grouped[:, 0])) == 24

    def test_empty_day_errors(self):
        values = np.zeros((0, 24))
        series = md.QhSeries(md.SeriesId.of("EPEX_DA_H"), NORMAL_DAY, values,
                             np.zeros_like(values, dtype=bool))
        with pytest.raises(DataError, match="no hourly values"):
            md.broadcast_hourly(series)

    def test_idempotent_with_warning(self):
        series = md.broadcast_hourly(self._hourly(np.arange(24.0)))
        with pytest.warns(UserWarning, match="no-op"):
            again = md.broadcast_hourly(series)
        np.testing.assert_array_equal(again.values, series.values)


class TestImpute:
    def _series(self, values, mask=None):
        values = np.asarray(values, dtype=float).reshape(1, -1)
        padded = np.full((1, 96), 50.0)
        padded[0, :values.shape[1]] = values[0]
        gap = np.isnan(padded)
        return md.QhSeries(md.SeriesId.of("EXAA_QH"), NORMAL_DAY, padded, gap)

    def test_interior_linear(self):
        out = md.impute_gaps(self._series([10.0, np.nan, 14.0]))
        assert out.values[0, 1] == 12.0
        assert out.gap_mask[0, 1]

    def test_leading_gap_nearest(self):
        values = np.full((1, 96), np.nan)
        values[0, 1], values[0, 2] = 5.0, 6.0
        series = md.QhSeries(md.SeriesId.of("EXAA_QH"), NORMAL_DAY, values,
                             np.isnan(values))
        out = md.impute_gaps(series)
        assert out.values[0, 0] == 5.0
        # trailing gaps take the last observed value
        assert (out.values[0, 3:] == 6.0).all()

    def test_run_of_three_gaps(self):
        # hand interpolation: [0, ?, ?, ?, 8] -> [0, 2, 4, 6, 8]
        out = md.impute_gaps(self._series([0.0, np.nan, np.nan, np.nan, 8.0]))
        np.testing.assert_allclose(out.values[0, :5], [0.0, 2.0, 4.0, 6.0, 8.0])

    def test_all_gaps_error(self):
        values = np.full((1, 96), np.nan)
        series = md.QhSeries(md.SeriesId.of("EXAA_QH"), NORMAL_DAY, values,
                             np.isnan(values))
        with pytest.raises(DataError, match="all slots"):
            md.impute_gaps(series)

    def test_changes_only_masked_slots(self):
        series = self._series([10.0, np.nan, 14.0])
        out = md.impute_gaps(series)
        untouched = ~series.gap_mask
        np.testing.assert_array_equal(out.values[untouched],
                                      series.values[untouched])
        np.testing.assert_array_equal(out.gap_mask, series.gap_mask)


def _days_series(market, start, n_days, fill=1.0):
    values = np.full((n_days, 96), float(fill))
    return md.QhSeries(md.SeriesId.of(market), start, values,
                       np.zeros_like(values, dtype=bool))


class TestAssemble:
    def test_identical_ranges(self):
        a = _days_series("EXAA_QH", dt.date(2017, 1, 1), 10)
        b = _days_series("EPEX_QH_AUCTION", dt.date(2017, 1, 1), 10)
        ds = md.assemble([a, b])
        assert ds.date_range == (dt.date(2017, 1, 1), dt.date(2017, 1, 10))

    def test_intersection(self):
        a = _days_series("EXAA_QH", dt.date(2017, 1, 1), 31)
        b = _days_series("EPEX_QH_AUCTION", dt.date(2017, 1, 10), 32)
        ds = md.assemble([a, b])
        assert ds.date_range == (dt.date(2017, 1, 10), dt.date(2017, 1, 31))

    def test_disjoint_ranges(self):
        a = _days_series("EXAA_QH", dt.date(2017, 1, 1), 10)
        b = _days_series("EPEX_QH_AUCTION", dt.date(2017, 3, 1), 10)
        with pytest.raises(DataError, match="empty date intersection"):
            md.assemble([a, b])

    def test_too_short_intersection(self):
        a = _days_series("EXAA_QH", dt.date(2017, 1, 1), 5)
        with pytest.raises(DataError, match="at least 8"):
            md.assemble([a])

    def test_duplicate_series(self):
        a = _days_series("EXAA_QH", dt.date(2017, 1, 1), 10)
        with pytest.raises(IntegrityError, match="duplicate series"):
            md.assemble([a, a])

    def test_unimputed_gaps_rejected(self):
        values = np.full((10, 96), 3.0)
        values[2, 5] = np.nan
        s = md.QhSeries(md.SeriesId.of("EXAA_QH"), dt.date(2017, 1, 1),
                        values, np.isnan(values))
        with pytest.raises(DataError, match="impute_gaps"):
            md.assemble([s])


class TestRoundTrip:
    def test_gap_free_roundtrip_bit_for_bit(self, tmp_path):
        rng = np.random.default_rng(5)
        values = rng.normal(37.2, 13.9, (7, 96))
        series = md.QhSeries(md.SeriesId.of("EPEX_QH_AUCTION"),
                             dt.date(2017, 5, 1), values,
                             np.zeros_like(values, dtype=bool))
        path = tmp_path / "rt.csv"
        md.export_long_csv(series, path)
        back = md.ingest_csv(path, "long")
        assert back.start_date == series.start_date
        np.testing.assert_array_equal(back.values, series.values)
        assert not back.gap_mask.any()

    def test_hourly_roundtrip_through_broadcast(self, tmp_path):
        rng = np.random.default_rng(6)
        hourly = rng.normal(30.0, 5.0, (3, 24))
        series = md.QhSeries(md.SeriesId.of("EPEX_DA_H"), dt.date(2017, 5, 1),
                             hourly, np.zeros_like(hourly, dtype=bool))
        wide = md.broadcast_hourly(series)
        path = tmp_path / "h.csv"
        md.export_long_csv(wide, path)
        back = md.broadcast_hourly(md.ingest_csv(path, "long"))
        np.testing.assert_array_equal(back.values, wide.values)

    def test_dataset_manifest(self, tmp_path):
        a = _days_series("EXAA_QH", dt.date(2017, 1, 1), 10, fill=20.0)
        ds = md.assemble([a])
        manifest = md.export_dataset(ds, tmp_path / "ds")
        assert manifest["series"]["EXAA_QH"]["unit"] == "EUR_PER_MWH"
        reloaded = md.load_dataset(tmp_path / "ds")
        np.testing.assert_array_equal(reloaded.values("EXAA_QH"),
                                      ds.values("EXAA_QH"))

    def test_imputation_log_classifies_dst(self, tmp_path):
        stamps = utc_walk(SPRING_DAY, 92) + utc_walk(
            SPRING_DAY + dt.timedelta(days=1), 96)
        path = write_long(tmp_path / "a.csv",
                          long_rows(stamps, "EXAA_QH", range(188)))
        series = md.ingest_csv(path, "long")
        log = md.gap_log(series)
        assert {e["reason"] for e in log} == {"dst_spring_forward"}
        assert len(log) == 4
