import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qhspot import transform as tr
from qhspot.errors import DataError, NumericalError
from qhspot.market_data import Market, QhSeries, SeriesId

DAY = dt.date(2017, 1, 5)


def series_of(values, market=Market.EPEX_QH_AUCTION):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        padded = np.tile(values, (1, 96 // values.size + 1))[:, :96]
    else:
        padded = values
    return QhSeries(SeriesId.of(market), DAY, padded,
                    np.zeros_like(padded, dtype=bool))


def spec_with(median, mad, market=Market.EPEX_QH_AUCTION, **kw):
    return tr.TransformSpec(SeriesId.of(market), median, mad, **kw)


class TestFitSpec:
    def test_textbook_case(self):
        values = np.array([[1.0, 2.0, 3.0, 4.0, 5.0]] * 20).reshape(1, -1)[:, :96]
        series = series_of(np.resize([1.0, 2.0, 3.0, 4.0, 5.0], 96).reshape(1, 96))
        spec = tr.fit_spec(series, (DAY, DAY))
        # np.resize tiles the 5 values: 96 = 19*5 + 1, close to balanced
        assert spec.median == 3.0
        assert spec.mad == 1.0

    def test_constant_series_rejected(self):
        series = series_of(np.full((1, 96), 7.0))
        with pytest.raises(NumericalError, match="constant series"):
            tr.fit_spec(series, (DAY, DAY))

    def test_zero_mad_from_heavy_center(self):
        # {-10, 0, 0, 0, 50}: median 0, |deviations| {10, 0, 0, 0, 50},
        # MAD = median of deviations = 0 -> rejected
        base = np.array([-10.0, 0.0, 0.0, 0.0, 50.0])
        values = np.concatenate([np.repeat(base, 19), [0.0]]).reshape(1, 96)
        series = series_of(values)
        with pytest.raises(NumericalError, match="constant series"):
            tr.fit_spec(series, (DAY, DAY))

    def test_unknown_mode(self):
        with pytest.raises(DataError, match="unknown transform mode"):
            tr.fit_spec(series_of(np.arange(96.0).reshape(1, 96)),
                        (DAY, DAY), mode="bogus")


class TestNormalize:
    def test_center_and_scale(self):
        spec = spec_with(3.0, 1.0)
        assert tr.normalize(3.0, spec) == 0.0
        assert tr.normalize(4.0, spec) == 1.0
        assert tr.normalize(5.0, spec) == 2.0


class TestMlog:
    def test_zero_maps_to_zero(self):
        assert tr.mlog(0.0) == 0.0

    def test_unit_value(self):
        # sgn(1) * [log(1 + 3) + log(1/3)] = log(4/3)
        assert math.isclose(float(tr.mlog(1.0, 1 / 3)), math.log(4 / 3),
                            rel_tol=1e-12)
        assert math.isclose(float(tr.mlog(1.0, 1 / 3)), 0.287682,
                            abs_tol=1e-6)

    def test_odd_symmetry(self):
        z = np.linspace(-40, 40, 401)
        np.testing.assert_allclose(tr.mlog(-z), -tr.mlog(z), rtol=0, atol=0)

    def test_strictly_monotone(self):
        z = np.linspace(-60, 60, 10001)
        assert (np.diff(tr.mlog(z)) > 0).all()

    def test_inverse_values(self):
        assert tr.mlog_inverse(0.0) == 0.0
        assert math.isclose(float(tr.mlog_inverse(math.log(4 / 3), 1 / 3)),
                            1.0, rel_tol=1e-12)

    @pytest.mark.parametrize("c", [1 / 3, 1.0, 2.0])
    def test_roundtrip_dense(self, c):
        rng = np.random.default_rng(1234)
        z = rng.uniform(-50, 50, 10_000)
        err = np.abs(tr.mlog_inverse(tr.mlog(z, c), c) - z)
        assert err.max() < 1e-12

    def test_needs_positive_c(self):
        with pytest.raises(NumericalError):
            tr.mlog(1.0, 0.0)
        with pytest.raises(NumericalError):
            tr.mlog_inverse(1.0, -1.0)


@settings(max_examples=200, deadline=None)
@given(z=st.floats(-1e6, 1e6, allow_nan=False),
       c=st.floats(1e-3, 10.0, allow_nan=False))
def test_mlog_properties(z, c):
    y = float(tr.mlog(z, c))
    assert math.isfinite(y)
    assert math.isclose(float(tr.mlog(-z, c)), -y, rel_tol=0, abs_tol=0)
    back = float(tr.mlog_inverse(y, c))
    assert math.isclose(back, z, rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=100, deadline=None)
@given(z1=st.floats(-1e4, 1e4), z2=st.floats(-1e4, 1e4),
       c=st.floats(0.05, 5.0))
def test_mlog_order_preserving(z1, z2, c):
    if z1 < z2:
        assert float(tr.mlog(z1, c)) < float(tr.mlog(z2, c))


class TestPipeline:
    def _series(self, seed=0):
        rng = np.random.default_rng(seed)
        return series_of(rng.normal(35.0, 15.0, (5, 96)))

    def test_roundtrip(self):
        series = self._series()
        spec = tr.fit_spec(series, (DAY, DAY + dt.timedelta(days=4)))
        back = tr.invert_pipeline(tr.apply_pipeline(series, spec), spec)
        np.testing.assert_allclose(back.values, series.values, atol=1e-10)

    def test_median_maps_to_zero(self):
        series = self._series()
        spec = tr.fit_spec(series, (DAY, DAY + dt.timedelta(days=4)))
        values = series.values.copy()
        values[0, 0] = spec.median
        pinned = series.with_values(values)
        out = tr.apply_pipeline(pinned, spec)
        assert out.values[0, 0] == 0.0

    def test_negative_price_support(self):
        series = self._series()
        spec = tr.fit_spec(series, (DAY, DAY + dt.timedelta(days=4)))
        y = tr.transform_values(-50.0, spec)
        assert np.isfinite(y) and y < 0
        assert math.isclose(float(tr.invert_values(y, spec)), -50.0,
                            rel_tol=1e-12)

    def test_spiky_series_stays_finite(self):
        rng = np.random.default_rng(3)
        values = rng.normal(30, 10, (4, 96))
        values[1, 3] = -130.0   # negative spike
        values[2, 7] = 2400.0   # extreme spike
        series = series_of(values)
        spec = tr.fit_spec(series, (DAY, DAY + dt.timedelta(days=3)))
        out = tr.apply_pipeline(series, spec)
        assert np.isfinite(out.values).all()

    def test_argmax_invariant_under_pipeline(self):
        series = self._series(7)
        spec = tr.fit_spec(series, (DAY, DAY + dt.timedelta(days=4)))
        out = tr.apply_pipeline(series, spec)
        assert np.argmax(out.values) == np.argmax(series.values)
        assert np.argmin(out.values) == np.argmin(series.values)

    def test_id_mismatch(self):
        series = self._series()
        spec = spec_with(30.0, 5.0, market=Market.EXAA_QH)
        with pytest.raises(DataError, match="spec fitted on"):
            tr.apply_pipeline(series, spec)

    def test_identity_spec(self):
        series = self._series()
        spec = tr.TransformSpec.identity(series.id)
        out = tr.apply_pipeline(series, spec)
        np.testing.assert_array_equal(out.values, series.values)

    def test_json_roundtrip(self):
        spec = spec_with(30.0, 5.0, fit_window=(DAY, DAY), mode="full_period")
        back = tr.TransformSpec.from_json_dict(spec.to_json_dict())
        assert back == spec


class TestSpecValidation:
    def test_mad_positive(self):
        with pytest.raises(NumericalError):
            spec_with(1.0, 0.0)

    def test_c_positive(self):
        with pytest.raises(NumericalError):
            spec_with(1.0, 1.0, c=0.0)
