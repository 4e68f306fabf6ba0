"""Unit tests for regime-length estimation."""

from datetime import date

import pandas as pd
import pytest

from app.engine.regime_estimation import Label
from app.engine.regime_estimation import RegimeSegments
from app.engine.regime_estimation import Segment
from app.engine.regime_estimation import StressSeries
from app.engine.regime_estimation import ThresholdRule
from app.engine.regime_estimation import crossing_count
from app.engine.regime_estimation import estimate_means
from app.engine.regime_estimation import load_series
from app.engine.regime_estimation import load_series_text
from app.engine.regime_estimation import relative_error
from app.engine.regime_estimation import segment
from app.engine.regime_estimation import write_estimates
from app.engine.regime_estimation import write_segments
from app.exceptions import DataError
from app.exceptions import ValidationError


def _series(values: list[float], start: str = "2020-01-01") -> StressSeries:
    index = pd.date_range(start, periods=len(values), freq="D")
    return StressSeries(pd.Series(values, index=index, dtype=float))


@pytest.fixture
def calm_spike_calm() -> StressSeries:
    """100 days at 30 bp, 50 days at 100 bp, 100 days at 30 bp."""
    return _series([30.0] * 100 + [100.0] * 50 + [30.0] * 100)


def _window(path, start: str = "2006-01-01", end: str = "2011-12-31") -> StressSeries:
    full = load_series(path, scale=100)
    return StressSeries(full.values.loc[start:end])


class TestLoadSeries:
    """Test CSV ingestion."""

    def test_two_rows(self):
        """Test two well-formed rows load in order."""
        series = load_series_text("date,value\n2020-01-01,30\n2020-01-02,31.5\n")
        assert len(series) == 2
        assert series.values.iloc[1] == 31.5
        assert series.dropped_rows == 0

    def test_unsorted_rows_are_sorted(self):
        """Test out-of-order rows are sorted and a warning is logged."""
        series = load_series_text("date,value\n2020-01-03,3\n2020-01-01,1\n2020-01-02,2\n")
        assert list(series.values) == [1.0, 2.0, 3.0]

    def test_missing_values_dropped(self):
        """Test empty and '.' values are dropped and counted."""
        series = load_series_text("date,value\n2020-01-01,30\n2020-01-02,\n2020-01-03,.\n2020-01-04,32\n")
        assert len(series) == 2
        assert series.dropped_rows == 2

    def test_scale(self):
        """Test values quoted in percent become basis points."""
        series = load_series_text("date,value\n2020-01-01,0.48\n", scale=100)
        assert series.values.iloc[0] == pytest.approx(48.0)

    def test_bad_date_reports_line(self):
        """Test an unparseable date names its line."""
        with pytest.raises(DataError) as exc:
            load_series_text("date,value\n2020-01-01,1\nnot-a-date,2\n")
        assert exc.value.details["line"] == 3

    def test_bad_value_reports_line(self):
        """Test an unparseable value names its line."""
        with pytest.raises(DataError) as exc:
            load_series_text("date,value\n2020-01-01,abc\n")
        assert exc.value.details["line"] == 2

    def test_empty_file(self):
        """Test an empty file is rejected."""
        with pytest.raises(DataError):
            load_series_text("")
        with pytest.raises(DataError):
            load_series_text("date,value\n")

    def test_duplicate_dates(self):
        """Test a repeated date is rejected."""
        with pytest.raises(DataError, match="duplicate"):
            load_series_text("date,value\n2020-01-01,1\n2020-01-01,2\n")

    def test_missing_file(self, tmp_path):
        """Test a missing path raises DataError."""
        with pytest.raises(DataError):
            load_series(tmp_path / "absent.csv")


class TestThresholdRule:
    """Test rule validation."""

    @pytest.mark.parametrize("lower, upper", [(48.0, 48.0), (80.0, 48.0), (0.0, 80.0)])
    def test_bad_hysteresis(self, lower, upper):
        """Test hysteresis needs 0 < lower < upper."""
        with pytest.raises(ValidationError):
            ThresholdRule.hysteresis(lower, upper)

    def test_bad_single(self):
        """Test a single threshold must be positive."""
        with pytest.raises(ValidationError):
            ThresholdRule.single(0.0)


class TestSegment:
    """Test threshold segmentation."""

    def test_constant_below(self):
        """Test a calm series is one normal segment over the whole window."""
        series = _series([20.0] * 10)
        segments = segment(series, ThresholdRule.hysteresis(48, 80))
        assert len(segments) == 1
        only = segments.segments[0]
        assert only.label == Label.NORMAL
        assert only.days == 10
        assert crossing_count(segments) == 0

    def test_synthetic_fixture(self, calm_spike_calm):
        """Test the hand-built fixture gives 100/50/100 days."""
        segments = segment(calm_spike_calm, ThresholdRule.hysteresis(48, 80))
        assert [s.label for s in segments.segments] == [Label.NORMAL, Label.CRISIS, Label.NORMAL]
        assert [s.days for s in segments.segments] == [100, 50, 100]

        result = estimate_means(segments)
        assert (result.count_normal, result.count_crisis) == (2, 1)
        assert result.mean_normal_days == 100.0
        assert result.mean_crisis_days == 50.0
        assert result.mean_crisis_years == pytest.approx(50 / 365)

    def test_hysteresis_band_keeps_regime(self):
        """Test values between the thresholds keep the current label."""
        series = _series([30, 60, 90, 60, 50, 48, 40, 60])
        segments = segment(series, ThresholdRule.hysteresis(48, 80)).segments
        labels = [s.label for s in segments]
        days = [s.days for s in segments]
        assert labels == [Label.NORMAL, Label.CRISIS, Label.NORMAL]
        # 48 is not below 48, so the exit happens at 40
        assert days == [2, 4, 2]

    def test_boundary_ties(self):
        """Test a value equal to upper does not enter crisis."""
        series = _series([30, 80, 80, 30])
        assert len(segment(series, ThresholdRule.hysteresis(48, 80))) == 1

    def test_single_rule_strict(self):
        """Test the single rule labels crisis only above the threshold."""
        series = _series([48, 49, 48, 47])
        segments = segment(series, ThresholdRule.single(48))
        assert [s.label for s in segments.segments] == [Label.NORMAL, Label.CRISIS, Label.NORMAL]
        assert [s.days for s in segments.segments] == [1, 1, 2]

    def test_initial_label_override(self):
        """Test the starting label can be forced."""
        series = _series([60.0] * 5 + [30.0] * 5)
        default = segment(series, ThresholdRule.hysteresis(48, 80))
        forced = segment(series, ThresholdRule.hysteresis(48, 80, initial_label=Label.CRISIS))
        assert len(default) == 1
        assert [s.days for s in forced.segments] == [5, 5]

    def test_insertion_invariance(self, calm_spike_calm):
        """Test inserting non-crossing observations leaves the segments unchanged."""
        base = segment(calm_spike_calm, ThresholdRule.hysteresis(48, 80))
        values = calm_spike_calm.values.copy()
        # weekly sampling drops days but keeps every first crossing day in place
        keep = [i for i in range(len(values)) if i % 7 == 0 or i in (99, 100, 149, 150, 249)]
        sparse = segment(StressSeries(values.iloc[keep]), ThresholdRule.hysteresis(48, 80))
        assert [(s.label, s.start, s.end) for s in sparse.segments] == [
            (s.label, s.start, s.end) for s in base.segments
        ]

    def test_too_short(self):
        """Test a single observation cannot be segmented."""
        with pytest.raises(ValidationError):
            segment(_series([30.0]), ThresholdRule.single(48))

    def test_segments_alternate(self):
        """Test RegimeSegments rejects repeated labels."""
        with pytest.raises(ValidationError):
            RegimeSegments(
                (
                    Segment(Label.NORMAL, date(2020, 1, 1), date(2020, 1, 2)),
                    Segment(Label.NORMAL, date(2020, 1, 3), date(2020, 1, 4)),
                )
            )


class TestEstimates:
    """Test mean estimation and writers."""

    def test_absent_label(self):
        """Test a missing label is reported as None, not zero."""
        result = estimate_means(segment(_series([20.0] * 4), ThresholdRule.single(48)))
        assert result.count_crisis == 0
        assert result.mean_crisis_days is None
        assert result.mean_crisis_years is None
        assert relative_error(result.mean_crisis_days, 172) == float("inf")

    def test_writers(self, tmp_path, calm_spike_calm):
        """Test segment and estimate CSV layouts."""
        segments = segment(calm_spike_calm, ThresholdRule.hysteresis(48, 80))
        seg_path = write_segments(segments, tmp_path / "segments.csv")
        est_path = write_estimates(estimate_means(segments), tmp_path / "estimates.csv")

        lines = seg_path.read_text().splitlines()
        assert lines[0] == "label,start,end,days"
        assert lines[1] == "normal,2020-01-01,2020-04-09,100"
        header = est_path.read_text().splitlines()[0]
        assert header == (
            "count_normal,count_crisis,mean_normal_days,mean_crisis_days,"
            "mean_normal_years,mean_crisis_years"
        )


@pytest.mark.integration
class TestTedSpread:
    """Reproduce the regime-length tables from the 2006-2011 Ted spread."""

    def test_single_threshold(self, tedrate_csv):
        """Test a 48 bp threshold gives 5/5 segments near 179/172 days."""
        result = estimate_means(segment(_window(tedrate_csv), ThresholdRule.single(48)))
        assert (result.count_normal, result.count_crisis) == (5, 5)
        assert relative_error(result.mean_normal_days, 179) <= 0.10
        assert relative_error(result.mean_crisis_days, 172) <= 0.10

    def test_hysteresis(self, tedrate_csv):
        """Test (48, 80) hysteresis gives 2/2 segments near 507/361 days."""
        result = estimate_means(segment(_window(tedrate_csv), ThresholdRule.hysteresis(48, 80)))
        assert (result.count_normal, result.count_crisis) == (2, 2)
        assert relative_error(result.mean_normal_days, 507) <= 0.10
        assert relative_error(result.mean_crisis_days, 361) <= 0.10
        assert result.mean_normal_years == pytest.approx(1.39, abs=0.14)
        assert result.mean_crisis_years == pytest.approx(0.99, abs=0.10)
