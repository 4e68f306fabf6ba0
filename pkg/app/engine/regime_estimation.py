"""
Regime-length estimation from a financial stress index.

A stress series (basis points, e.g. the Ted spread) is cut into alternating
normal/crisis segments by a threshold rule, and the mean segment lengths
estimate the expected holding times of the regime process.
"""

import io
import math
from dataclasses import dataclass
from datetime import date
from enum import StrEnum
from pathlib import Path
from typing import IO

import numpy as np
import pandas as pd

from app.exceptions import DataError
from app.exceptions import ValidationError
from app.logger import get_logger
from app.logger import log_function_calls
from app.utils import atomic_write_text

logger = get_logger("xva.estimation")

DAYS_PER_YEAR = 365
MISSING_MARKERS = {"", ".", "NA", "NaN", "nan"}


class Label(StrEnum):
    NORMAL = "normal"
    CRISIS = "crisis"


class RuleKind(StrEnum):
    SINGLE = "single"
    HYSTERESIS = "hysteresis"


@dataclass(frozen=True)
class StressSeries:
    values: pd.Series
    dropped_rows: int = 0

    def __post_init__(self) -> None:
        if self.values.empty:
            raise ValidationError("stress series is empty")
        if not self.values.index.is_monotonic_increasing or not self.values.index.is_unique:
            raise ValidationError("stress series dates must be strictly increasing")
        if not np.all(np.isfinite(self.values.to_numpy(dtype=float))):
            raise ValidationError("stress series values must be finite")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ThresholdRule:
    kind: RuleKind
    lower: float
    upper: float | None = None
    initial_label: Label | None = None

    def __post_init__(self) -> None:
        if self.kind == RuleKind.SINGLE:
            if not self.lower > 0:
                raise ValidationError("single threshold must be positive", {"lower": self.lower})
        elif self.upper is None or not 0 < self.lower < self.upper:
            raise ValidationError(
                "hysteresis thresholds need 0 < lower < upper",
                {"lower": self.lower, "upper": self.upper},
            )

    @classmethod
    def single(cls, lower: float) -> "ThresholdRule":
        return cls(RuleKind.SINGLE, lower)

    @classmethod
    def hysteresis(
        cls, lower: float, upper: float, initial_label: Label | None = None
    ) -> "ThresholdRule":
        return cls(RuleKind.HYSTERESIS, lower, upper, initial_label)


@dataclass(frozen=True)
class Segment:
    label: Label
    start: date
    end: date

    @property
    def days(self) -> int:
        """Inclusive calendar-day length."""
        return (self.end - self.start).days + 1


@dataclass(frozen=True)
class RegimeSegments:
    segments: tuple[Segment, ...]

    def __post_init__(self) -> None:
        for previous, current in zip(self.segments, self.segments[1:], strict=False):
            if previous.label == current.label:
                raise ValidationError("segment labels must alternate")
            if current.start <= previous.end:
                raise ValidationError("segments must not overlap")

    def __len__(self) -> int:
        return len(self.segments)

    def of(self, label: Label) -> list[Segment]:
        return [s for s in self.segments if s.label == label]


@dataclass(frozen=True)
class EstimationResult:
    count_normal: int
    count_crisis: int
    mean_normal_days: float | None
    mean_crisis_days: float | None

    @property
    def mean_normal_years(self) -> float | None:
        return None if self.mean_normal_days is None else self.mean_normal_days / DAYS_PER_YEAR

    @property
    def mean_crisis_years(self) -> float | None:
        return None if self.mean_crisis_days is None else self.mean_crisis_days / DAYS_PER_YEAR

    def as_row(self) -> dict[str, float | int | None]:
        return {
            "count_normal": self.count_normal,
            "count_crisis": self.count_crisis,
            "mean_normal_days": self.mean_normal_days,
            "mean_crisis_days": self.mean_crisis_days,
            "mean_normal_years": self.mean_normal_years,
            "mean_crisis_years": self.mean_crisis_years,
        }


def load_series(csv_source: str | Path | IO[str], scale: float = 1.0) -> StressSeries:
    """
    Read a `date,value` CSV into a date-sorted series.

    Rows with an empty (or FRED-style ".") value are dropped and counted.
    ``scale`` multiplies every value, e.g. 100 for a file quoted in percent.
    """
    try:
        raw = pd.read_csv(csv_source, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError as e:
        raise DataError("stress series file is empty") from e
    except FileNotFoundError as e:
        raise DataError(f"stress series file not found: {csv_source}") from e

    if raw.shape[1] != 2:
        raise DataError("expected exactly two columns: date,value", {"columns": list(raw.columns)})
    if [c.strip().lower() for c in raw.columns] != ["date", "value"]:
        logger.warning(f"reading columns {list(raw.columns)} as date,value")
    raw.columns = ["date", "value"]
    if raw.empty:
        raise DataError("stress series file has a header but no rows")

    # Header is line 1
    line_numbers = raw.index.to_numpy() + 2

    dates = pd.to_datetime(raw["date"].str.strip(), format="ISO8601", errors="coerce")
    bad_dates = dates.isna().to_numpy()
    if bad_dates.any():
        i = int(np.argmax(bad_dates))
        raise DataError(
            "unparseable date", {"line": int(line_numbers[i]), "value": raw["date"].iloc[i]}
        )

    text = raw["value"].str.strip()
    missing = text.isin(MISSING_MARKERS).to_numpy()
    numbers = pd.to_numeric(text.where(~text.isin(MISSING_MARKERS)), errors="coerce")
    bad_values = (numbers.isna().to_numpy() & ~missing) | ~np.isfinite(numbers.fillna(0).to_numpy())
    if bad_values.any():
        i = int(np.argmax(bad_values))
        raise DataError(
            "unparseable value", {"line": int(line_numbers[i]), "value": raw["value"].iloc[i]}
        )

    dropped = int(missing.sum())
    if dropped:
        logger.info(f"dropped {dropped} rows with missing values")

    series = pd.Series(
        numbers.to_numpy(dtype=float)[~missing] * scale,
        index=pd.DatetimeIndex(dates[~missing]),
        name="value",
    )
    if series.empty:
        raise DataError("stress series has no usable rows", {"dropped": dropped})

    if not series.index.is_monotonic_increasing:
        logger.warning("stress series rows were not in date order; sorting")
        series = series.sort_index(kind="stable")
    if not series.index.is_unique:
        duplicate = series.index[series.index.duplicated()][0]
        raise DataError("duplicate date in stress series", {"date": duplicate.date().isoformat()})

    return StressSeries(series, dropped)


def load_series_text(text: str, scale: float = 1.0) -> StressSeries:
    """load_series for CSV content already in memory."""
    return load_series(io.StringIO(text), scale)


def _labels(values: np.ndarray, rule: ThresholdRule) -> list[Label]:
    if rule.kind == RuleKind.SINGLE:
        return [Label.CRISIS if v > rule.lower else Label.NORMAL for v in values]

    assert rule.upper is not None
    if rule.initial_label is not None:
        current = rule.initial_label
    else:
        current = Label.CRISIS if values[0] > rule.upper else Label.NORMAL

    labels = []
    for v in values:
        if current == Label.NORMAL and v > rule.upper:
            current = Label.CRISIS
        elif current == Label.CRISIS and v < rule.lower:
            current = Label.NORMAL
        labels.append(current)
    return labels


@log_function_calls(logger)
def segment(series: StressSeries, rule: ThresholdRule) -> RegimeSegments:
    """Cut the series into alternating normal/crisis segments."""
    if len(series) < 2:
        raise ValidationError("segmentation needs at least two observations", {"length": len(series)})

    dates = [ts.date() for ts in series.values.index]
    labels = _labels(series.values.to_numpy(dtype=float), rule)

    segments: list[Segment] = []
    start = 0
    for i in range(1, len(labels) + 1):
        if i == len(labels) or labels[i] != labels[start]:
            segments.append(Segment(labels[start], dates[start], dates[i - 1]))
            start = i

    logger.debug(f"{rule.kind} rule produced {len(segments)} segments")
    return RegimeSegments(tuple(segments))


def crossing_count(segments: RegimeSegments) -> int:
    """Number of regime changes inside the window."""
    return max(len(segments) - 1, 0)


def estimate_means(segments: RegimeSegments) -> EstimationResult:
    """Per-label segment counts and mean lengths; absent labels give None."""
    normal = [s.days for s in segments.of(Label.NORMAL)]
    crisis = [s.days for s in segments.of(Label.CRISIS)]
    return EstimationResult(
        count_normal=len(normal),
        count_crisis=len(crisis),
        mean_normal_days=float(np.mean(normal)) if normal else None,
        mean_crisis_days=float(np.mean(crisis)) if crisis else None,
    )


def segments_frame(segments: RegimeSegments) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"label": s.label.value, "start": s.start.isoformat(), "end": s.end.isoformat(), "days": s.days}
            for s in segments.segments
        ],
        columns=["label", "start", "end", "days"],
    )


def estimates_frame(result: EstimationResult) -> pd.DataFrame:
    return pd.DataFrame([result.as_row()])


def write_segments(segments: RegimeSegments, path: str | Path) -> Path:
    return atomic_write_text(path, segments_frame(segments).to_csv(index=False))


def write_estimates(result: EstimationResult, path: str | Path) -> Path:
    return atomic_write_text(path, estimates_frame(result).to_csv(index=False, float_format="%.6f"))


def relative_error(estimate: float | None, reference: float) -> float:
    """|estimate/reference - 1|, infinite when the estimate is absent."""
    if estimate is None:
        return math.inf
    return abs(estimate / reference - 1.0)
