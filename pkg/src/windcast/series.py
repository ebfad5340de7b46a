"""Time-series container, CSV ingestion, scaling and the five error indices."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "TimeSeries",
    "ErrorMetrics",
    "SyntheticSpec",
    "ScaleParams",
    "SeriesError",
    "load_csv",
    "write_csv",
    "split",
    "compute_metrics",
    "generate_synthetic",
    "minmax_scale",
    "inverse_scale",
    "write_metrics_csv",
    "METRIC_NAMES",
]

METRIC_NAMES = ("mae", "mape", "mre", "mse", "rmse")
DEFAULT_START = datetime(2018, 1, 1, tzinfo=timezone.utc)


class SeriesError(ValueError):
    """Raised for malformed series data or violated preconditions."""


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).ravel()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Uniformly sampled scalar series.

    Parameters
    ----------
    values : array_like
        Sample values, finite and non-empty.
    start_time : datetime
        Timestamp of the first sample.
    step : float
        Sample period in seconds.
    name : str
        Free-form label.
    """

    values: np.ndarray
    start_time: datetime = DEFAULT_START
    step: float = 600.0
    name: str = "series"

    def __post_init__(self):
        arr = _frozen(self.values)
        if arr.size == 0:
            raise SeriesError("series must be non-empty")
        if not np.all(np.isfinite(arr)):
            bad = np.flatnonzero(~np.isfinite(arr))
            raise SeriesError(f"series contains non-finite values at indices {bad[:10].tolist()}")
        if not self.step > 0:
            raise SeriesError(f"step must be positive, got {self.step}")
        object.__setattr__(self, "values", arr)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeSeries):
            return NotImplemented
        return (
            self.start_time == other.start_time
            and self.step == other.step
            and self.name == other.name
            and np.array_equal(self.values, other.values)
        )

    def timestamps(self) -> list[datetime]:
        return [self.start_time + timedelta(seconds=self.step * i) for i in range(len(self))]

    def with_values(self, values, offset: int = 0, name: str | None = None) -> "TimeSeries":
        """Same sampling grid, new values, shifted ``offset`` samples forward."""
        return TimeSeries(
            values,
            self.start_time + timedelta(seconds=self.step * offset),
            self.step,
            self.name if name is None else name,
        )


@dataclass(frozen=True)
class ErrorMetrics:
    mae: float
    mape: float
    mre: float
    mse: float
    rmse: float
    n: int

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRIC_NAMES}


@dataclass(frozen=True)
class SyntheticSpec:
    """Sum-of-sines generator settings.

    ``components`` holds ``(amplitude, frequency_cycles_per_sample, phase)`` triples.
    """

    components: tuple[tuple[float, float, float], ...] = ()
    trend_slope: float = 0.0
    noise_std: float = 0.0
    length: int = 1000
    seed: int = 0
    offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(tuple(map(float, c)) for c in self.components))
        if self.length < 2:
            raise SeriesError(f"length must be >= 2, got {self.length}")
        if self.noise_std < 0:
            raise SeriesError(f"noise_std must be >= 0, got {self.noise_std}")
        for c in self.components:
            if len(c) != 3:
                raise SeriesError(f"component must be (amplitude, frequency, phase), got {c}")


@dataclass(frozen=True)
class ScaleParams:
    """Affine map between original units and a target range ``[lo, hi]``."""

    data_min: float
    data_max: float
    lo: float = 0.0
    hi: float = 1.0

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        return self.lo + (x - self.data_min) * ((self.hi - self.lo) / (self.data_max - self.data_min))

    def inverse(self, y):
        y = np.asarray(y, dtype=np.float64)
        return self.data_min + (y - self.lo) * ((self.data_max - self.data_min) / (self.hi - self.lo))


def _parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


def load_csv(path, column: str = "wind_speed", time_column: str = "timestamp", name: str | None = None) -> TimeSeries:
    """Read a ``timestamp,<column>`` CSV into a :class:`TimeSeries`.

    Rows are numbered from 1, not counting the header. The sample period is
    taken from the first two timestamps and every later gap must agree with it
    to within 1%.
    """
    path = Path(path)
    if not path.is_file():
        raise SeriesError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SeriesError(f"{path}: empty file, expected a header row") from None
        if column not in header:
            raise SeriesError(f"{path}: missing column {column!r} (header: {header})")
        if time_column not in header:
            raise SeriesError(f"{path}: missing column {time_column!r} (header: {header})")
        ci, ti = header.index(column), header.index(time_column)
        values: list[float] = []
        stamps: list[datetime] = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                cell = row[ci]
            except IndexError:
                raise SeriesError(f"{path}: row {row_no} has too few cells") from None
            try:
                v = float(cell)
            except ValueError:
                raise SeriesError(f"{path}: non-numeric value {cell!r} in column {column!r} at row {row_no}") from None
            if math.isnan(v) or math.isinf(v):
                raise SeriesError(f"{path}: non-finite value {cell!r} at row {row_no}")
            try:
                stamps.append(_parse_timestamp(row[ti]))
            except (ValueError, IndexError):
                raise SeriesError(f"{path}: unparseable timestamp at row {row_no}") from None
            values.append(v)
    if not values:
        raise SeriesError(f"{path}: no data rows")
    if len(stamps) < 2:
        step = 600.0
    else:
        step = (stamps[1] - stamps[0]).total_seconds()
        if step <= 0:
            raise SeriesError(f"{path}: timestamps are not increasing at row 2")
        for i in range(2, len(stamps)):
            gap = (stamps[i] - stamps[i - 1]).total_seconds()
            if abs(gap - step) > 0.01 * step:
                raise SeriesError(
                    f"{path}: irregular timestamp spacing at row {i + 1} ({gap:g}s, expected {step:g}s)"
                )
    return TimeSeries(values, stamps[0], step, name or column)


def write_csv(series: TimeSeries, path, column: str = "wind_speed") -> None:
    """Write ``series`` using the ``timestamp,<column>`` schema read by :func:`load_csv`."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", column])
        for ts, v in zip(series.timestamps(), series.values):
            w.writerow([ts.isoformat(), repr(float(v))])


def split(series: TimeSeries, boundary: int) -> tuple[TimeSeries, TimeSeries]:
    n = len(series)
    if not 0 < boundary < n:
        raise SeriesError(f"split boundary must satisfy 0 < boundary < {n}, got {boundary}")
    return (
        series.with_values(series.values[:boundary]),
        series.with_values(series.values[boundary:], offset=boundary),
    )


def _values(x) -> np.ndarray:
    if isinstance(x, TimeSeries):
        return x.values
    return np.asarray(x, dtype=np.float64).ravel()


def compute_metrics(ground, forecast) -> ErrorMetrics:
    """MAE, MAPE (percent), MRE (fraction), MSE and RMSE of ``forecast`` against ``ground``.

    Zero ground-truth values make the relative indices undefined; they are
    rejected instead of being patched with an epsilon.
    """
    g, f = _values(ground), _values(forecast)
    if g.shape != f.shape:
        raise SeriesError(f"length mismatch: ground has {g.size} points, forecast has {f.size}")
    if g.size == 0:
        raise SeriesError("cannot compute metrics on empty series")
    zeros = np.flatnonzero(g == 0)
    if zeros.size:
        raise SeriesError(f"ground truth is zero at indices {zeros[:20].tolist()}; MAPE/MRE undefined")
    abs_err = np.abs(g - f)
    mse = float(np.mean(abs_err**2))
    mre = float(np.mean(abs_err / np.abs(g)))
    return ErrorMetrics(
        mae=float(np.mean(abs_err)),
        mape=mre * 100.0,
        mre=mre,
        mse=mse,
        rmse=math.sqrt(mse),
        n=int(g.size),
    )


def generate_synthetic(spec: SyntheticSpec, start_time: datetime = DEFAULT_START, step: float = 600.0) -> TimeSeries:
    t = np.arange(spec.length, dtype=np.float64)
    x = np.full(spec.length, spec.offset, dtype=np.float64)
    for amp, freq, phase in spec.components:
        x += amp * np.sin(2.0 * np.pi * freq * t + phase)
    x += spec.trend_slope * t
    if spec.noise_std > 0:
        rng = np.random.default_rng(spec.seed)
        x += rng.normal(0.0, spec.noise_std, spec.length)
    return TimeSeries(x, start_time, step, "synthetic")


def minmax_scale(series, lo: float = 0.0, hi: float = 1.0):
    """Scale to ``[lo, hi]``; returns ``(scaled, params)``.

    A :class:`TimeSeries` input gives a :class:`TimeSeries` back, anything
    else gives an ndarray.
    """
    x = _values(series)
    if x.size == 0:
        raise SeriesError("cannot scale an empty series")
    x_min, x_max = float(np.min(x)), float(np.max(x))
    if not x_max > x_min:
        raise SeriesError(f"cannot min-max scale a constant series (value {x_min})")
    params = ScaleParams(x_min, x_max, lo, hi)
    y = params.forward(x)
    if isinstance(series, TimeSeries):
        return series.with_values(y), params
    return y, params


def inverse_scale(scaled, params: ScaleParams):
    y = params.inverse(_values(scaled))
    if isinstance(scaled, TimeSeries):
        return scaled.with_values(y)
    return y


def write_metrics_csv(rows: Sequence[tuple], path, header: Sequence[str]) -> None:
    """Write metric rows; float cells use 16 significant digits."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{c:.16g}" if isinstance(c, float) else c for c in row])
