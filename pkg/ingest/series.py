import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from core.errors import DataError, ShapeError

logger = logging.getLogger(__name__)

HOUR = pd.Timedelta(hours=1)
MAX_MISSING_FRACTION = 0.05
MAX_CONSECUTIVE_GAPS = 3


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class HourlySeries:
    """Aligned hourly household loads (kWh per hour) and wholesale price (cents/kWh)."""

    timestamps: pd.DatetimeIndex
    loads: np.ndarray  # (T, N)
    price: np.ndarray  # (T,)
    household_ids: Tuple[str, ...]
    interpolated: Optional[np.ndarray] = None

    def __post_init__(self):
        index = pd.DatetimeIndex(self.timestamps)
        loads = _frozen(self.loads, np.float64)
        if loads.ndim == 1:
            loads = _frozen(loads.reshape(-1, 1), np.float64)
        price = _frozen(self.price, np.float64)
        n = len(index)
        if loads.shape[0] != n or price.shape != (n,):
            raise ShapeError(
                f"Series columns disagree: {n} timestamps, loads {loads.shape}, price {price.shape}"
            )
        if loads.shape[1] != len(self.household_ids):
            raise ShapeError(
                f"{loads.shape[1]} load columns but {len(self.household_ids)} household ids"
            )
        if n > 1 and not ((index[1:] - index[:-1]) == HOUR).all():
            raise DataError("Timestamps must increase by exactly one hour")
        if (loads < 0).any() or (price < 0).any():
            raise DataError("Loads and prices must be nonnegative")
        flags = np.zeros(n, dtype=bool) if self.interpolated is None else self.interpolated
        object.__setattr__(self, "timestamps", index)
        object.__setattr__(self, "loads", loads)
        object.__setattr__(self, "price", price)
        object.__setattr__(self, "household_ids", tuple(str(h) for h in self.household_ids))
        object.__setattr__(self, "interpolated", _frozen(flags, bool))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def n_households(self) -> int:
        return len(self.household_ids)

    def aggregate_load(self) -> np.ndarray:
        return self.loads.sum(axis=1)

    def targets(self) -> List[str]:
        return ["price"] + [f"load_{h}" for h in self.household_ids]

    def target_values(self, target: str) -> np.ndarray:
        if target == "price":
            return self.price
        if target == "aggregate":
            return self.aggregate_load()
        hid = target[len("load_"):] if target.startswith("load_") else target
        if hid not in self.household_ids:
            raise DataError(f"Unknown target {target!r}; expected one of {self.targets()}")
        return self.loads[:, self.household_ids.index(hid)]

    def with_target(self, target: str, values) -> "HourlySeries":
        """Copy of the series with one target column replaced."""
        values = np.asarray(values, dtype=np.float64)
        price = np.array(self.price)
        loads = np.array(self.loads)
        if target == "price":
            price[:] = values
        else:
            hid = target[len("load_"):] if target.startswith("load_") else target
            loads[:, self.household_ids.index(hid)] = values
        return HourlySeries(self.timestamps, loads, price, self.household_ids, self.interpolated)

    def slice(self, start: int, stop: int) -> "HourlySeries":
        return HourlySeries(
            self.timestamps[start:stop],
            self.loads[start:stop],
            self.price[start:stop],
            self.household_ids,
            self.interpolated[start:stop],
        )

    def index_of(self, timestamp) -> int:
        ts = pd.Timestamp(timestamp)
        if len(self) == 0:
            raise DataError("Empty series")
        offset = (ts - self.timestamps[0]) / HOUR
        if offset != int(offset):
            raise DataError(f"{ts} is not on the series' hourly grid")
        return int(offset)

    def before(self, timestamp) -> "HourlySeries":
        """Records strictly before ``timestamp``."""
        stop = int(self.timestamps.searchsorted(pd.Timestamp(timestamp)))
        return self.slice(0, stop)

    def days(self) -> List[date]:
        """Calendar dates covered by all 24 hours."""
        counts = pd.Series(1, index=self.timestamps.normalize()).groupby(level=0).sum()
        return [d.date() for d, c in counts.items() if c == 24]

    def day_slice(self, day) -> "HourlySeries":
        start = pd.Timestamp(day).normalize()
        if len(self) == 0 or start < self.timestamps[0]:
            raise DataError(f"Day {start.date()} not covered by series")
        i = self.index_of(start)
        if i + 24 > len(self):
            raise DataError(f"Day {start.date()} not fully covered by series")
        return self.slice(i, i + 24)


@dataclass(frozen=True)
class DatasetSplit:
    train: HourlySeries
    test: HourlySeries


@dataclass
class SeriesSchema:
    """Column mapping for CSV ingest."""

    timestamp: str = "timestamp"
    price: str = "price"
    load_prefix: str = "load_"
    loads: Dict[str, str] = field(default_factory=dict)  # household id -> column

    def load_columns(self, columns: Sequence[str]) -> Dict[str, str]:
        if self.loads:
            return dict(self.loads)
        return {
            c[len(self.load_prefix):]: c
            for c in columns
            if c.startswith(self.load_prefix)
        }


def _parse_numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    raw = frame[column].astype(str).str.strip()
    values = pd.to_numeric(raw, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        # header is line 1
        raise DataError(
            f"Line {row + 2}: column {column!r} has non-numeric value {raw.iloc[row]!r}"
        )
    return values.to_numpy(dtype=np.float64)


def _gap_runs(mask: np.ndarray) -> int:
    longest = run = 0
    for missing in mask:
        run = run + 1 if missing else 0
        longest = max(longest, run)
    return longest


def load_series(
    path,
    schema: Optional[SeriesSchema] = None,
    max_missing_fraction: float = MAX_MISSING_FRACTION,
    max_gap: int = MAX_CONSECUTIVE_GAPS,
) -> HourlySeries:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Data file not found: {path}")
    schema = schema or SeriesSchema()
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    load_cols = schema.load_columns(frame.columns)
    required = [schema.timestamp, schema.price, *load_cols.values()]
    missing_cols = [c for c in required if c not in frame.columns]
    if missing_cols or not load_cols:
        raise DataError(f"{path}: missing columns {missing_cols or ['load_<id>']}")
    if frame.empty:
        raise DataError(f"{path}: no data rows")

    stamps = pd.to_datetime(frame[schema.timestamp].str.strip(), errors="coerce", format="ISO8601")
    bad = stamps.isna().to_numpy()
    if bad.any():
        row = int(np.argmax(bad))
        raise DataError(
            f"Line {row + 2}: unparseable timestamp {frame[schema.timestamp].iloc[row]!r}"
        )
    index = pd.DatetimeIndex(stamps)
    if index.tz is not None:
        index = index.tz_convert("UTC").tz_localize(None)
    off_grid = (index.minute != 0) | (index.second != 0) | (index.microsecond != 0)
    if off_grid.any():
        row = int(np.argmax(off_grid))
        raise DataError(f"Line {row + 2}: timestamp {index[row]} is not on an hour boundary")

    values = pd.DataFrame(
        {col: _parse_numeric(frame, col) for col in [*load_cols.values(), schema.price]},
        index=index,
    )
    if values.index.has_duplicates:
        dup = values.index[values.index.duplicated()][0]
        raise DataError(f"{path}: duplicate timestamp {dup}")
    values = values.sort_index()

    full = pd.date_range(values.index[0], values.index[-1], freq=HOUR)
    values = values.reindex(full)
    missing = values[schema.price].isna().to_numpy()
    if missing.mean() > max_missing_fraction:
        raise DataError(
            f"{path}: {int(missing.sum())} of {len(full)} hours missing "
            f"(limit {max_missing_fraction:.0%})"
        )
    if _gap_runs(missing) > max_gap:
        raise DataError(f"{path}: more than {max_gap} consecutive hours missing")
    if missing.any():
        logger.warning("%s: interpolated %d missing hours", path, int(missing.sum()))
        values = values.interpolate(method="linear")

    ids = tuple(load_cols.keys())
    return HourlySeries(
        timestamps=full,
        loads=values[list(load_cols.values())].to_numpy(),
        price=values[schema.price].to_numpy(),
        household_ids=ids,
        interpolated=missing,
    )


def series_frame(series: HourlySeries) -> pd.DataFrame:
    data = {"timestamp": series.timestamps.strftime("%Y-%m-%dT%H:%M:%S")}
    for j, hid in enumerate(series.household_ids):
        data[f"load_{hid}"] = series.loads[:, j]
    data["price"] = series.price
    return pd.DataFrame(data)


def write_series(series: HourlySeries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series_frame(series).to_csv(path, index=False, encoding="utf-8")
    return path


def split_series(series: HourlySeries, test_start, test_end) -> DatasetSplit:
    """Train on everything before ``test_start``; test on whole days test_start..test_end."""
    first = pd.Timestamp(test_start).normalize()
    last = pd.Timestamp(test_end).normalize()
    if last < first:
        raise DataError(f"Test window ends before it starts: {first.date()}..{last.date()}")
    start = series.index_of(first) if first >= series.timestamps[0] else -1
    stop = start + int((last - first) / HOUR) + 24
    if start < 0 or stop > len(series):
        raise DataError(f"Test window {first.date()}..{last.date()} not covered by series")
    if start == 0:
        raise DataError("No training data before the test window")
    return DatasetSplit(train=series.slice(0, start), test=series.slice(start, stop))


def training_days(series: HourlySeries, history: int = 0) -> List[date]:
    """Full days whose first hour has at least ``history`` records before it."""
    return [d for d in series.days() if series.index_of(pd.Timestamp(d)) >= history]
