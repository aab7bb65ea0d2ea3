from dataclasses import dataclass
from datetime import date
from functools import lru_cache
from pathlib import Path
from typing import FrozenSet, Iterable, Optional

import numpy as np
import pandas as pd

from core.errors import DataError

DEFAULT_HOLIDAY_FILE = Path(__file__).resolve().parent.parent / "config" / "holidays_us_2018.txt"


@dataclass(frozen=True)
class CalendarFeatures:
    month_of_year: int  # 1-12
    day_of_week: int  # 1 (Monday) - 7 (Sunday)
    hour_of_day: int  # 1-24, hour 1 is 00:00-01:00
    is_holiday: int
    is_weekend: int

    def as_vector(self) -> np.ndarray:
        return np.array(
            [
                self.month_of_year,
                self.day_of_week,
                self.hour_of_day,
                self.is_holiday,
                self.is_weekend,
            ],
            dtype=np.float64,
        )


def load_holidays(path) -> FrozenSet[date]:
    """Read one ISO date per line; blank lines and '#' comments are skipped."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"Holiday file not found: {path}")
    days = set()
    with path.open("r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            try:
                days.add(date.fromisoformat(line))
            except ValueError as e:
                raise DataError(f"{path}:{line_no}: invalid holiday date {line!r}") from e
    return frozenset(days)


@lru_cache(maxsize=8)
def _cached_holidays(path: str) -> FrozenSet[date]:
    return load_holidays(path)


def default_holidays() -> FrozenSet[date]:
    return _cached_holidays(str(DEFAULT_HOLIDAY_FILE))


def calendar_features(
    timestamp, holidays: Optional[Iterable[date]] = None
) -> CalendarFeatures:
    ts = pd.Timestamp(timestamp)
    holiday_set = default_holidays() if holidays is None else holidays
    dow = ts.isoweekday()
    return CalendarFeatures(
        month_of_year=ts.month,
        day_of_week=dow,
        hour_of_day=ts.hour + 1,
        is_holiday=int(ts.date() in holiday_set),
        is_weekend=int(dow >= 6),
    )


def calendar_matrix(timestamps, holidays: Optional[Iterable[date]] = None) -> np.ndarray:
    """Calendar features for many timestamps, one row each (5 columns)."""
    holiday_set = default_holidays() if holidays is None else frozenset(holidays)
    index = pd.DatetimeIndex(timestamps)
    dow = np.asarray(index.dayofweek, dtype=np.float64) + 1.0
    is_holiday = np.array([d in holiday_set for d in index.date], dtype=np.float64)
    return np.column_stack(
        [
            np.asarray(index.month, dtype=np.float64),
            dow,
            np.asarray(index.hour, dtype=np.float64) + 1.0,
            is_holiday,
            (dow >= 6).astype(np.float64),
        ]
    )
