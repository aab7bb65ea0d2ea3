"""Hour-by-hour record of one simulated day.

The same table is produced by the learned policy's episodes and by the
elasticity benchmark, so metrics can be computed from either. Hours are
1-based in the table.
"""

from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from core.errors import DataError

BASE_COLUMNS = [
    "hour",
    "price",
    "load_preferred",
    "load_before",
    "load_after",
    "required",
    "achieved",
    "r_miss",
    "r_over",
    "phi",
    "reward",
]
PER_EU_FIELDS = ("lambda", "delta_e", "dis_cost", "load_preferred", "load_after")


def eu_columns(household_ids: Sequence[str]) -> List[str]:
    return [f"{name}_{hid}" for name in PER_EU_FIELDS for hid in household_ids]


class EpisodeTrace:
    def __init__(self, household_ids: Sequence[str], label: str = ""):
        self.household_ids = tuple(str(h) for h in household_ids)
        self.label = label
        self.rows: List[Dict[str, float]] = []

    @property
    def columns(self) -> List[str]:
        return BASE_COLUMNS[:2] + eu_columns(self.household_ids) + BASE_COLUMNS[2:]

    def record(
        self, hour: int, price: float, rates, delta_e, dis_cost, eu_preferred=None, eu_after=None, **values
    ):
        """Append one hour; raise DataError when any trace column is left unfilled."""
        row = {"hour": hour, "price": price}
        per_eu = {
            "lambda": rates,
            "delta_e": delta_e,
            "dis_cost": dis_cost,
            "load_preferred": eu_preferred,
            "load_after": eu_after,
        }
        for field, vals in per_eu.items():
            if vals is None:
                continue
            for hid, v in zip(self.household_ids, vals):
                row[f"{field}_{hid}"] = float(v)
        row.update({k: float(v) for k, v in values.items()})
        missing = [c for c in self.columns if c not in row]
        if missing:
            raise DataError(f"Trace row for hour {hour} lacks {missing}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=self.columns)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        # repr-precision floats so metrics recomputed from the file match memory
        self.to_frame().to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
        return path

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, label: str = "") -> "EpisodeTrace":
        ids = [c[len("lambda_"):] for c in frame.columns if c.startswith("lambda_")]
        trace = cls(ids, label)
        validate_trace_frame(frame, ids)
        trace.rows = frame[trace.columns].to_dict("records")
        return trace

    @classmethod
    def from_csv(cls, path, label: str = "") -> "EpisodeTrace":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"Trace file not found: {path}")
        return cls.from_frame(pd.read_csv(path, encoding="utf-8"), label)

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows], dtype=np.float64)

    def per_eu(self, field: str) -> np.ndarray:
        """(hours, n_eu) matrix of one per-EU field."""
        return np.column_stack([self.column(f"{field}_{hid}") for hid in self.household_ids])


def validate_trace_frame(frame: pd.DataFrame, household_ids: Sequence[str]):
    """Raise DataError unless the frame is a complete day trace."""
    if not household_ids:
        raise DataError("Trace has no per-household columns")
    expected = BASE_COLUMNS + eu_columns(household_ids)
    missing = [c for c in expected if c not in frame.columns]
    if missing:
        raise DataError(f"Incomplete trace: missing columns {missing}")
    if frame.empty:
        raise DataError("Incomplete trace: no rows")
    values = frame[expected].to_numpy(dtype=np.float64)
    if not np.isfinite(values).all():
        raise DataError("Incomplete trace: non-finite values")
    hours = frame["hour"].to_numpy()
    if not np.array_equal(hours, np.arange(hours[0], hours[0] + len(hours))):
        raise DataError("Incomplete trace: hours are not contiguous")
