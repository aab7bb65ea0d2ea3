"""Load-shape statistics and the provider / end-user financial ledger."""

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from core.errors import DataError
from market.trace import EpisodeTrace, validate_trace_frame


@dataclass(frozen=True)
class LoadStats:
    peak: float
    mean: float
    par: float

    @classmethod
    def from_values(cls, peak: float, mean: float) -> "LoadStats":
        if mean <= 0:
            raise DataError(f"Mean load must be positive, got {mean}")
        return cls(float(peak), float(mean), float(peak) / float(mean))

    def as_dict(self) -> Dict[str, float]:
        return {"peak": self.peak, "mean": self.mean, "par": self.par}


def load_stats(loads) -> LoadStats:
    loads = np.asarray(loads, dtype=np.float64)
    if loads.ndim != 1 or loads.size == 0:
        raise DataError(f"Expected a 1-D load profile, got shape {loads.shape}")
    if (loads < 0).any():
        raise DataError("Load profile has negative values")
    return LoadStats.from_values(loads.max(), loads.mean())


def par_improvement(base: LoadStats, treated: LoadStats) -> float:
    """Percent PAR reduction; negative when ``treated`` is worse."""
    if base.par <= 0:
        raise DataError("Base PAR must be positive")
    return 100.0 * (base.par - treated.par) / base.par


def daily_mean_stats(days: Iterable[Union[LoadStats, Sequence[float]]]) -> LoadStats:
    """Average of per-day peak, mean and PAR."""
    stats = [d if isinstance(d, LoadStats) else load_stats(d) for d in days]
    if not stats:
        raise DataError("No days to average")
    return LoadStats(
        float(np.mean([s.peak for s in stats])),
        float(np.mean([s.mean for s in stats])),
        float(np.mean([s.par for s in stats])),
    )


@dataclass(frozen=True)
class EuLedger:
    eu_id: str
    reduction: float  # kWh
    income: float  # cents, unweighted
    discomfort: float  # cents
    profit: float  # rho * income - (1 - rho) * discomfort


@dataclass
class FinancialLedger:
    rho: float
    eus: List[EuLedger] = field(default_factory=list)
    sp_gross: float = 0.0
    sp_cost: float = 0.0
    sp_profit: float = 0.0

    @property
    def eu_profit_total(self) -> float:
        return float(sum(e.profit for e in self.eus))

    def rows(self) -> Dict[str, float]:
        out = {}
        for e in self.eus:
            out[f"eu{e.eu_id}_reduction"] = e.reduction
            out[f"eu{e.eu_id}_income"] = e.income
            out[f"eu{e.eu_id}_discomfort"] = e.discomfort
            out[f"eu{e.eu_id}_profit"] = e.profit
        out["eu_profit_total"] = self.eu_profit_total
        out["sp_gross"] = self.sp_gross
        out["sp_cost"] = self.sp_cost
        out["sp_profit"] = self.sp_profit
        return out


def ledger(trace: Union[EpisodeTrace, pd.DataFrame], rho: float) -> FinancialLedger:
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if isinstance(trace, pd.DataFrame):
        trace = EpisodeTrace.from_frame(trace)
    validate_trace_frame(trace.to_frame(), trace.household_ids)
    price = trace.column("price")
    rates = trace.per_eu("lambda")
    delta = trace.per_eu("delta_e")
    discomfort = trace.per_eu("dis_cost")
    payments = rates * delta

    eus = []
    for n, hid in enumerate(trace.household_ids):
        income = float(payments[:, n].sum())
        dis = float(discomfort[:, n].sum())
        eus.append(EuLedger(hid, float(delta[:, n].sum()), income, dis, rho * income - (1.0 - rho) * dis))
    gross = float(np.sum(price[:, None] * delta))
    cost = float(payments.sum())
    return FinancialLedger(rho, eus, gross, cost, gross - cost)


def ledger_table(ledgers: Sequence[FinancialLedger]) -> pd.DataFrame:
    """One row per ledger entry, one column per rho."""
    frame = pd.DataFrame({f"{l.rho:g}": l.rows() for l in ledgers})
    frame.index.name = "entry"
    return frame.reset_index()


def sweep_series(ledgers: Sequence[FinancialLedger]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"rho": l.rho, "sp_profit": l.sp_profit, "sp_cost": l.sp_cost, "eu_profit_total": l.eu_profit_total}
            for l in ledgers
        ]
    )


def rho_sweep(rhos: Sequence[float], run: Callable[[float], EpisodeTrace]) -> List[FinancialLedger]:
    """Ledger of the trace ``run(rho)`` produces, for each rho."""
    bad = [r for r in rhos if not 0.0 <= r <= 1.0]
    if bad:
        raise ValueError(f"rho values outside [0, 1]: {bad}")
    return [ledger(run(rho), rho) for rho in rhos]


def stats_table(stats: Mapping[str, LoadStats]) -> pd.DataFrame:
    """Metric rows (peak, mean, par) by series columns."""
    frame = pd.DataFrame({label: s.as_dict() for label, s in stats.items()})
    frame.index.name = "metric"
    return frame.reset_index()


def comparison_frame(profiles: Mapping[str, Sequence[float]], baseline: str = "no_dr") -> pd.DataFrame:
    """Peak, mean, PAR and PAR improvement over ``baseline`` for each series."""
    stats = {label: load_stats(p) for label, p in profiles.items()}
    if baseline not in stats:
        raise DataError(f"Baseline series {baseline!r} missing from {list(stats)}")
    base = stats[baseline]
    return pd.DataFrame(
        [
            {"series": label, **s.as_dict(), "par_improvement": par_improvement(base, s)}
            for label, s in stats.items()
        ]
    )


def profiles_frame(profiles: Mapping[str, Sequence[float]]) -> pd.DataFrame:
    data = {"hour": np.arange(1, len(next(iter(profiles.values()))) + 1)}
    data.update({label: np.asarray(p, dtype=np.float64) for label, p in profiles.items()})
    return pd.DataFrame(data)
