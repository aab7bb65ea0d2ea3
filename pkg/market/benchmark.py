"""Elasticity-based load reduction (EBLR) baseline.

Each end user is paid a fixed position inside an incentive band set by the
day's cheapest price and curtails a share of its demand that grows with the
incentive and with the hour's demand elasticity. There is no capacity
feedback and no load shifting.
"""

from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from core.errors import ConfigurationError, DataError
from market.env import DayInputs, EnvConfig, reward_terms, shaping
from market.household import HOURS
from market.trace import EpisodeTrace


class BenchmarkConfig(BaseModel):
    off_peak_xi: float = Field(0.5, ge=0.0, description="Elasticity for hours 1-6 and 22-24")
    mid_peak_xi: float = Field(0.3, ge=0.0, description="Elasticity for hours 7-16")
    on_peak_xi: float = Field(0.1, ge=0.0, description="Elasticity for hours 17-21")
    mu: List[float] = Field([0.3, 0.6, 0.9], description="Each end user's position in the incentive band")
    omega: float = Field(0.1, description="Carried for completeness; not used by the response model")
    k_max_fraction: float = Field(0.3, ge=0.0, le=1.0, description="Largest reduction as a share of demand")
    lambda_min_fraction: float = Field(0.3, gt=0.0, description="Band floor as a fraction of the day's lowest price")
    lambda_max_fraction: float = Field(1.0, gt=0.0, description="Band ceiling as a fraction of the day's lowest price")
    denominator: Literal["lambda_min", "band"] = Field(
        "lambda_min", description="Normalise the incentive excess by the floor or by the band width"
    )


def elasticity_schedule(config: Optional[BenchmarkConfig] = None) -> np.ndarray:
    """Elasticity for each hour of the day, indexed 0..23."""
    config = config or BenchmarkConfig()
    xi = np.full(HOURS, config.off_peak_xi)
    xi[6:16] = config.mid_peak_xi  # hours 7-16
    xi[16:21] = config.on_peak_xi  # hours 17-21
    return xi


def eblr_reduction(
    energy: float,
    xi: float,
    lam: float,
    lam_min: float,
    k_max_fraction: float = 0.3,
    lam_max: Optional[float] = None,
    denominator: str = "lambda_min",
) -> float:
    if lam_min <= 0:
        raise ValueError(f"lambda_min must be positive, got {lam_min}")
    if lam < lam_min:
        raise ValueError(f"Incentive {lam} is below the band floor {lam_min}")
    if denominator == "band":
        if lam_max is None or lam_max <= lam_min:
            raise ValueError("The band denominator needs lambda_max > lambda_min")
        scale = lam_max - lam_min
    else:
        scale = lam_min
    raw = energy * xi * (lam - lam_min) / scale
    return float(np.clip(raw, 0.0, k_max_fraction * energy))


@dataclass
class EblrDay:
    trace: EpisodeTrace
    loads: np.ndarray  # (24, N) after reduction
    reductions: np.ndarray  # (24, N)

    @property
    def aggregate(self) -> np.ndarray:
        return self.loads.sum(axis=1)


def eblr_run_day(
    day: DayInputs,
    household_ids: Sequence[str],
    config: Optional[BenchmarkConfig] = None,
    capacity: Optional[float] = None,
    env_config: Optional[EnvConfig] = None,
) -> EblrDay:
    """Apply the elasticity response to one day.

    The trace uses the environment's reward and shaping definitions so both
    policies can be scored the same way; ``capacity`` only feeds the required
    reduction column.
    """
    config = config or BenchmarkConfig()
    env_config = env_config or EnvConfig()
    demand = day.demand
    n_eu = demand.shape[1]
    if len(config.mu) < n_eu:
        raise ConfigurationError(f"{n_eu} end users but only {len(config.mu)} mu values")
    p_min = float(day.price.min())
    if p_min <= 0:
        raise DataError("EBLR needs a strictly positive minimum price")
    lam_min = config.lambda_min_fraction * p_min
    lam_max = config.lambda_max_fraction * p_min
    rates = np.array([lam_min + mu * (lam_max - lam_min) for mu in config.mu[:n_eu]])
    xi = elasticity_schedule(config)

    reductions = np.zeros_like(demand)
    for h in range(HOURS):
        for n in range(n_eu):
            reductions[h, n] = eblr_reduction(
                demand[h, n], xi[h], rates[n], lam_min, config.k_max_fraction, lam_max, config.denominator
            )
    after = demand - reductions

    trace = EpisodeTrace(household_ids, "eblr")
    forecast = day.forecast_aggregate
    for h in range(HOURS):
        required = max(0.0, forecast[h] - capacity) if capacity is not None else 0.0
        achieved = float(reductions[h].sum())
        zeros = np.zeros(n_eu)
        phi = shaping(required, achieved, rates, env_config)
        sp, eu = reward_terms(day.price[h], rates, reductions[h], zeros, env_config.rho)
        trace.record(
            h + 1,
            float(day.price[h]),
            rates,
            reductions[h],
            zeros,
            eu_preferred=demand[h],
            eu_after=after[h],
            load_preferred=demand[h].sum(),
            load_before=demand[h].sum(),
            load_after=after[h].sum(),
            required=required,
            achieved=achieved,
            r_miss=max(0.0, required - achieved),
            r_over=max(0.0, achieved - required),
            phi=phi,
            reward=sp + eu + phi,
        )
    return EblrDay(trace, after, reductions)
