"""One simulated day as a finite-horizon decision problem.

Each hour the service provider picks one incentive level per end user. The
households respond, and the reward is the provider's margin on the reduced
energy plus the users' weighted net benefit plus a shaping term that pushes
the provider to pay only when the forecast aggregate load is above capacity.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import gymnasium as gym
import numpy as np
from gymnasium import spaces
from pydantic import BaseModel, Field

from core.errors import DataError, EpisodeError, ShapeError
from ingest.series import HourlySeries
from market.household import HOURS, Household
from market.trace import EpisodeTrace

logger = logging.getLogger(__name__)

STATE_DIM = 10
PRICE_SCALE = 10.0  # cents/kWh
CAPACITY_SCALE = 10.0  # kW


class EnvConfig(BaseModel):
    levels: int = Field(4, ge=2, description="Incentive levels per end user")
    lambda_max_fraction: float = Field(
        0.95, gt=0.0, lt=1.0, description="Highest incentive as a fraction of the hour's price"
    )
    rho: float = Field(0.9, ge=0.0, le=1.0, description="Weight of end-user income against discomfort")
    capacity_fraction: float = Field(
        0.75, gt=0.0, description="Capacity as a fraction of the mean daily aggregate peak"
    )
    capacity: Optional[float] = Field(None, gt=0.0, description="Fixed capacity in kW; overrides capacity_fraction")
    bonus: float = Field(5.0, description="Reward when nothing is required and nothing is paid")
    idle_penalty: float = Field(5.0, description="Penalty per unit of total incentive paid when nothing is required")
    miss_penalty: float = Field(15.0, description="Penalty per kW of unmet reduction")
    over_penalty: float = Field(0.5, description="Penalty per kW of reduction beyond the requirement")


@dataclass
class DayInputs:
    """Forecasts for one day plus, optionally, the households' actual demand."""

    price: np.ndarray  # (24,)
    loads: np.ndarray  # (24, N) forecast
    actual_loads: Optional[np.ndarray] = None  # (24, N)
    label: str = ""

    def __post_init__(self):
        self.price = np.asarray(self.price, dtype=np.float64)
        self.loads = np.asarray(self.loads, dtype=np.float64)
        if self.loads.ndim == 1:
            self.loads = self.loads.reshape(-1, 1)
        if self.price.shape != (HOURS,) or self.loads.shape[0] != HOURS:
            raise ShapeError(f"Day inputs need 24 hours, got price {self.price.shape} and loads {self.loads.shape}")
        if self.actual_loads is not None:
            self.actual_loads = np.asarray(self.actual_loads, dtype=np.float64).reshape(self.loads.shape)

    @property
    def demand(self) -> np.ndarray:
        return self.loads if self.actual_loads is None else self.actual_loads

    @property
    def forecast_aggregate(self) -> np.ndarray:
        return self.loads.sum(axis=1)


@dataclass
class EnvState:
    hour: int  # 1..24
    price: float
    forecast_load: float
    realized_load: float
    capacity: float
    margin: float
    required: float
    prev_incentive: float

    def vector(self) -> np.ndarray:
        angle = 2.0 * np.pi * self.hour / HOURS
        c = self.capacity
        return np.array(
            [
                np.sin(angle),
                np.cos(angle),
                self.hour / HOURS,
                self.price / PRICE_SCALE,
                self.forecast_load / c,
                self.realized_load / c,
                c / CAPACITY_SCALE,
                self.margin / c,
                self.required / c,
                self.prev_incentive / PRICE_SCALE,
            ]
        )


@dataclass
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    info: Dict[str, Any] = field(default_factory=dict)


def capacity_threshold(series, fraction: float = 0.75) -> float:
    """``fraction`` of the mean over full days of the daily aggregate peak."""
    if isinstance(series, HourlySeries):
        days = series.days()
        if not days:
            raise DataError("Capacity threshold needs at least one full day of data")
        peaks = [series.day_slice(d).aggregate_load().max() for d in days]
    else:
        aggregate = np.asarray(series, dtype=np.float64).reshape(-1)
        if aggregate.size < HOURS:
            raise DataError("Capacity threshold needs at least one full day of data")
        full = aggregate[: aggregate.size - aggregate.size % HOURS].reshape(-1, HOURS)
        peaks = full.max(axis=1)
    return float(fraction * np.mean(peaks))


def action_digits(index: int, n_eu: int, levels: int = 4) -> Tuple[int, ...]:
    """Base-``levels`` digits of ``index``; the first end user is the most significant digit."""
    if levels < 2 or n_eu < 1:
        raise ValueError(f"Need levels >= 2 and at least one end user, got {levels}, {n_eu}")
    if not 0 <= index < levels ** n_eu:
        raise ValueError(f"Action {index} outside 0..{levels ** n_eu - 1}")
    digits = []
    for _ in range(n_eu):
        index, d = divmod(index, levels)
        digits.append(d)
    return tuple(reversed(digits))


def encode_action(digits: Sequence[int], levels: int = 4) -> int:
    index = 0
    for d in digits:
        if not 0 <= d < levels:
            raise ValueError(f"Digit {d} outside 0..{levels - 1}")
        index = index * levels + int(d)
    return index


def decode_action(
    index: int, price: float, n_eu: int, levels: int = 4, max_fraction: float = 0.95
) -> np.ndarray:
    """Per-EU incentive rates in cents/kWh for a joint action index."""
    digits = np.array(action_digits(index, n_eu, levels), dtype=np.float64)
    return digits / (levels - 1) * max_fraction * price


def shaping(required: float, achieved: float, rates, config: Optional[EnvConfig] = None) -> float:
    config = config or EnvConfig()
    if required < 0 or achieved < 0:
        raise ValueError("Required and achieved reductions must be nonnegative")
    total = float(np.sum(rates))
    if required <= 0.0:
        return config.bonus if total == 0.0 else -config.idle_penalty * total
    miss = max(0.0, required - achieved)
    over = max(0.0, achieved - required)
    miss_penalty = config.miss_penalty * miss * (2.0 if total == 0.0 else 1.0)
    return -miss_penalty - config.over_penalty * over


def reward_terms(price: float, rates, delta_e, dis_cost, rho: float) -> Tuple[float, float]:
    """(provider margin, weighted end-user benefit) for one hour."""
    rates = np.asarray(rates, dtype=np.float64)
    delta_e = np.asarray(delta_e, dtype=np.float64)
    dis_cost = np.asarray(dis_cost, dtype=np.float64)
    sp = float(np.sum((price - rates) * delta_e))
    eu = float(np.sum(rho * rates * delta_e - (1.0 - rho) * dis_cost))
    return sp, eu


class MarketEnv(gym.Env):
    """Gymnasium environment over one day; see ``reset_day`` and ``advance``."""

    metadata = {"render_modes": []}

    def __init__(
        self,
        households: Sequence[Household],
        capacity: float,
        config: Optional[EnvConfig] = None,
        days: Optional[Sequence[DayInputs]] = None,
    ):
        super().__init__()
        if not households:
            raise ValueError("MarketEnv needs at least one household")
        if capacity <= 0:
            raise ValueError(f"Capacity must be positive, got {capacity}")
        self.households = list(households)
        self.capacity = float(capacity)
        self.config = config or EnvConfig()
        self.days = list(days or [])
        self.n_actions = self.config.levels ** len(self.households)
        self.action_space = spaces.Discrete(self.n_actions)
        self.observation_space = spaces.Box(-np.inf, np.inf, shape=(STATE_DIM,), dtype=np.float64)
        self.day: Optional[DayInputs] = None
        self.hour = 0
        self.done = True
        self.prev_incentive = 0.0
        self.trace: Optional[EpisodeTrace] = None

    @property
    def household_ids(self) -> List[str]:
        return [hh.eu_id for hh in self.households]

    def realized_aggregate(self) -> np.ndarray:
        return np.sum([hh.realized_total() for hh in self.households], axis=0)

    def preferred_aggregate(self) -> np.ndarray:
        return np.sum([hh.preferred_total() for hh in self.households], axis=0)

    def _state(self, h: int) -> EnvState:
        h = min(h, HOURS - 1)
        realized = float(self.realized_aggregate()[h])
        forecast = float(self.day.forecast_aggregate[h])
        return EnvState(
            hour=h + 1,
            price=float(self.day.price[h]),
            forecast_load=forecast,
            realized_load=realized,
            capacity=self.capacity,
            margin=self.capacity - realized,
            required=max(0.0, forecast - self.capacity),
            prev_incentive=self.prev_incentive,
        )

    def reset_day(self, day: DayInputs) -> EnvState:
        if day.loads.shape[1] != len(self.households):
            raise ShapeError(f"Day has {day.loads.shape[1]} load columns for {len(self.households)} households")
        self.day = day
        for n, hh in enumerate(self.households):
            hh.begin_day(day.demand[:, n])
        self.hour = 0
        self.done = False
        self.prev_incentive = 0.0
        self.trace = EpisodeTrace(self.household_ids, day.label)
        return self._state(0)

    def rates(self, action: int) -> np.ndarray:
        return decode_action(
            int(action),
            float(self.day.price[self.hour]),
            len(self.households),
            self.config.levels,
            self.config.lambda_max_fraction,
        )

    def advance(self, action: int) -> StepResult:
        if self.done or self.day is None:
            raise EpisodeError("The episode is finished; call reset_day first")
        h = self.hour
        price = float(self.day.price[h])
        rates = self.rates(action)
        preferred = self.preferred_aggregate()
        before = self.realized_aggregate()
        outcomes = [
            hh.respond(float(lam), before, self.capacity, h) for hh, lam in zip(self.households, rates)
        ]
        delta_e = np.array([o.delta_e for o in outcomes])
        dis_cost = np.array([o.dis_cost for o in outcomes])
        after = self.realized_aggregate()

        required = max(0.0, float(self.day.forecast_aggregate[h]) - self.capacity)
        achieved = float(delta_e.sum())
        phi = shaping(required, achieved, rates, self.config)
        sp, eu = reward_terms(price, rates, delta_e, dis_cost, self.config.rho)
        reward = sp + eu + phi
        r_miss = max(0.0, required - achieved)
        r_over = max(0.0, achieved - required)
        self.trace.record(
            h + 1,
            price,
            rates,
            delta_e,
            dis_cost,
            eu_preferred=[hh.preferred_total()[h] for hh in self.households],
            eu_after=[hh.realized_total()[h] for hh in self.households],
            load_preferred=preferred[h],
            load_before=before[h],
            load_after=after[h],
            required=required,
            achieved=achieved,
            r_miss=r_miss,
            r_over=r_over,
            phi=phi,
            reward=reward,
        )

        self.prev_incentive = float(rates.sum())
        self.hour += 1
        self.done = self.hour == HOURS
        info = {
            "hour": h + 1,
            "rates": rates,
            "delta_e": delta_e,
            "dis_cost": dis_cost,
            "payments": rates * delta_e,
            "sp_term": sp,
            "eu_term": eu,
            "phi": phi,
            "r_miss": r_miss,
            "r_over": r_over,
        }
        return StepResult(self._state(self.hour), reward, self.done, info)

    # gymnasium interface

    def reset(self, *, seed: Optional[int] = None, options: Optional[Dict[str, Any]] = None):
        super().reset(seed=seed)
        if options and "day" in options:
            day = options["day"]
        elif self.days:
            day = self.days[int(self.np_random.integers(len(self.days)))]
        else:
            raise DataError("No day given and the environment has no day pool")
        state = self.reset_day(day)
        return state.vector(), {"state": state}

    def step(self, action):
        result = self.advance(int(action))
        info = dict(result.info, state=result.next_state)
        return result.next_state.vector(), result.reward, result.done, False, info
