"""End-user response to incentive rates, appliance by appliance.

Appliances fall into four categories. Power-controllable (PC) ones are
curtailed in discrete levels at a quadratic energy cost. Time-shiftable ones
are moved later in the day at a quadratic delay cost, either as one
contiguous block (TS-NI) or as a rate-limited profile (TS-I). Non-shiftable
(NS) demand never responds.

Hours are 0-based indices into the day (0 is 00:00-01:00).
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from core.errors import ConfigurationError, ShapeError

logger = logging.getLogger(__name__)

HOURS = 24
BETA_FLOOR = 0.01
# demand left after PC shares when no NS appliance is configured; never responds
OTHER_LOAD = "other"
_TOL = 1e-9


class Category(str, Enum):
    PC = "PC"
    TS_I = "TS-I"
    TS_NI = "TS-NI"
    NS = "NS"


class ApplianceSpec(BaseModel):
    """Configured appliance type; betas are drawn per household from normal(mean, std)."""

    name: str
    category: Category
    beta_mean: float = Field(gt=0.0, description="Mean dissatisfaction coefficient")
    beta_std: float = Field(0.0, ge=0.0, description="Std of the dissatisfaction coefficient")
    levels: int = Field(4, ge=1, description="PC curtailment levels")
    share: float = Field(0.0, ge=0.0, le=1.0, description="PC share of the non-shiftable residual")
    block_length: int = Field(1, ge=1, description="TS-NI block length, hours")
    block_energy: float = Field(0.0, ge=0.0, description="TS-NI energy per block hour, kWh")
    preferred_start: Optional[int] = Field(None, ge=0, le=23, description="TS-NI preferred start hour (0-based)")
    window: Tuple[int, int] = Field((0, 23), description="(earliest, deadline) hour indices, 0-based")
    daily_energy: float = Field(0.0, ge=0.0, description="TS-I daily energy, kWh")
    max_rate: float = Field(0.0, ge=0.0, description="TS-I maximum rate, kW")


DEFAULT_FLEET = [
    ApplianceSpec(name="dryer", category=Category.TS_NI, beta_mean=0.10, beta_std=0.10,
                  block_length=2, block_energy=1.2, preferred_start=19, window=(19, 23)),
    ApplianceSpec(name="washing_machine", category=Category.TS_NI, beta_mean=0.40, beta_std=0.10,
                  block_length=1, block_energy=0.6, preferred_start=18, window=(18, 23)),
    ApplianceSpec(name="dishwasher", category=Category.TS_NI, beta_mean=0.20, beta_std=0.10,
                  block_length=2, block_energy=0.7, preferred_start=20, window=(20, 23)),
    ApplianceSpec(name="ev", category=Category.TS_I, beta_mean=0.05, beta_std=0.10,
                  daily_energy=4.0, max_rate=2.0, window=(17, 23)),
    ApplianceSpec(name="air_conditioner", category=Category.PC, beta_mean=3.5, beta_std=2.0,
                  levels=4, share=0.45),
]


@dataclass
class Appliance:
    name: str
    category: Category
    beta: float
    levels: int = 4
    share: float = 0.0
    block_length: int = 1
    block_energy: float = 0.0
    preferred_start: Optional[int] = None
    window: Tuple[int, int] = (0, HOURS - 1)
    daily_energy: float = 0.0
    max_rate: float = 0.0

    def __post_init__(self):
        self.category = Category(self.category)
        earliest, deadline = self.window
        if self.beta <= 0:
            raise ConfigurationError(f"{self.name}: beta must be positive, got {self.beta}")
        if self.levels < 1:
            raise ConfigurationError(f"{self.name}: needs at least one curtailment level")
        if not 0 <= earliest <= deadline <= HOURS - 1:
            raise ConfigurationError(f"{self.name}: window {self.window} is not inside the day")
        if self.category is Category.TS_NI:
            if self.preferred_start is None:
                self.preferred_start = earliest
            if deadline < earliest + self.block_length - 1:
                raise ConfigurationError(
                    f"{self.name}: a {self.block_length}-hour block does not fit window {self.window}"
                )
            if not earliest <= self.preferred_start <= deadline - self.block_length + 1:
                raise ConfigurationError(
                    f"{self.name}: preferred start {self.preferred_start} is outside window {self.window}"
                )
        if self.category is Category.TS_I:
            if self.daily_energy > self.max_rate * (deadline - earliest + 1) + _TOL:
                raise ConfigurationError(
                    f"{self.name}: {self.daily_energy} kWh cannot be delivered at {self.max_rate} kW "
                    f"within window {self.window}"
                )

    @classmethod
    def from_spec(cls, spec: ApplianceSpec, beta: float) -> "Appliance":
        data = spec.model_dump(exclude={"beta_mean", "beta_std"})
        return cls(beta=beta, **data)


def sample_betas(
    rng: np.random.Generator, fleet: Sequence[ApplianceSpec], n_households: int
) -> List[Dict[str, float]]:
    """One beta per appliance per household, truncated below at BETA_FLOOR."""
    draws = []
    for _ in range(n_households):
        draws.append(
            {spec.name: max(BETA_FLOOR, float(rng.normal(spec.beta_mean, spec.beta_std))) for spec in fleet}
        )
    return draws


def build_households(
    fleet: Sequence[ApplianceSpec], betas: Sequence[Dict[str, float]], ids: Sequence[str]
) -> List["Household"]:
    return [
        Household(eu_id, [Appliance.from_spec(spec, b[spec.name]) for spec in fleet])
        for eu_id, b in zip(ids, betas)
    ]


# --- Cost and response primitives ---


def _check_level(q: int, m: int):
    if m < 1 or not 0 <= q <= m:
        raise ValueError(f"Curtailment level {q} outside 0..{m}")


def pc_cost(beta: float, q: int, m: int, energy: float) -> float:
    _check_level(q, m)
    return beta * ((q / m) * energy) ** 2


def pc_delta(q: int, m: int, energy: float) -> float:
    _check_level(q, m)
    return (q / m) * energy


def pc_best_response(lam: float, beta: float, m: int, energy: float) -> int:
    """Level maximising lam * reduction - cost; ties go to the smaller level."""
    if lam < 0:
        raise ValueError(f"Incentive rate must be nonnegative, got {lam}")
    utility = [lam * pc_delta(q, m, energy) - pc_cost(beta, q, m, energy) for q in range(m + 1)]
    return int(np.argmax(utility))


def ts_cost(beta: float, delay: float) -> float:
    if delay < 0:
        raise ValueError(f"Delay must be nonnegative, got {delay}")
    return beta * delay ** 2


@dataclass
class ShiftResult:
    profile: np.ndarray  # realized kWh per hour
    delta_e: np.ndarray  # reduction credited per hour
    dis_cost: float
    delay: float
    moved: bool
    start: Optional[int] = None  # TS-NI only


def _as_day(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (HOURS,):
        raise ShapeError(f"{what} must have {HOURS} hourly values, got shape {arr.shape}")
    return arr


def schedule_ts_ni(
    app: Appliance,
    lam: float,
    aggregate_load,
    capacity: float,
    preferred_start: Optional[int] = None,
    not_before: int = 0,
    energy: Optional[float] = None,
) -> ShiftResult:
    """Pick a start hour for a non-interruptible block.

    ``aggregate_load`` includes the block at its preferred position. Only
    starts whose block keeps every destination hour within ``capacity`` are
    candidates; the block moves only if the reward for energy vacated from
    over-capacity hours beats the delay cost.
    """
    aggregate = _as_day(aggregate_load, "aggregate_load")
    pref = app.preferred_start if preferred_start is None else preferred_start
    length = app.block_length
    e = app.block_energy if energy is None else energy
    earliest, deadline = app.window
    last_start = deadline - length + 1
    if not earliest <= pref <= last_start:
        raise ConfigurationError(f"{app.name}: preferred start {pref} is infeasible for window {app.window}")

    own = np.zeros(HOURS)
    own[pref:pref + length] = e
    stay = ShiftResult(own.copy(), np.zeros(HOURS), 0.0, 0.0, False, pref)
    if pref < not_before or e <= 0.0 or lam <= 0.0:
        return stay

    base = aggregate - own
    preferred_hours = set(range(pref, pref + length))
    best_key, best = None, None
    for start in range(max(earliest, not_before), last_start + 1):
        if start == pref:
            continue
        dest = np.arange(start, start + length)
        if np.any(base[dest] + e > capacity + _TOL):
            continue
        vacated = [h for h in preferred_hours - set(dest.tolist()) if aggregate[h] > capacity]
        value = lam * e * len(vacated) - ts_cost(app.beta, abs(start - pref))
        if value <= 0.0:
            continue
        key = (-value, abs(start - pref), start)
        if best_key is None or key < best_key:
            best_key, best = key, (start, vacated)

    if best is None:
        return stay
    start, vacated = best
    profile = np.zeros(HOURS)
    profile[start:start + length] = e
    delta = np.zeros(HOURS)
    delta[vacated] = e
    delay = float(abs(start - pref))
    return ShiftResult(profile, delta, ts_cost(app.beta, delay), delay, True, start)


def preferred_ts_i_profile(app: Appliance, cap=None) -> np.ndarray:
    """Charge as early as possible in the window at ``max_rate``."""
    earliest, deadline = app.window
    profile = np.zeros(HOURS)
    left = app.daily_energy
    for h in range(earliest, deadline + 1):
        room = app.max_rate if cap is None else min(app.max_rate, max(cap[h], 0.0))
        profile[h] = min(room, left)
        left -= profile[h]
        if left <= 0:
            break
    return profile


def _mean_hour(profile: np.ndarray) -> float:
    total = profile.sum()
    return float(np.dot(np.arange(HOURS), profile) / total) if total > 0 else 0.0


def schedule_ts_i(
    app: Appliance,
    lam: float,
    aggregate_load,
    capacity: float,
    preferred=None,
    not_before: int = 0,
) -> ShiftResult:
    """Water-fill an interruptible load into the least loaded window hours.

    Hours are filled in ascending order of the load they carry without this
    appliance, first up to the capacity headroom and then, if energy is left,
    up to ``max_rate`` regardless of capacity. Energy already delivered before
    ``not_before`` stays where it is.
    """
    aggregate = _as_day(aggregate_load, "aggregate_load")
    preferred = preferred_ts_i_profile(app) if preferred is None else _as_day(preferred, "preferred")
    stay = ShiftResult(preferred.copy(), np.zeros(HOURS), 0.0, 0.0, False)
    if lam <= 0.0 or preferred.sum() <= 0.0:
        return stay

    earliest, deadline = app.window
    hours = list(range(max(earliest, not_before), deadline + 1))
    remaining = float(preferred[hours].sum()) if hours else 0.0
    if remaining <= 0.0:
        return stay
    base = aggregate - preferred
    order = sorted(hours, key=lambda h: (base[h], h))
    plan = preferred.copy()
    plan[hours] = 0.0
    for h in order:
        take = min(app.max_rate, max(0.0, capacity - base[h]), remaining)
        plan[h] += take
        remaining -= take
    for h in order:
        if remaining <= _TOL:
            break
        take = min(app.max_rate - plan[h], remaining)
        plan[h] += take
        remaining -= take
    if remaining > _TOL:
        raise ConfigurationError(
            f"{app.name}: {remaining:.6f} kWh cannot be delivered by hour {deadline}"
        )

    over = aggregate > capacity
    delta = np.where(over, np.maximum(preferred - plan, 0.0), 0.0)
    delay = max(0.0, _mean_hour(plan) - _mean_hour(preferred))
    cost = ts_cost(app.beta, delay)
    if lam * delta.sum() - cost <= 0.0:
        return stay
    return ShiftResult(plan, delta, cost, delay, True)


# --- Household ---


@dataclass
class ResponseOutcome:
    hour: int
    delta_e: float  # kWh credited at this hour
    dis_cost: float  # cents charged at this hour
    consumption: float  # realized kWh at this hour
    by_appliance: Dict[str, Tuple[float, float]] = field(default_factory=dict)  # name -> (delta_e, dis_cost)


class Household:
    """One end user's appliances and the state of its current day."""

    def __init__(self, eu_id: str, appliances: Sequence[Appliance]):
        names = [a.name for a in appliances]
        if len(set(names)) != len(names):
            raise ConfigurationError(f"Household {eu_id}: duplicate appliance names {names}")
        if sum(a.share for a in appliances if a.category is Category.PC) > 1.0 + _TOL:
            raise ConfigurationError(f"Household {eu_id}: PC shares exceed 1")
        self.eu_id = str(eu_id)
        self.appliances = list(appliances)
        self.preferred: Dict[str, np.ndarray] = {}
        self.realized: Dict[str, np.ndarray] = {}
        self.ts_delta: Dict[str, np.ndarray] = {}  # appliance -> kWh vacated per hour
        self.ts_decided = False
        self.ts_decision_hour: Optional[int] = None

    def begin_day(self, load) -> Dict[str, np.ndarray]:
        """Split a day's hourly demand into appliance profiles.

        TS-NI blocks sit at their preferred start, TS-I loads charge as early
        as possible, PC appliances take their share of what is left and NS
        demand is the remainder. Profiles never exceed the household's demand.
        """
        load = _as_day(load, "household load")
        if (load < 0).any():
            raise ValueError("Household load must be nonnegative")
        remaining = load.copy()
        profiles: Dict[str, np.ndarray] = {}
        for app in self.appliances:
            if app.category is Category.TS_NI:
                hours = slice(app.preferred_start, app.preferred_start + app.block_length)
                e = max(0.0, min(app.block_energy, float(remaining[hours].min())))
                profile = np.zeros(HOURS)
                profile[hours] = e
                profiles[app.name] = profile
                remaining -= profile
        for app in self.appliances:
            if app.category is Category.TS_I:
                profile = preferred_ts_i_profile(app, cap=remaining)
                profiles[app.name] = profile
                remaining -= profile
        remaining = np.maximum(remaining, 0.0)
        residual = remaining.copy()
        ns_names = []
        for app in self.appliances:
            if app.category is Category.PC:
                profiles[app.name] = app.share * residual
                remaining -= profiles[app.name]
            elif app.category is Category.NS:
                ns_names.append(app.name)
        remaining = np.maximum(remaining, 0.0)
        if ns_names:
            for name in ns_names:
                profiles[name] = remaining / len(ns_names)
        self.preferred = {k: v.copy() for k, v in profiles.items()}
        if not ns_names:
            self.preferred[OTHER_LOAD] = remaining.copy()
        self.realized = {k: v.copy() for k, v in self.preferred.items()}
        self.ts_delta = {}
        self.ts_decided = False
        self.ts_decision_hour = None
        return profiles

    def preferred_total(self) -> np.ndarray:
        return np.sum(list(self.preferred.values()), axis=0) if self.preferred else np.zeros(HOURS)

    def realized_total(self) -> np.ndarray:
        return np.sum(list(self.realized.values()), axis=0) if self.realized else np.zeros(HOURS)

    def appliance(self, name: str) -> Appliance:
        for app in self.appliances:
            if app.name == name:
                return app
        raise KeyError(name)

    def _decide_shifts(self, lam: float, aggregate: np.ndarray, capacity: float, hour: int) -> Dict[str, float]:
        costs = {}
        for app in self.appliances:
            if app.category is Category.TS_NI:
                e = float(self.preferred[app.name].max())
                result = schedule_ts_ni(app, lam, aggregate, capacity, not_before=hour, energy=e)
            elif app.category is Category.TS_I:
                result = schedule_ts_i(app, lam, aggregate, capacity, self.preferred[app.name], not_before=hour)
            else:
                continue
            if result.moved:
                logger.debug("EU %s shifts %s (delay %.2f h)", self.eu_id, app.name, result.delay)
                self.realized[app.name] = result.profile
                self.ts_delta[app.name] = result.delta_e
                # keep the aggregate snapshot consistent for later appliances
                aggregate = aggregate - self.preferred[app.name] + result.profile
            costs[app.name] = result.dis_cost
        return costs

    def respond(self, lam: float, aggregate_load, capacity: float, hour: int) -> ResponseOutcome:
        """Answer the rate offered for ``hour``.

        PC appliances are curtailed in the hour itself. TS appliances are
        rescheduled once per day; the energy they vacate from over-capacity
        hours is credited, and the delay cost charged, at the decision hour.
        """
        if not self.preferred:
            raise ConfigurationError(f"Household {self.eu_id}: begin_day must be called before respond")
        if not 0 <= hour < HOURS:
            raise ValueError(f"Hour {hour} outside 0..{HOURS - 1}")
        if lam < 0:
            raise ValueError(f"Incentive rate must be nonnegative, got {lam}")
        aggregate = _as_day(aggregate_load, "aggregate_load")
        by_app: Dict[str, Tuple[float, float]] = {}

        shift_costs: Dict[str, float] = {}
        if not self.ts_decided and lam > 0 and aggregate[hour] > capacity:
            self.ts_decided = True
            self.ts_decision_hour = hour
            shift_costs = self._decide_shifts(lam, aggregate, capacity, hour)

        delta = 0.0
        cost = 0.0
        for app in self.appliances:
            if app.category is Category.PC:
                e = float(self.preferred[app.name][hour])
                q = pc_best_response(lam, app.beta, app.levels, e)
                d, c = pc_delta(q, app.levels, e), pc_cost(app.beta, q, app.levels, e)
                self.realized[app.name][hour] = e - d
                by_app[app.name] = (d, c)
                delta += d
                cost += c
            elif app.name in self.ts_delta and app.name in shift_costs:
                # the whole shift is paid at the rate that triggered it
                d = float(self.ts_delta[app.name].sum())
                c = shift_costs[app.name]
                by_app[app.name] = (d, c)
                delta += d
                cost += c
        consumption = float(self.realized_total()[hour])
        return ResponseOutcome(hour, delta, cost, consumption, by_app)


def respond(hh: Household, lam: float, aggregate_load, capacity: float, hour: int) -> ResponseOutcome:
    return hh.respond(lam, aggregate_load, capacity, hour)
