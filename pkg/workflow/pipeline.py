"""One function per CLI command.

Each ``cmd_*`` reads its inputs from the paths in ``RunConfig``, writes its
artifacts and returns a ``CommandResult``; printing and exit codes are left
to main.py.
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from core.agent import Evaluation, evaluate, load_agent, save_agent, train
from core.errors import ConfigurationError, DataError, MissingArtifactError
from core.forecast import MAX_LAG, Forecaster, accuracy_table, forecast_day, forecast_frame, train_forecaster
from ingest.calendar import load_holidays
from ingest.series import HourlySeries, load_series, split_series, training_days, write_series
from ingest.synth import synth_generate
from market.benchmark import eblr_run_day
from market.env import DayInputs, MarketEnv, capacity_threshold
from market.household import build_households, sample_betas
from market.metrics import (
    comparison_frame,
    daily_mean_stats,
    ledger_table,
    profiles_frame,
    rho_sweep,
    stats_table,
    sweep_series,
)
from workflow.run_config import RunConfig

logger = logging.getLogger(__name__)

POLICY_FILE = "ddqn_policy.json"


@dataclass
class CommandResult:
    command: str
    artifacts: List[Path] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


class ZeroPolicy:
    """Stand-in Q-network whose greedy action is always index 0 (no incentive)."""

    def __init__(self, n_actions: int):
        self.output_dim = n_actions

    def predict(self, x):
        x = np.asarray(x)
        return np.zeros(x.shape[:-1] + (self.output_dim,))


# --- Artifact paths ---


def load_target(household_id: str) -> str:
    return f"load_{household_id}"


def forecaster_path(config: RunConfig, target: str) -> Path:
    return config.paths.checkpoint_dir / f"forecaster_{target}.json"


def policy_path(config: RunConfig, rho: Optional[float] = None) -> Path:
    if rho is None:
        return config.paths.checkpoint_dir / POLICY_FILE
    return config.paths.checkpoint_dir / f"ddqn_policy_rho{rho:g}.json"


def _output(config: RunConfig, name: str) -> Path:
    config.paths.output_dir.mkdir(parents=True, exist_ok=True)
    return config.paths.output_dir / name


def _write_csv(frame: pd.DataFrame, path: Path) -> Path:
    frame.to_csv(path, index=False, encoding="utf-8", float_format="%.17g")
    return path


# --- Shared inputs ---


@dataclass
class Workspace:
    """Dataset, split and forecasters shared by the training and evaluation commands."""

    config: RunConfig
    series: HourlySeries
    holidays: frozenset
    models: Dict[str, Forecaster] = field(default_factory=dict)
    _days: Dict[Any, DayInputs] = field(default_factory=dict, repr=False)

    @property
    def household_ids(self) -> List[str]:
        return list(self.series.household_ids)

    @cached_property
    def split(self):
        return split_series(self.series, self.config.data.test_start, self.config.data.test_end)

    def day_inputs(self, day, with_actuals: bool = True) -> DayInputs:
        key = (pd.Timestamp(day).date(), with_actuals)
        if key in self._days:
            return self._days[key]
        price = forecast_day(self.models["price"], self.series, day, "price", self.holidays)
        loads = np.column_stack(
            [
                forecast_day(self.models[load_target(hid)], self.series, day, load_target(hid), self.holidays)
                for hid in self.household_ids
            ]
        )
        actual = self.series.day_slice(day).loads if with_actuals else None
        self._days[key] = DayInputs(price, loads, actual, label=str(key[0]))
        return self._days[key]

    def capacity(self) -> float:
        if self.config.env.capacity is not None:
            return self.config.env.capacity
        return capacity_threshold(self.split.train, self.config.env.capacity_fraction)


def load_dataset(config: RunConfig) -> HourlySeries:
    path = config.paths.dataset_path
    if not path.is_file():
        raise MissingArtifactError(path, "synth")
    return load_series(path, max_missing_fraction=config.data.max_missing_fraction, max_gap=config.data.max_gap)


def open_workspace(config: RunConfig, with_models: bool = True) -> Workspace:
    ws = Workspace(config, load_dataset(config), load_holidays(config.paths.holidays))
    if with_models:
        for target in ["price", *(load_target(hid) for hid in ws.household_ids)]:
            path = forecaster_path(config, target)
            if not path.is_file():
                raise MissingArtifactError(path, "forecast-train")
            ws.models[target] = Forecaster.load(path)
    return ws


def _history_hours(ws: Workspace) -> int:
    return MAX_LAG + max(m.window for m in ws.models.values()) - 1


def _test_day(ws: Workspace, day=None):
    day = pd.Timestamp(day or ws.config.data.eval_day).date()
    if day not in ws.split.test.days():
        raise DataError(f"{day} is not a test day ({ws.config.data.test_start}..{ws.config.data.test_end})")
    return day


def _env_for_policy(ws: Workspace, meta: Dict[str, Any], config: RunConfig) -> MarketEnv:
    if list(meta["household_ids"]) != ws.household_ids:
        raise DataError(
            f"Policy was trained for households {meta['household_ids']}, dataset has {ws.household_ids}"
        )
    env_config = config.env
    trained_rho = meta.get("rho")
    if trained_rho is not None and float(trained_rho) != env_config.rho:
        logger.warning(
            "Policy was trained with rho=%s; evaluating with it instead of env.rho=%s", trained_rho, env_config.rho
        )
        env_config = env_config.model_copy(update={"rho": float(trained_rho)})
    households = build_households(config.appliances, meta["betas"], ws.household_ids)
    return MarketEnv(households, float(meta["capacity"]), env_config)


def _load_policy(ws: Workspace, path: Path, config: Optional[RunConfig] = None):
    config = config or ws.config
    if not path.is_file():
        raise MissingArtifactError(path, "agent-train")
    q_net, meta = load_agent(path)
    env = _env_for_policy(ws, meta, config)
    if q_net.output_dim != env.n_actions:
        raise ConfigurationError(
            f"Policy has {q_net.output_dim} actions but env.levels={config.env.levels} needs {env.n_actions}"
        )
    return q_net, env


# --- Commands ---


def cmd_synth(config: RunConfig, out_path=None) -> CommandResult:
    data = config.data
    series = synth_generate(config.seed, data.days, data.households, data.noise, data.start)
    path = write_series(series, out_path or config.paths.dataset_path)
    logger.info("wrote %d hours for %d households to %s", len(series), series.n_households, path)
    return CommandResult("synth", [path], {"hours": len(series), "households": series.n_households})


def cmd_ingest(config: RunConfig, source) -> CommandResult:
    """Validate and normalise an external CSV into the dataset location."""
    source = Path(source)
    target = config.paths.dataset_path
    if target.exists() and source.resolve() == target.resolve():
        raise ConfigurationError(f"Ingest would overwrite its own input {source}; set paths.dataset elsewhere")
    series = load_series(
        source, max_missing_fraction=config.data.max_missing_fraction, max_gap=config.data.max_gap
    )
    path = write_series(series, target)
    return CommandResult(
        "ingest",
        [path],
        {
            "hours": len(series),
            "households": series.n_households,
            "interpolated": int(series.interpolated.sum()),
            "first": str(series.timestamps[0]),
            "last": str(series.timestamps[-1]),
        },
    )


def cmd_forecast_train(config: RunConfig) -> CommandResult:
    ws = open_workspace(config, with_models=False)
    split = ws.split
    targets = ["price", *(load_target(hid) for hid in ws.household_ids)]
    artifacts, losses = [], {}
    for i, target in enumerate(targets):
        logger.info("training forecaster for %s", target)
        model, report = train_forecaster(split.train, target, config.forecast, config.seed + i, ws.holidays)
        ws.models[target] = model
        artifacts.append(model.save(forecaster_path(config, target)))
        losses[target] = report.final_loss

    table = accuracy_table(ws.models, ws.series, split.test.days(), ws.holidays)
    table["train_loss"] = table["target"].map(losses)
    artifacts.append(_write_csv(table, _output(config, "forecast_accuracy.csv")))
    day = _test_day(ws)
    forecasts = {target: forecast_day(model, ws.series, day, target, ws.holidays) for target, model in ws.models.items()}
    artifacts.append(_write_csv(forecast_frame(forecasts), _output(config, "day_forecast.csv")))
    summary = {f"mape_{row.target}": row.mape for row in table.itertuples()}
    return CommandResult("forecast-train", artifacts, summary)


def _train_policy(ws: Workspace, config: RunConfig, path: Path, episodes: Optional[int] = None):
    split = ws.split
    days = training_days(split.train, _history_hours(ws))
    if not days:
        raise DataError(f"No training day has the {_history_hours(ws)} hours of history forecasting needs")
    with_actuals = config.agent.train_on_actuals
    pool = [ws.day_inputs(d, with_actuals) for d in days]
    betas = sample_betas(np.random.default_rng(config.seed), config.appliances, len(ws.household_ids))
    households = build_households(config.appliances, betas, ws.household_ids)
    env = MarketEnv(households, ws.capacity(), config.env, pool)
    agent_config = config.agent if episodes is None else config.agent.model_copy(update={"episodes": episodes})
    logger.info(
        "training policy on %d days, capacity %.3f kW, rho %.2f, %d episodes",
        len(pool), env.capacity, config.env.rho, agent_config.episodes,
    )
    result = train(env, pool, agent_config, seed=config.seed, checkpoint_path=path)
    save_agent(path, result.q_net, env, {"betas": betas, "seed": config.seed, "rho": config.env.rho})
    return result, env


def cmd_agent_train(config: RunConfig) -> CommandResult:
    ws = open_workspace(config)
    path = policy_path(config)
    result, env = _train_policy(ws, config, path)
    log = _write_csv(pd.DataFrame(result.log_rows()), _output(config, "training_log.csv"))
    summary = {"episodes": len(result.log), "capacity": env.capacity}
    if result.validation:
        summary["final_validation_reward"] = result.validation[-1][1]
    return CommandResult("agent-train", [path, log], summary)


def _evaluate_day(ws: Workspace, q_net, env: MarketEnv, day) -> Evaluation:
    return evaluate(q_net, env, ws.day_inputs(day))


def cmd_evaluate(config: RunConfig, day=None, all_test_days: bool = False, policy: str = "ddqn") -> CommandResult:
    ws = open_workspace(config)
    q_net, env = _load_policy(ws, policy_path(config))
    label = "ddqn"
    if policy == "zero":
        q_net, label = ZeroPolicy(env.n_actions), "zero"
    elif policy != "ddqn":
        raise ConfigurationError(f"Unknown policy {policy!r}; expected 'ddqn' or 'zero'")

    if all_test_days:
        rows, base_stats, policy_stats = [], [], []
        for d in ws.split.test.days():
            result = _evaluate_day(ws, q_net, env, d)
            base_stats.append(result.baseline)
            policy_stats.append(result.stats)
            rows.append(
                {
                    "day": str(d),
                    **{f"no_dr_{k}": v for k, v in result.baseline.as_dict().items()},
                    **{f"{label}_{k}": v for k, v in result.stats.as_dict().items()},
                    "reward": result.total_reward,
                }
            )
        stats = {"no_dr": daily_mean_stats(base_stats), label: daily_mean_stats(policy_stats)}
        daily = _write_csv(pd.DataFrame(rows), _output(config, "daily_load_stats.csv"))
        table = _write_csv(stats_table(stats), _output(config, "load_stats.csv"))
        return CommandResult(
            "evaluate",
            [daily, table],
            {"days": len(rows), "par_no_dr": stats["no_dr"].par, f"par_{label}": stats[label].par},
        )

    day = _test_day(ws, day)
    result = _evaluate_day(ws, q_net, env, day)
    trace = result.trace.to_csv(_output(config, "episode_trace.csv"))
    table = _write_csv(stats_table({"no_dr": result.baseline, label: result.stats}), _output(config, "load_stats.csv"))
    ledger = _write_csv(ledger_table([result.ledger]), _output(config, "financial_ledger.csv"))
    return CommandResult(
        "evaluate",
        [trace, table, ledger],
        {
            "day": str(day),
            "reward": result.total_reward,
            "par_no_dr": result.baseline.par,
            f"par_{label}": result.stats.par,
            "sp_profit": result.ledger.sp_profit,
        },
    )


def cmd_compare(config: RunConfig, day=None) -> CommandResult:
    """No DR, the elasticity benchmark and the learned policy on one test day."""
    ws = open_workspace(config)
    q_net, env = _load_policy(ws, policy_path(config))
    day = _test_day(ws, day)
    inputs = ws.day_inputs(day)
    result = evaluate(q_net, env, inputs)
    eblr = eblr_run_day(inputs, ws.household_ids, config.benchmark, env.capacity, env.config)
    profiles = {
        "no_dr": result.trace.column("load_preferred"),
        "eblr": eblr.aggregate,
        "ddqn": result.trace.column("load_after"),
    }
    frame = comparison_frame(profiles)
    artifacts = [
        _write_csv(frame, _output(config, "comparison.csv")),
        _write_csv(profiles_frame(profiles), _output(config, "comparison_profiles.csv")),
        eblr.trace.to_csv(_output(config, "eblr_trace.csv")),
    ]
    summary = {f"par_{row.series}": row.par for row in frame.itertuples()}
    summary["day"] = str(day)
    return CommandResult("compare", artifacts, summary)


def cmd_sweep_rho(config: RunConfig, rhos: Optional[Sequence[float]] = None, episodes: Optional[int] = None) -> CommandResult:
    """Retrain and evaluate the policy for each end-user weight and tabulate the ledgers."""
    rhos = list(rhos if rhos is not None else config.sweep.rhos)
    episodes = episodes or config.sweep.episodes
    ws = open_workspace(config)
    day = _test_day(ws)
    inputs = ws.day_inputs(day)
    checkpoints = []

    def run(rho: float):
        run_config = config.model_copy(update={"env": config.env.model_copy(update={"rho": rho})})
        path = policy_path(config, rho)
        result, env = _train_policy(ws, run_config, path, episodes)
        checkpoints.append(path)
        return evaluate(result.q_net, env, inputs).trace

    ledgers = rho_sweep(rhos, run)
    artifacts = [
        *checkpoints,
        _write_csv(ledger_table(ledgers), _output(config, "rho_sensitivity.csv")),
        _write_csv(sweep_series(ledgers), _output(config, "rho_sweep_series.csv")),
    ]
    summary = {f"sp_cost_rho{l.rho:g}": l.sp_cost for l in ledgers}
    summary.update({f"eu_profit_rho{l.rho:g}": l.eu_profit_total for l in ledgers})
    return CommandResult("sweep-rho", artifacts, summary)
