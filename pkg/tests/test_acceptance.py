"""Seeded end-to-end reproduction on a synthetic summer.

These runs train every model from scratch and take minutes; they are
deselected by default (``pytest -m slow`` runs them).
"""

import numpy as np
import pandas as pd
import pytest

from market.metrics import load_stats, par_improvement
from workflow import pipeline
from workflow.run_config import RunConfig, apply_overrides

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def summer(tmp_path_factory):
    root = tmp_path_factory.mktemp("summer")
    config = apply_overrides(
        RunConfig(),
        [
            "agent.episodes=500",
            "forecast.epochs=20",
            f"paths.data_dir={root / 'data'}",
            f"paths.output_dir={root / 'output'}",
            f"paths.checkpoint_dir={root / 'checkpoints'}",
        ],
    )
    pipeline.cmd_synth(config)
    pipeline.cmd_forecast_train(config)
    pipeline.cmd_agent_train(config)
    pipeline.cmd_compare(config)
    return config


def _read(config, name):
    return pd.read_csv(config.paths.output_dir / name)


def test_validation_reward_improves(summer):
    log = _read(summer, "training_log.csv").dropna(subset=["val_reward"])
    fifth = max(1, len(log) // 5)
    assert log["val_reward"].iloc[-fifth:].mean() > log["val_reward"].iloc[:fifth].mean()


def test_policy_flattens_the_evaluation_day(summer):
    profiles = _read(summer, "comparison_profiles.csv")
    base, treated = load_stats(profiles["no_dr"]), load_stats(profiles["ddqn"])
    assert par_improvement(base, treated) >= 15.0
    # no rebound peak
    assert profiles["ddqn"].max() <= profiles["no_dr"].max() + 1e-9


def test_policy_beats_the_benchmark(summer):
    par = _read(summer, "comparison.csv").set_index("series")["par"]
    assert par["ddqn"] < par["eblr"] < par["no_dr"]
    profiles = _read(summer, "comparison_profiles.csv")
    assert (profiles["eblr"] <= profiles["no_dr"] + 1e-12).all()


def test_end_user_weight_directionality(summer):
    pipeline.cmd_sweep_rho(summer, [0.1, 0.5, 0.9])
    series = _read(summer, "rho_sweep_series.csv")
    assert np.all(np.diff(series["sp_cost"]) >= -1e-9)
    assert series["eu_profit_total"].iloc[-1] > series["eu_profit_total"].iloc[0]
