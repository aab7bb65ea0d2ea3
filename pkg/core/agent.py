"""Double-DQN service-provider agent.

The policy network picks the next action and the target network scores it
when building bootstrap targets. The target network follows the policy
network through soft updates after every gradient step.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator

from core.errors import DataError, NumericError, ShapeError
from core.neural import (
    AdamState,
    DenseNet,
    adam_update,
    clip_by_global_norm,
    dense_backward,
    dense_forward,
    huber_loss,
    load_dense_net,
    save_dense_net,
)
from market.env import STATE_DIM, DayInputs, MarketEnv
from market.metrics import FinancialLedger, LoadStats, ledger, load_stats
from market.trace import EpisodeTrace

logger = logging.getLogger(__name__)


class AgentConfig(BaseModel):
    gamma: float = Field(0.99, ge=0.0, le=1.0, description="Discount factor")
    lr: float = Field(1e-4, ge=0.0, description="Adam learning rate")
    batch_size: int = Field(256, ge=1, description="Replay mini-batch size")
    buffer_size: int = Field(50_000, ge=1, description="Replay buffer capacity")
    epsilon_start: float = Field(1.0, ge=0.0, le=1.0, description="Initial exploration rate")
    epsilon_min: float = Field(0.01, ge=0.0, le=1.0, description="Exploration floor")
    epsilon_decay: float = Field(0.998, gt=0.0, le=1.0, description="Per-episode exploration decay")
    tau: float = Field(0.003, gt=0.0, lt=1.0, description="Soft target-update rate")
    hidden: Tuple[int, ...] = Field((128, 64), description="Hidden ReLU layer widths")
    episodes: int = Field(2500, ge=1, description="Training episodes (one day each)")
    warmup: int = Field(1000, ge=0, description="Transitions stored before the first update")
    validate_every: int = Field(50, ge=1, description="Episodes between greedy validation runs")
    validation_days: int = Field(3, ge=0, description="Fixed validation days")
    huber_delta: float = Field(1.0, gt=0.0, description="Huber loss threshold")
    clip_norm: float = Field(10.0, gt=0.0, description="Global gradient-norm clip")
    train_on_actuals: bool = Field(
        False, description="Drive training households with actual instead of forecast demand"
    )

    @model_validator(mode="after")
    def _epsilon_order(self):
        if self.epsilon_min > self.epsilon_start:
            raise ValueError("epsilon_min must not exceed epsilon_start")
        return self


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self) -> int:
        return len(self.actions)


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, state_dim: int = STATE_DIM):
        if capacity < 1:
            raise ValueError("Replay capacity must be at least 1")
        self.capacity = capacity
        self.state_dim = state_dim
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, state, action: int, reward: float, next_state, done: bool):
        state = np.asarray(state, dtype=np.float64)
        next_state = np.asarray(next_state, dtype=np.float64)
        if state.shape != (self.state_dim,) or next_state.shape != (self.state_dim,):
            raise ShapeError(f"Transition states must have shape ({self.state_dim},)")
        i = self.cursor
        self.states[i] = state
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_states[i] = next_state
        self.dones[i] = float(done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def _take(self, idx) -> Batch:
        return Batch(
            self.states[idx].copy(),
            self.actions[idx].copy(),
            self.rewards[idx].copy(),
            self.next_states[idx].copy(),
            self.dones[idx].copy(),
        )

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self.size:
            raise ValueError(f"Cannot sample {batch_size} from {self.size} transitions")
        return self._take(rng.choice(self.size, size=batch_size, replace=False))

    def contents(self) -> Batch:
        """Everything stored, oldest first."""
        start = self.cursor if self.size == self.capacity else 0
        return self._take((start + np.arange(self.size)) % self.capacity)


def epsilon_at(k: int, config: Optional[AgentConfig] = None) -> float:
    """Exploration rate after ``k`` per-episode decays."""
    config = config or AgentConfig()
    return max(config.epsilon_min, config.epsilon_start * config.epsilon_decay ** k)


def greedy_action(q_net, state) -> int:
    # argmax returns the lowest index on ties
    return int(np.argmax(q_net.predict(state)))


def select_action(q_net, state, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if rng.random() < epsilon:
        return int(rng.integers(q_net.output_dim))
    return greedy_action(q_net, state)


def ddqn_target(batch: Batch, q_net, target_net, gamma: float) -> np.ndarray:
    if len(batch) == 0:
        raise ValueError("ddqn_target needs a nonempty batch")
    best = np.argmax(q_net.predict(batch.next_states), axis=1)
    evaluated = target_net.predict(batch.next_states)[np.arange(len(batch)), best]
    return batch.rewards + gamma * (1.0 - batch.dones) * evaluated


def soft_update(target_net: DenseNet, q_net: DenseNet, tau: float) -> DenseNet:
    if target_net.shapes() != q_net.shapes():
        raise ShapeError("soft_update: target and policy networks differ in shape")
    for t, p in zip(target_net.parameters(), q_net.parameters()):
        t *= 1.0 - tau
        t += tau * p
    return target_net


@dataclass
class TrainStepResult:
    loss: float
    updated: bool
    grad_norm: float = 0.0


def train_step(
    q_net: DenseNet,
    target_net: DenseNet,
    buffer: ReplayBuffer,
    config: AgentConfig,
    rng: np.random.Generator,
    optimizer: Optional[AdamState] = None,
) -> TrainStepResult:
    """One Huber-loss Adam step on the policy network, then a soft target update.

    Only the output of the action actually taken receives gradient. Returns
    ``updated=False`` without touching anything when the buffer holds fewer
    than ``batch_size`` transitions.
    """
    if len(buffer) < config.batch_size:
        return TrainStepResult(0.0, False)
    if optimizer is None:
        optimizer = AdamState.for_params(q_net.parameters())
    batch = buffer.sample(config.batch_size, rng)
    targets = ddqn_target(batch, q_net, target_net, config.gamma)
    out, cache = dense_forward(q_net, batch.states)
    rows = np.arange(len(batch))
    loss, grad_taken = huber_loss(out[rows, batch.actions], targets, config.huber_delta)
    if not math.isfinite(loss):
        raise NumericError(f"Non-finite Q loss ({loss}); targets range {targets.min()}..{targets.max()}")
    dout = np.zeros_like(out)
    dout[rows, batch.actions] = grad_taken
    grads, norm = clip_by_global_norm(dense_backward(q_net, cache, dout).params, config.clip_norm)
    adam_update(q_net.parameters(), grads, optimizer, config.lr)
    soft_update(target_net, q_net, config.tau)
    return TrainStepResult(loss, True, norm)


def discounted_return(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """G_h = sum over k >= h of gamma^(k-h) r_k."""
    out = np.zeros(len(rewards))
    running = 0.0
    for h in reversed(range(len(rewards))):
        running = rewards[h] + gamma * running
        out[h] = running
    return out


@dataclass
class EpisodeLog:
    episode: int
    train_reward: float
    epsilon: float
    loss_mean: float
    val_reward: Optional[float] = None


@dataclass
class TrainResult:
    q_net: DenseNet
    log: List[EpisodeLog] = field(default_factory=list)
    validation: List[Tuple[int, float]] = field(default_factory=list)

    def log_rows(self) -> List[dict]:
        return [
            {
                "episode": e.episode,
                "train_reward": e.train_reward,
                "epsilon": e.epsilon,
                "loss_mean": e.loss_mean,
                "val_reward": e.val_reward if e.val_reward is not None else float("nan"),
            }
            for e in self.log
        ]


def greedy_return(q_net, env: MarketEnv, day: DayInputs) -> float:
    state = env.reset_day(day).vector()
    total = 0.0
    while True:
        result = env.advance(greedy_action(q_net, state))
        total += result.reward
        state = result.next_state.vector()
        if result.done:
            return total


def train(
    env: MarketEnv,
    days: Sequence[DayInputs],
    config: Optional[AgentConfig] = None,
    seed: int = 0,
    validation_days: Optional[Sequence[DayInputs]] = None,
    checkpoint_path=None,
) -> TrainResult:
    """Run the episode loop: sample a day, act epsilon-greedily, learn from replay."""
    config = config or AgentConfig()
    if not days:
        raise DataError("No training days to sample from")
    rng = np.random.default_rng(seed)
    q_net = DenseNet.initialize([STATE_DIM, *config.hidden, env.n_actions], rng)
    target_net = q_net.copy()
    optimizer = AdamState.for_params(q_net.parameters())
    buffer = ReplayBuffer(config.buffer_size, STATE_DIM)
    if validation_days is None:
        picks = rng.choice(len(days), size=min(config.validation_days, len(days)), replace=False)
        validation_days = [days[i] for i in sorted(picks)]
    result = TrainResult(q_net)

    for episode in range(config.episodes):
        epsilon = epsilon_at(episode, config)
        day = days[int(rng.integers(len(days)))]
        state = env.reset_day(day).vector()
        total, losses = 0.0, []
        done = False
        while not done:
            action = select_action(q_net, state, epsilon, rng)
            step = env.advance(action)
            next_state = step.next_state.vector()
            buffer.add(state, action, step.reward, next_state, step.done)
            total += step.reward
            if len(buffer) >= config.warmup:
                try:
                    update = train_step(q_net, target_net, buffer, config, rng, optimizer)
                except NumericError:
                    if checkpoint_path is not None:
                        save_agent(checkpoint_path, q_net, env, {"aborted_episode": episode + 1})
                        logger.error("Training diverged; last weights saved to %s", checkpoint_path)
                    raise
                if update.updated:
                    losses.append(update.loss)
            state = next_state
            done = step.done

        val_reward = None
        if validation_days and (episode + 1) % config.validate_every == 0:
            val_reward = float(np.mean([greedy_return(q_net, env, d) for d in validation_days]))
            result.validation.append((episode + 1, val_reward))
            logger.info(
                "episode %d reward %.2f epsilon %.3f validation %.2f", episode + 1, total, epsilon, val_reward
            )
        result.log.append(
            EpisodeLog(episode + 1, total, epsilon, float(np.mean(losses)) if losses else float("nan"), val_reward)
        )
    return result


@dataclass
class Evaluation:
    trace: EpisodeTrace
    total_reward: float
    stats: LoadStats
    baseline: LoadStats
    ledger: FinancialLedger


def evaluate(q_net, env: MarketEnv, day: DayInputs) -> Evaluation:
    """Greedy rollout over one day; the network is only read."""
    total = greedy_return(q_net, env, day)
    trace = env.trace
    return Evaluation(
        trace=trace,
        total_reward=total,
        stats=load_stats(trace.column("load_after")),
        baseline=load_stats(trace.column("load_preferred")),
        ledger=ledger(trace, env.config.rho),
    )


def save_agent(path, q_net: DenseNet, env: MarketEnv, extra: Optional[dict] = None):
    meta = {
        "model": "ddqn",
        "household_ids": env.household_ids,
        "levels": env.config.levels,
        "capacity": env.capacity,
        **(extra or {}),
    }
    return save_dense_net(path, q_net, meta)


def load_agent(path) -> Tuple[DenseNet, dict]:
    net, meta = load_dense_net(path)
    if meta.get("model") != "ddqn":
        raise DataError(f"{path} is not a DDQN policy checkpoint")
    return net, meta
