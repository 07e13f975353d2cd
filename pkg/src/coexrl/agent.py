"""Central coordination point: epsilon-greedy DQN / DDQN learner with experience replay."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._rng import substream
from .qnet import AdamOptimizer, QNetwork, clone_parameters, train_minibatch

VARIANTS = ("dqn", "ddqn")
EPSILON_SCHEDULES = ("exponential", "linear")


@dataclass(frozen=True)
class Hyperparameters:
    alpha: float = 1e-4
    gamma: float = 0.96
    minibatch_size: int = 32
    epsilon_initial: float = 1.0
    epsilon_final: float = 0.01
    target_sync_period: int = 20
    replay_capacity: int = 5000
    epsilon_schedule: str = "exponential"
    # share of the training phase over which epsilon decays to its final value
    epsilon_decay_fraction: float = 0.6

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0 <= self.epsilon_final <= self.epsilon_initial <= 1:
            raise ValueError("need 0 <= epsilon_final <= epsilon_initial <= 1")
        if self.minibatch_size < 1 or self.replay_capacity < self.minibatch_size:
            raise ValueError("replay_capacity must hold at least one minibatch")
        if self.epsilon_schedule not in EPSILON_SCHEDULES:
            raise ValueError(f"epsilon_schedule must be one of {EPSILON_SCHEDULES}")
        if not 0 < self.epsilon_decay_fraction <= 1:
            raise ValueError("epsilon_decay_fraction must lie in (0, 1]")


class Transition(NamedTuple):
    observation: np.ndarray
    action: int
    reward: float
    next_observation: np.ndarray
    terminal: bool


class Batch(NamedTuple):
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    terminals: np.ndarray

    @classmethod
    def from_transitions(cls, transitions):
        ts = list(transitions)
        if not ts:
            raise ValueError("empty batch")
        return cls(
            np.array([t.observation for t in ts], dtype=float),
            np.array([t.action for t in ts], dtype=np.int64),
            np.array([t.reward for t in ts], dtype=float),
            np.array([t.next_observation for t in ts], dtype=float),
            np.array([t.terminal for t in ts], dtype=bool),
        )


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions with uniform sampling."""

    def __init__(self, capacity: int, observation_size: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._obs = np.zeros((capacity, observation_size))
        self._next_obs = np.zeros((capacity, observation_size))
        self._actions = np.zeros(capacity, dtype=np.int64)
        self._rewards = np.zeros(capacity)
        self._terminals = np.zeros(capacity, dtype=bool)
        self.n_inserted = 0

    def __len__(self):
        return min(self.n_inserted, self.capacity)

    def push(self, t: Transition) -> None:
        i = self.n_inserted % self.capacity
        self._obs[i] = t.observation
        self._next_obs[i] = t.next_observation
        self._actions[i] = t.action
        self._rewards[i] = t.reward
        self._terminals[i] = t.terminal
        self.n_inserted += 1

    def _slots(self):
        """Storage indices ordered oldest to newest."""
        size = len(self)
        start = self.n_inserted - size
        return [(start + k) % self.capacity for k in range(size)]

    def _gather(self, idx):
        return Batch(self._obs[idx], self._actions[idx], self._rewards[idx],
                     self._next_obs[idx], self._terminals[idx])

    def __iter__(self):
        for i in self._slots():
            yield Transition(self._obs[i].copy(), int(self._actions[i]), float(self._rewards[i]),
                             self._next_obs[i].copy(), bool(self._terminals[i]))

    def sample(self, k: int, rng):
        """``k`` transitions uniformly without replacement, or ``None`` if too few are stored."""
        size = len(self)
        if size < k:
            return None
        pos = rng.choice(size, size=k, replace=False)
        start = self.n_inserted - size
        return self._gather((start + pos) % self.capacity)


def epsilon_at(h: Hyperparameters, global_step: int, training_steps: int = 2000) -> float:
    """Exploration rate after ``global_step`` environment steps.

    ``"linear"`` interpolates from ``epsilon_initial`` to ``epsilon_final``
    across all ``training_steps``. ``"exponential"`` decays geometrically
    and reaches ``epsilon_final`` after ``epsilon_decay_fraction`` of them.
    Both hold ``epsilon_final`` afterwards.
    """
    if global_step < 0:
        raise ValueError("global_step must be non-negative")
    if h.epsilon_schedule == "linear":
        if global_step >= training_steps:
            return h.epsilon_final
        frac = global_step / training_steps
        return h.epsilon_initial + frac * (h.epsilon_final - h.epsilon_initial)
    decay_steps = h.epsilon_decay_fraction * training_steps
    if global_step >= decay_steps or h.epsilon_final == h.epsilon_initial:
        return h.epsilon_final
    if h.epsilon_final == 0.0:
        raise ValueError("exponential schedule needs epsilon_final > 0")
    ratio = h.epsilon_final / h.epsilon_initial
    return max(h.epsilon_final, h.epsilon_initial * ratio ** (global_step / decay_steps))


def select_action(q_values, epsilon: float, rng) -> int:
    """Epsilon-greedy choice; greedy ties go to the lowest index."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    q = np.asarray(q_values, dtype=float)
    if rng.random() < epsilon:
        return int(rng.integers(q.size))
    return int(np.argmax(q))


def dqn_targets(batch: Batch, online: QNetwork, gamma: float) -> np.ndarray:
    """``r + gamma * max_a Q_online(s', a)``, cut off at terminal transitions."""
    q_next = online.forward(batch.next_observations)
    bootstrap = q_next.max(axis=1)
    return np.where(batch.terminals, batch.rewards, batch.rewards + gamma * bootstrap)


def ddqn_targets(batch: Batch, online: QNetwork, target: QNetwork, gamma: float) -> np.ndarray:
    """Double Q-learning target: online net picks the action, target net scores it."""
    best = np.argmax(online.forward(batch.next_observations), axis=1)
    q_eval = target.forward(batch.next_observations)
    bootstrap = q_eval[np.arange(best.size), best]
    return np.where(batch.terminals, batch.rewards, batch.rewards + gamma * bootstrap)


class CCPAgent(BaseEstimator):
    """Channel-allocation agent with an estimator-style interface.

    Hyperparameters are constructor arguments (so ``get_params`` /
    ``set_params`` work); learned state lives in trailing-underscore
    attributes created by :meth:`initialize`. ``predict`` maps observations
    to greedy channel indices.

    Parameters
    ----------
    variant : {"dqn", "ddqn"}
        ``"dqn"`` bootstraps from the online network; ``"ddqn"`` keeps a
        target network synchronized every ``target_sync_period`` episodes.
    training_steps : int
        Length of the training phase in environment steps; the epsilon
        schedule is laid out over it (see :func:`epsilon_at`).
    hidden_layer_sizes : tuple of int
    random_state : int
        Master seed for weight init, exploration and replay sampling.
    """

    def __init__(self, variant="ddqn", learning_rate=1e-4, gamma=0.96, batch_size=32,
                 epsilon_initial=1.0, epsilon_final=0.01, target_sync_period=20,
                 replay_capacity=5000, training_steps=2000, epsilon_schedule="exponential",
                 epsilon_decay_fraction=0.6, hidden_layer_sizes=(256, 64, 32), random_state=0):
        self.variant = variant
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.batch_size = batch_size
        self.epsilon_initial = epsilon_initial
        self.epsilon_final = epsilon_final
        self.target_sync_period = target_sync_period
        self.replay_capacity = replay_capacity
        self.training_steps = training_steps
        self.epsilon_schedule = epsilon_schedule
        self.epsilon_decay_fraction = epsilon_decay_fraction
        self.hidden_layer_sizes = hidden_layer_sizes
        self.random_state = random_state

    @property
    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(self.learning_rate, self.gamma, self.batch_size,
                               self.epsilon_initial, self.epsilon_final,
                               self.target_sync_period, self.replay_capacity,
                               self.epsilon_schedule, self.epsilon_decay_fraction)

    def initialize(self, n_features: int, n_actions: int):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        h = self.hyperparameters
        seed = 0 if self.random_state is None else self.random_state
        dims = (n_features, *self.hidden_layer_sizes, n_actions)
        self.online_ = QNetwork(dims, rng=substream(seed, "init"))
        self.target_ = clone_parameters(self.online_) if self.variant == "ddqn" else None
        self.optimizer_ = AdamOptimizer(self.online_, h.alpha)
        self.replay_ = ReplayBuffer(h.replay_capacity, n_features)
        self._explore_rng = substream(seed, "explore")
        self._replay_rng = substream(seed, "replay")
        self.n_features_in_ = n_features
        self.n_actions_ = n_actions
        self.global_step_ = 0
        self.n_updates_ = 0
        self.episodes_done_ = 0
        return self

    @property
    def epsilon(self) -> float:
        check_is_fitted(self, "online_")
        return epsilon_at(self.hyperparameters, self.global_step_, self.training_steps)

    def decision_function(self, observations):
        """Per-channel Q-values, shape ``(n_samples, n_actions)``."""
        check_is_fitted(self, "online_")
        x = check_array(observations, ensure_2d=False)
        return self.online_.forward(x)

    def predict(self, observations):
        q = np.atleast_2d(self.decision_function(observations))
        return np.argmax(q, axis=1)

    def act(self, observation, explore=True) -> int:
        q = self.decision_function(observation)
        return select_action(q, self.epsilon if explore else 0.0, self._explore_rng)

    def compute_targets(self, batch: Batch) -> np.ndarray:
        if self.variant == "ddqn":
            return ddqn_targets(batch, self.online_, self.target_, self.gamma)
        return dqn_targets(batch, self.online_, self.gamma)

    def learn_step(self, transition: Transition, learn=True):
        """Store ``transition``, then do one minibatch update once the buffer is warm.

        Returns the minibatch loss, or ``None`` when no update was made.
        """
        check_is_fitted(self, "online_")
        self.replay_.push(transition)
        self.global_step_ += 1
        if not learn:
            return None
        batch = self.replay_.sample(self.batch_size, self._replay_rng)
        if batch is None:
            return None
        targets = self.compute_targets(batch)
        loss = train_minibatch(self.online_, self.optimizer_, batch.observations,
                               batch.actions, targets)
        self.n_updates_ += 1
        return loss

    def end_episode(self):
        self.episodes_done_ += 1
        self.sync_target(self.episodes_done_)

    def sync_target(self, episode_index: int) -> bool:
        """Copy online weights into the target net on every ``target_sync_period``-th episode."""
        if self.variant != "ddqn" or episode_index % self.target_sync_period:
            return False
        self.target_ = clone_parameters(self.online_)
        return True

    def fit(self, env, n_episodes=100):
        """Train on ``env`` for ``n_episodes`` episodes."""
        from .harness import run_episode

        self.initialize(env.observation_size, env.n_actions)
        for e in range(1, n_episodes + 1):
            run_episode(env, self, e)
        return self


class RandomAgent(BaseEstimator):
    """Uniform random channel choice; the calibration baseline."""

    def __init__(self, random_state=0):
        self.random_state = random_state

    def initialize(self, n_features: int, n_actions: int):
        self._rng = substream(0 if self.random_state is None else self.random_state, "explore")
        self.n_features_in_ = n_features
        self.n_actions_ = n_actions
        self.global_step_ = 0
        self.episodes_done_ = 0
        return self

    @property
    def epsilon(self) -> float:
        return 1.0

    def predict(self, observations):
        check_is_fitted(self, "n_actions_")
        x = np.atleast_2d(check_array(observations, ensure_2d=False))
        return self._rng.integers(self.n_actions_, size=x.shape[0])

    def act(self, observation, explore=True) -> int:
        return int(self._rng.integers(self.n_actions_))

    def learn_step(self, transition: Transition, learn=True):
        self.global_step_ += 1
        return None

    def end_episode(self):
        self.episodes_done_ += 1

    def fit(self, env, n_episodes=0):
        self.initialize(env.observation_size, env.n_actions)
        return self
