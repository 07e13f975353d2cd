"""Experiment protocol, learning-curve metrics and CSV/JSON output."""
from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._rng import derive_seed
from .agent import CCPAgent, RandomAgent, Transition
from .env import CoexistenceEnv, EnvConfig, Scenario

AGENTS = ("dqn", "ddqn", "random")
CSV_COLUMNS = ("scenario", "agent", "rep", "episode", "phase", "accumulated_reward", "epsilon_end")
BASELINE_REFERENCE = 15
MIN_FIT_POINTS = 10


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = Scenario.STATIC
    variant: str = "ddqn"
    episodes: int = 250
    training_episodes: int = 100
    steps_per_episode: int = 20
    repetitions: int = 15
    master_seed: int = 0
    learn_in_operation: bool = True

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if self.variant not in AGENTS:
            raise ValueError(f"variant must be one of {AGENTS}, got {self.variant!r}")
        if min(self.episodes, self.training_episodes, self.steps_per_episode, self.repetitions) < 1:
            raise ValueError("all counts must be >= 1")
        if self.training_episodes >= self.episodes:
            raise ValueError("training_episodes must be smaller than episodes")


@dataclass
class EpisodeRecord:
    repetition: int
    episode: int
    accumulated_reward: float
    phase: str
    epsilon_end: float
    # steps whose allocated channel was the interferer's; not written to CSV
    collisions: int = 0


def make_agent(variant, training_steps=2000, random_state=0, **params):
    if variant == "random":
        return RandomAgent(random_state=random_state)
    return CCPAgent(variant=variant, training_steps=training_steps,
                    random_state=random_state, **params)


def run_episode(env, agent, episode_index, learning_enabled=True, training_episodes=100,
                repetition=0) -> EpisodeRecord:
    """Reset ``env`` and run one full episode, learning after every step."""
    obs = env.reset()
    total = 0.0
    collisions = 0
    terminal = False
    while not terminal:
        action = agent.act(obs)
        outcome = env.step(action)
        terminal = outcome.terminal
        agent.learn_step(
            Transition(obs, action, outcome.reward, outcome.next_observation, terminal),
            learn=learning_enabled,
        )
        total += outcome.reward
        collisions += int(action == outcome.interferer_channel)
        obs = outcome.next_observation
    agent.end_episode()
    phase = "training" if episode_index <= training_episodes else "operational"
    return EpisodeRecord(repetition, episode_index, total, phase, float(agent.epsilon), collisions)


def run_repetition(config: ExperimentConfig, rep: int, agent_params=None):
    env_cfg = EnvConfig(scenario=config.scenario, steps_per_episode=config.steps_per_episode,
                        seed=derive_seed(config.master_seed, rep, "env"))
    env = CoexistenceEnv(env_cfg)
    agent = make_agent(config.variant,
                       training_steps=config.training_episodes * config.steps_per_episode,
                       random_state=derive_seed(config.master_seed, rep, "agent"),
                       **(agent_params or {}))
    agent.initialize(env.observation_size, env.n_actions)
    records = []
    for e in range(1, config.episodes + 1):
        learn = config.learn_in_operation or e <= config.training_episodes
        records.append(run_episode(env, agent, e, learn, config.training_episodes, rep))
    return records


def _run_repetition_args(args):
    return run_repetition(*args)


def run_experiment(config: ExperimentConfig, n_jobs=1, agent_params=None):
    """All repetitions of ``config``; returns a ``repetitions x episodes`` list of records.

    Each repetition owns seeds derived from ``(master_seed, rep)``, so the
    result is independent of ``n_jobs`` and of execution order.
    """
    jobs = [(config, rep, agent_params) for rep in range(config.repetitions)]
    if n_jobs == 1:
        results = [_run_repetition_args(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_run_repetition_args, jobs))
    results.sort(key=lambda recs: recs[0].repetition)
    return results


def reward_matrix(records) -> np.ndarray:
    return np.array([[r.accumulated_reward for r in row] for row in records], dtype=float)


def operational_mean(records, training_episodes=100) -> float:
    rewards = reward_matrix(records)
    if rewards.shape[1] <= training_episodes:
        raise ValueError("records contain no operational episodes")
    return float(rewards[:, training_episodes:].mean())


class Band(NamedTuple):
    lo: np.ndarray
    mean: np.ndarray
    hi: np.ndarray


def percentile_band(records, lo=10.0, hi=90.0) -> Band:
    """Per-episode percentiles across repetitions (linear interpolation) and the mean."""
    rewards = records if isinstance(records, np.ndarray) else reward_matrix(records)
    rewards = np.asarray(rewards, dtype=float)
    if rewards.ndim != 2 or rewards.shape[0] < 2:
        raise ValueError("need at least two repetitions")
    return Band(np.percentile(rewards, lo, axis=0), rewards.mean(axis=0),
                np.percentile(rewards, hi, axis=0))


class FitResult(NamedTuple):
    a: float
    b: float
    tau: float
    rise_time: float
    residual: float
    converged: bool
    degenerate: bool


def _linear_subsolve(t, y, tau):
    basis = np.column_stack([np.ones_like(t), -np.exp(-t / tau)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    sse = float(np.sum((basis @ coef - y) ** 2))
    return coef[0], coef[1], sse


def _golden_section(f, lo, hi, tol=1e-10, max_iter=200):
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    c = hi - inv_phi * (hi - lo)
    d = lo + inv_phi * (hi - lo)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if hi - lo < tol:
            break
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - inv_phi * (hi - lo)
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            d = lo + inv_phi * (hi - lo)
            fd = f(d)
    return (lo + hi) / 2.0


class ExponentialLearningCurve(RegressorMixin, BaseEstimator):
    """Least-squares fit of ``y = a - b * exp(-t / tau)``.

    ``tau`` is found by golden-section search on ``log(tau)`` (bracketed by
    a coarse grid); ``a`` and ``b`` are solved linearly for each candidate.
    A minimum on the search boundary marks the fit as not converged.

    Parameters
    ----------
    tau_bounds : (float, float)
        Search interval for the time constant, in units of ``t``.
    n_grid : int
        Coarse grid points used to bracket the minimum.
    """

    def __init__(self, tau_bounds=(0.1, 1e4), n_grid=200):
        self.tau_bounds = tau_bounds
        self.n_grid = n_grid

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=MIN_FIT_POINTS, y_numeric=True)
        t = X[:, 0].astype(float)
        y = y.astype(float)

        def sse(log_tau):
            return _linear_subsolve(t, y, math.exp(log_tau))[2]

        lo, hi = (math.log(v) for v in self.tau_bounds)
        grid = np.linspace(lo, hi, self.n_grid)
        errs = np.array([sse(g) for g in grid])
        k = int(np.argmin(errs))
        bracket_lo = grid[max(k - 1, 0)]
        bracket_hi = grid[min(k + 1, grid.size - 1)]
        log_tau = _golden_section(sse, bracket_lo, bracket_hi)
        tau = math.exp(log_tau)
        a, b, err = _linear_subsolve(t, y, tau)

        span = hi - lo
        self.converged_ = bool(lo + 1e-3 * span < log_tau < hi - 1e-3 * span)
        scale = max(float(np.ptp(y)), float(np.abs(y).max()), 1e-12)
        self.degenerate_ = bool(abs(b) < 1e-6 * scale or not self.converged_)
        self.a_, self.b_, self.tau_ = float(a), float(b), tau
        self.residual_ = err
        self.rise_time_ = tau * math.log(9.0)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "tau_")
        t = check_array(X)[:, 0]
        return self.a_ - self.b_ * np.exp(-t / self.tau_)

    def result(self) -> FitResult:
        check_is_fitted(self, "tau_")
        return FitResult(self.a_, self.b_, self.tau_, self.rise_time_, self.residual_,
                         self.converged_, self.degenerate_)


def fit_exponential(training_curve, episodes=None) -> FitResult:
    """Fit the per-episode mean reward curve; episodes default to 1..len(curve)."""
    y = np.asarray(training_curve, dtype=float)
    t = np.arange(1, y.size + 1) if episodes is None else np.asarray(episodes, dtype=float)
    return ExponentialLearningCurve().fit(t.reshape(-1, 1), y).result()


def write_csv(records, path, scenario, agent) -> None:
    scenario = Scenario(scenario).value
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for row in records:
                for r in row:
                    w.writerow([scenario, agent, r.repetition, r.episode, r.phase,
                                repr(float(r.accumulated_reward)), repr(float(r.epsilon_end))])
    except OSError as exc:
        raise OSError(f"cannot write records to {path}: {exc}") from exc


def read_csv(path):
    """Parse a records CSV; returns ``(scenario, agent, records)``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise OSError(f"cannot read records from {path}: {exc}") from exc
    if not rows:
        raise ValueError(f"{path}: no records")
    by_rep = {}
    for row in rows:
        rec = EpisodeRecord(int(row["rep"]), int(row["episode"]), float(row["accumulated_reward"]),
                            row["phase"], float(row["epsilon_end"]))
        by_rep.setdefault(rec.repetition, []).append(rec)
    records = [sorted(by_rep[k], key=lambda r: r.episode) for k in sorted(by_rep)]
    return rows[0]["scenario"], rows[0]["agent"], records


def summarize(records, scenario, agent) -> dict:
    training_episodes = sum(r.phase == "training" for r in records[0])
    rewards = reward_matrix(records)
    operational = rewards[:, training_episodes:]
    curve = rewards[:, :training_episodes].mean(axis=0)
    fit = fit_exponential(curve) if curve.size >= MIN_FIT_POINTS else None
    return {
        "scenario": Scenario(scenario).value,
        "agent": agent,
        "repetitions": int(rewards.shape[0]),
        "episodes": int(rewards.shape[1]),
        "training_episodes": int(training_episodes),
        "mean_operational_reward": float(operational.mean()),
        "std_operational_reward": float(operational.std()),
        "rise_time_episodes": fit.rise_time if fit else None,
        "fit": {"a": fit.a, "b": fit.b, "tau": fit.tau,
                "converged": fit.converged, "degenerate": fit.degenerate} if fit else None,
        "baseline_reference": BASELINE_REFERENCE,
    }


def write_summary(summary: dict, json_path) -> None:
    try:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write summary to {json_path}: {exc}") from exc


def run_and_write(config: ExperimentConfig, out_dir, n_jobs=1):
    os.makedirs(out_dir, exist_ok=True)
    records = run_experiment(config, n_jobs=n_jobs)
    csv_path = os.path.join(out_dir, "records.csv")
    write_csv(records, csv_path, config.scenario, config.variant)
    # summary is computed from the parsed CSV so `report` reproduces it exactly
    scenario, agent, parsed = read_csv(csv_path)
    summary = summarize(parsed, scenario, agent)
    write_summary(summary, os.path.join(out_dir, "summary.json"))
    return records, summary
