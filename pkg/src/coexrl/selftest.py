"""Built-in property checks, runnable without pytest via ``coexrl selftest``.

Each check returns ``(passed, detail)``. The oracles here are deliberately
naive (direct energy sums, per-parameter finite differences, counting) so
they stay independent of the code paths they check.
"""
from __future__ import annotations

import time

import numpy as np

from . import env as E
from .agent import (Batch, Hyperparameters, ReplayBuffer, Transition, ddqn_targets, dqn_targets,
                    epsilon_at)
from .harness import ExperimentConfig, reward_matrix, run_experiment
from .qnet import QNetwork, clone_parameters


def check_orthogonality():
    cfg = E.EnvConfig()
    rng = np.random.default_rng(1)
    for wn in range(cfg.num_channels):
        for intf in range(cfg.num_channels):
            bits = rng.integers(0, 2, cfg.symbols_per_step)
            frame = E.synthesize_step_frame(cfg, intf, wn, bits, None)
            rx = E.matched_filter_demodulate(frame, wn)
            ber = E.bit_error_rate(bits, rx)
            expected = 1.0 if wn == intf else 0.0
            if ber != expected:
                return False, f"wn={wn} interferer={intf}: BER {ber}, expected {expected}"
    return True, "all 16 channel pairs exact"


def check_parseval():
    rng = np.random.default_rng(2)
    n = 1024
    frame = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    mags = E.fft_magnitude(frame)
    lhs = np.sum((n * mags) ** 2)
    rhs = n * np.sum(np.abs(frame) ** 2)
    rel = abs(lhs - rhs) / rhs
    return rel < 1e-9, f"relative error {rel:.2e}"


def _finite_difference_errors(net, x, actions, targets, h=1e-5):
    _, grads = net.loss_and_gradients(x, actions, targets)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = net.loss_and_gradients(x, actions, targets)[0]
            flat[i] = old - h
            down = net.loss_and_gradients(x, actions, targets)[0]
            flat[i] = old
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(gflat[i]), 1e-7)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst


def check_backprop(n_nets=3):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(n_nets):
        net = QNetwork((8, 5, 3), rng=rng)
        for b in net.biases:
            b[:] = rng.normal(scale=0.1, size=b.shape)
        x = rng.standard_normal((4, 8))
        actions = rng.integers(0, 3, 4)
        targets = rng.standard_normal(4)
        worst = max(worst, _finite_difference_errors(net, x, actions, targets))
    return worst < 1e-4, f"max relative error {worst:.2e}"


def _random_batch(rng, n=16, width=12):
    return Batch(rng.random((n, width)), rng.integers(0, 4, n), rng.random(n),
                 rng.random((n, width)), rng.random(n) < 0.3)


def check_target_rules():
    rng = np.random.default_rng(4)
    online = QNetwork((12, 10, 4), rng=rng)
    target = clone_parameters(online)
    batch = _random_batch(rng)
    a = dqn_targets(batch, online, 0.96)
    b = ddqn_targets(batch, online, target, 0.96)
    if not np.array_equal(a, b):
        return False, "ddqn != dqn with equal networks"
    term = batch.terminals
    if not (np.array_equal(a[term], batch.rewards[term]) and np.array_equal(b[term], batch.rewards[term])):
        return False, "terminal targets differ from rewards"
    return True, f"{batch.rewards.size} targets equal, {int(term.sum())} terminal"


def check_epsilon():
    details = []
    ok = True
    for schedule in ("exponential", "linear"):
        h = Hyperparameters(epsilon_schedule=schedule)
        values = [epsilon_at(h, s) for s in range(0, 3001)]
        ok = ok and values[0] == 1.0 and values[2000] == 0.01 and values[-1] == 0.01
        ok = ok and all(b <= a for a, b in zip(values, values[1:]))
        details.append(f"{schedule}: eps(0)={values[0]}, eps(2000)={values[2000]}")
    return ok, "; ".join(details)


def check_replay(n_draws=20000):
    buf = ReplayBuffer(capacity=100, observation_size=1)
    for i in range(130):
        buf.push(Transition(np.array([i]), 0, 0.0, np.array([i]), False))
    order = [int(t.observation[0]) for t in buf]
    if order != list(range(30, 130)):
        return False, "ring order is not FIFO"
    rng = np.random.default_rng(5)
    counts = np.zeros(130)
    for _ in range(n_draws):
        batch = buf.sample(32, rng)
        ids = batch.observations[:, 0].astype(int)
        if np.unique(ids).size != 32:
            return False, "sampling with replacement"
        counts[ids] += 1
    counts = counts[30:]
    expected = n_draws * 32 / 100
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # 99.9% quantile of chi-square with 99 dof is ~148.2
    return chi2 < 148.2, f"chi2={chi2:.1f} (99 dof)"


def check_determinism():
    cfg = ExperimentConfig(episodes=3, training_episodes=2, repetitions=2, master_seed=11,
                           variant="ddqn")
    first = reward_matrix(run_experiment(cfg))
    second = reward_matrix(run_experiment(cfg))
    parallel = reward_matrix(run_experiment(cfg, n_jobs=2))
    ok = np.array_equal(first, second) and np.array_equal(first, parallel)
    return ok, "serial, repeat and 2-process runs identical" if ok else "runs differ"


CHECKS = {
    "subband orthogonality and collision inversion": check_orthogonality,
    "Parseval identity of fft_magnitude": check_parseval,
    "backprop vs central finite differences": check_backprop,
    "double-Q targets equal DQN targets for equal nets": check_target_rules,
    "epsilon schedule endpoints and monotonicity": check_epsilon,
    "replay FIFO and uniform sampling": check_replay,
    "bit-identical reruns incl. parallel repetitions": check_determinism,
}


def run_all(verbose=False):
    ok_all = True
    start = time.perf_counter()
    for name, check in CHECKS.items():
        ok, detail = check()
        ok_all &= ok
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    if verbose:
        print(f"{len(CHECKS)} checks in {time.perf_counter() - start:.1f}s")
    return ok_all
