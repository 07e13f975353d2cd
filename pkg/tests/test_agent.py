import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from sklearn.base import clone

from coexrl.agent import (Batch, CCPAgent, Hyperparameters, RandomAgent, ReplayBuffer, Transition,
                          ddqn_targets, dqn_targets, epsilon_at, select_action)
from coexrl.qnet import QNetwork, clone_parameters


class FixedQ:
    """Stand-in network returning preset Q-values for every input."""

    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)

    def forward(self, x):
        return np.tile(self.q, (np.atleast_2d(x).shape[0], 1))


def one_batch(reward, terminal, width=4):
    return Batch(np.zeros((1, width)), np.array([0]), np.array([reward]),
                 np.zeros((1, width)), np.array([terminal]))


def test_hyperparameter_defaults_and_validation():
    h = Hyperparameters()
    assert (h.alpha, h.gamma, h.minibatch_size) == (1e-4, 0.96, 32)
    assert (h.epsilon_initial, h.epsilon_final, h.target_sync_period) == (1.0, 0.01, 20)
    with pytest.raises(ValueError):
        Hyperparameters(gamma=1.0)
    with pytest.raises(ValueError):
        Hyperparameters(epsilon_initial=0.005)
    with pytest.raises(ValueError):
        Hyperparameters(epsilon_schedule="cosine")


def test_epsilon_linear_schedule_points():
    h = Hyperparameters(epsilon_schedule="linear")
    assert epsilon_at(h, 0) == 1.0
    assert epsilon_at(h, 2000) == 0.01
    assert epsilon_at(h, 10_000) == 0.01
    # linear interpolation: 1 + (1000/2000) * (0.01 - 1)
    assert epsilon_at(h, 1000) == pytest.approx(0.505)
    with pytest.raises(ValueError):
        epsilon_at(h, -1)


def test_epsilon_exponential_schedule_points():
    h = Hyperparameters()
    assert h.epsilon_schedule == "exponential"
    assert epsilon_at(h, 0) == 1.0
    # floor reached after 0.6 * 2000 steps; halfway there eps = 0.01 ** 0.5
    assert epsilon_at(h, 600) == pytest.approx(0.1)
    assert epsilon_at(h, 1200) == 0.01
    assert epsilon_at(h, 2000) == 0.01
    assert epsilon_at(h, 10_000) == 0.01
    assert epsilon_at(h, 300, training_steps=1000) == pytest.approx(0.1)


@pytest.mark.parametrize("schedule", ["exponential", "linear"])
@given(a=st.integers(0, 5000), b=st.integers(0, 5000))
def test_epsilon_monotone(schedule, a, b):
    h = Hyperparameters(epsilon_schedule=schedule)
    lo, hi = sorted((a, b))
    assert epsilon_at(h, hi) <= epsilon_at(h, lo)
    assert 0.01 <= epsilon_at(h, hi) <= 1.0


def test_select_action_greedy_and_ties():
    rng = np.random.default_rng(0)
    assert select_action([0.1, 0.9, 0.3, 0.2], 0.0, rng) == 1
    assert select_action([0.5, 0.5, 0.1, 0.1], 0.0, rng) == 0


def test_select_action_full_exploration_uniform():
    rng = np.random.default_rng(1)
    draws = [select_action([0.0, 9.0, 0.0, 0.0], 1.0, rng) for _ in range(10_000)]
    assert stats.chisquare(np.bincount(draws, minlength=4)).pvalue > 0.01


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=4, max_size=4), st.floats(-50, 50))
def test_argmax_shift_invariance(q, c):
    rng = np.random.default_rng(0)
    shifted = [v + c for v in q]
    # the shift may merge near-ties through rounding, so compare on the shifted ranking
    assert select_action(shifted, 0.0, rng) == int(np.argmax(shifted))
    if len(set(q)) == 4 and min(abs(x - y) for i, x in enumerate(q) for y in q[i + 1:]) > 1e-9:
        assert select_action(shifted, 0.0, rng) == select_action(q, 0.0, rng)


def _t(i, obs_size=1):
    return Transition(np.full(obs_size, float(i)), i % 4, 0.5, np.full(obs_size, i + 0.5), False)


def test_replay_ring_semantics():
    buf = ReplayBuffer(5000, 1)
    buf.push(_t(0))
    assert len(buf) == 1
    for i in range(1, 5001):
        buf.push(_t(i))
    assert len(buf) == 5000
    ids = [t.observation[0] for t in buf]
    assert ids[0] == 1.0 and 0.0 not in ids
    assert ids == sorted(ids)


def test_replay_sample_gate_and_full_draw():
    buf = ReplayBuffer(100, 1)
    for i in range(31):
        buf.push(_t(i))
    rng = np.random.default_rng(2)
    assert buf.sample(32, rng) is None
    buf.push(_t(31))
    batch = buf.sample(32, rng)
    assert sorted(batch.observations[:, 0]) == list(range(32))


def test_replay_sampling_frequencies():
    buf = ReplayBuffer(100, 1)
    for i in range(100):
        buf.push(_t(i))
    rng = np.random.default_rng(3)
    n = 100_000
    counts = np.zeros(100)
    for _ in range(n):
        counts[buf.sample(32, rng).observations[:, 0].astype(int)] += 1
    p = 32 / 100
    sigma = np.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) < 4 * sigma)
    # aggregate check; 3 sigma per cell is exceeded by chance in ~0.3% of 100 cells
    assert np.mean(np.abs(counts - n * p) < 3 * sigma) > 0.97


def test_dqn_targets_examples():
    assert dqn_targets(one_batch(0.7, True), FixedQ([5, 5, 5, 5]), 0.96)[0] == 0.7
    y = dqn_targets(one_batch(1.0, False), FixedQ([0.1, 0.5, 0.2, 0.0]), 0.96)[0]
    assert y == pytest.approx(1.48)
    assert dqn_targets(one_batch(0.3, False), FixedQ([9, 9, 9, 9]), 0.0)[0] == 0.3


def test_ddqn_decouples_selection_and_evaluation():
    online = FixedQ([0.0, 0.1, 0.7, 0.2])   # argmax 2
    target = FixedQ([0.9, 0.8, 0.1, 0.0])
    y = ddqn_targets(one_batch(1.0, False), online, target, 0.96)[0]
    assert y == pytest.approx(1.096)
    assert dqn_targets(one_batch(1.0, False), target, 0.96)[0] == pytest.approx(1.864)
    assert ddqn_targets(one_batch(0.4, True), online, target, 0.96)[0] == 0.4


def test_ddqn_equals_dqn_for_synced_networks():
    rng = np.random.default_rng(4)
    net = QNetwork((6, 8, 4), rng=rng)
    batch = Batch(rng.random((10, 6)), rng.integers(0, 4, 10), rng.random(10),
                  rng.random((10, 6)), rng.random(10) < 0.5)
    np.testing.assert_array_equal(dqn_targets(batch, net, 0.96),
                                  ddqn_targets(batch, net, clone_parameters(net), 0.96))


def test_targets_bounded_for_bounded_q():
    rng = np.random.default_rng(5)
    for _ in range(100):
        q = rng.uniform(0, 25, 4)
        r = rng.random()
        for y in (dqn_targets(one_batch(r, False), FixedQ(q), 0.96)[0],
                  ddqn_targets(one_batch(r, False), FixedQ(q[::-1]), FixedQ(q), 0.96)[0]):
            assert 0.0 <= y <= 25.0


def small_agent(variant="ddqn", **kw):
    agent = CCPAgent(variant=variant, hidden_layer_sizes=(8,), random_state=1, **kw)
    return agent.initialize(6, 4)


def test_estimator_params():
    agent = CCPAgent(variant="dqn", gamma=0.9)
    params = agent.get_params()
    assert params["variant"] == "dqn" and params["gamma"] == 0.9
    assert clone(agent).get_params() == params
    agent.set_params(gamma=0.5)
    assert agent.hyperparameters.gamma == 0.5
    with pytest.raises(ValueError):
        CCPAgent(variant="sarsa").initialize(4, 2)


def test_warmup_gate_and_one_update_per_step():
    agent = small_agent()
    rng = np.random.default_rng(6)
    for i in range(31):
        t = Transition(rng.random(6), int(rng.integers(4)), 1.0, rng.random(6), False)
        assert agent.learn_step(t) is None
    assert agent.n_updates_ == 0
    t = Transition(rng.random(6), 0, 1.0, rng.random(6), False)
    assert agent.learn_step(t) is not None
    assert agent.n_updates_ == 1
    agent.learn_step(t)
    assert agent.n_updates_ == 2


def test_dqn_never_touches_target_network(monkeypatch):
    agent = small_agent("dqn")
    assert agent.target_ is None

    def boom(*args, **kwargs):
        raise AssertionError("target rule used by DQN")

    monkeypatch.setattr("coexrl.agent.ddqn_targets", boom)
    rng = np.random.default_rng(7)
    for _ in range(40):
        agent.learn_step(Transition(rng.random(6), 1, 0.5, rng.random(6), False))
    assert agent.sync_target(20) is False
    assert agent.target_ is None


def test_target_sync_period():
    agent = small_agent()
    rng = np.random.default_rng(8)
    x = rng.random((5, 6))
    frozen = agent.target_.forward(x)
    for episode in range(1, 20):
        for _ in range(3):
            agent.learn_step(Transition(rng.random(6), 2, 1.0, rng.random(6), False))
        agent.end_episode()
        np.testing.assert_array_equal(agent.target_.forward(x), frozen)
    assert agent.episodes_done_ == 19
    assert not np.array_equal(agent.online_.forward(x), frozen)
    agent.end_episode()
    np.testing.assert_array_equal(agent.target_.forward(x), agent.online_.forward(x))


def test_predict_and_act():
    agent = small_agent()
    x = np.random.default_rng(9).random((7, 6))
    pred = agent.predict(x)
    np.testing.assert_array_equal(pred, np.argmax(agent.decision_function(x), axis=1))
    assert agent.act(x[0], explore=False) == pred[0]
    assert agent.epsilon == 1.0


def test_random_agent_interface():
    agent = RandomAgent(random_state=3).initialize(6, 4)
    acts = [agent.act(np.zeros(6)) for _ in range(4000)]
    assert stats.chisquare(np.bincount(acts, minlength=4)).pvalue > 0.01
    assert agent.learn_step(None) is None and agent.epsilon == 1.0
    assert agent.predict(np.zeros((3, 6))).shape == (3,)
