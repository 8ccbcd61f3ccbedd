import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlempc.ddpg import (
    ACT_DIM, OBS_DIM, AgentConfig, DDPGAgent, OUNoise, ReplayBuffer, action_to_theta, critic_forward, explore,
    load_actor, relative_errors, reward, save_actor, theta_to_action,
)
from rlempc.model import X_S
from rlempc.nn import MlpNet

obs_like = st.lists(st.floats(0.0, 2.0), min_size=8, max_size=8).map(np.array)


def test_reward_counts_states():
    x = np.array([1.0, 1.0, 1.0, 1.0])
    assert reward(x, x) == 4.0
    assert reward(x, x * np.array([1.0, 1.0, 1.1, 1.0])) == 2.0
    assert reward(x, x * 1.5) == -4.0


def test_reward_zero_at_exact_tolerance():
    cfg = AgentConfig(epsilon=0.5)
    x = np.array([2.0, 2.0, 2.0, 2.0])
    assert reward(x, np.array([3.0, 2.0, 2.0, 2.0]), cfg) == 3.0


def test_relative_error_zero_reference():
    e = relative_errors(np.array([0.0, 1.0]), np.array([1e-3, 1.0]))
    np.testing.assert_allclose(e, [1e-3, 0.0])


@given(st.lists(st.floats(-1, 1), min_size=6, max_size=6).map(np.array))
def test_action_theta_round_trip(a):
    np.testing.assert_allclose(theta_to_action(action_to_theta(a)), a, atol=1e-12)


@given(obs_like, st.integers(0, 1000))
def test_actor_output_in_box(obs, seed):
    agent = DDPGAgent(AgentConfig(hidden=(8, 8)), np.random.default_rng(seed))
    agent.actor.net.params *= 50.0  # saturate the tanh
    th = agent.act(obs)
    assert th.shape == (6,)
    assert np.all((th >= 0.9) & (th <= 1.1))
    th = agent.act_explore(obs)
    assert np.all((th >= 0.9) & (th <= 1.1))


def test_explore_clips():
    noise = OUNoise(6, sigma=50.0, rng=np.random.default_rng(0))
    th = explore(np.ones(6), noise)
    assert np.all((th >= 0.9) & (th <= 1.1))


def test_ou_noise_reset_and_mean_reversion():
    n = OUNoise(3, theta=1.0, sigma=0.0)
    n.state[:] = 5.0
    np.testing.assert_array_equal(n.sample(), 0.0)
    n.state[:] = 5.0
    n.reset()
    np.testing.assert_array_equal(n.state, 0.0)


def test_buffer_ring_and_distinct_sampling():
    buf = ReplayBuffer(5)
    for i in range(8):
        buf.add(np.full(OBS_DIM, i), np.zeros(ACT_DIM), float(i), np.zeros(OBS_DIM))
    assert len(buf) == 5 and buf.count == 8
    assert set(buf.rew) == {3.0, 4.0, 5.0, 6.0, 7.0}
    o, a, r, o2 = buf.sample(5, np.random.default_rng(0))
    assert len(set(r)) == 5
    with pytest.raises(ValueError):
        ReplayBuffer(3).sample(1, np.random.default_rng(0))


@given(st.integers(1, 200), st.integers(1, 64), st.integers(0, 10**6))
def test_sample_indices_distinct_and_in_range(n, k, seed):
    buf = ReplayBuffer(n)
    for i in range(n):
        buf.add(np.zeros(OBS_DIM), np.zeros(ACT_DIM), float(i), np.zeros(OBS_DIM))
    _, _, r, _ = buf.sample(k, np.random.default_rng(seed))
    assert len(r) == min(k, n) and len(set(r)) == len(r)


def make_agent(**kw):
    agent = DDPGAgent(AgentConfig(hidden=(16, 16), **kw), np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for _ in range(100):
        o = np.concatenate([X_S, X_S]) * (1 + 0.05 * rng.standard_normal(8))
        agent.remember(o, rng.uniform(0.9, 1.1, 6), rng.choice([-4.0, 0.0, 4.0]), o)
    return agent


def test_update_moves_all_networks():
    agent = make_agent()
    before = [agent.actor.net.params.copy(), agent.critic.params.copy(), agent.actor_target.params.copy(),
              agent.critic_target.params.copy()]
    stats = agent.update()
    after = [agent.actor.net.params, agent.critic.params, agent.actor_target.params, agent.critic_target.params]
    assert all(not np.array_equal(a, b) for a, b in zip(before, after))
    assert np.isfinite(stats.critic_loss) and stats.batch == 64


def test_critic_learns_constant_reward():
    agent = DDPGAgent(AgentConfig(hidden=(16, 16), gamma=0.5, critic_lr=1e-2, critic_weight_decay=0.0),
                      np.random.default_rng(0))
    o = np.concatenate([X_S, X_S])
    for _ in range(64):
        agent.remember(o, np.ones(6), 1.0, o)
    losses = [agent.update().critic_loss for _ in range(300)]
    assert losses[-1] < 0.1 * losses[0]


def test_action_regulariser_pulls_towards_centre():
    a = make_agent(action_reg=100.0, actor_lr=1e-2)
    a.actor.net.b[-1][:] = 1.0  # push the actor toward the top of the box
    o = np.concatenate([X_S, X_S])
    start = np.abs(a.actor.to_action(a.act(o))).mean()
    for _ in range(50):
        a.update()
    assert np.abs(a.actor.to_action(a.act(o))).mean() < start
    with pytest.raises(ValueError):
        AgentConfig(action_reg=-1.0)


def test_critic_forward_shapes():
    net = MlpNet((14, 8, 1), rng=np.random.default_rng(0))
    o = np.concatenate([X_S, X_S])
    assert isinstance(critic_forward(o, np.ones(6), net), float)
    assert critic_forward(np.tile(o, (3, 1)), np.ones((3, 6)), net).shape == (3,)
    with pytest.raises(ValueError):
        critic_forward(o, np.ones(6), MlpNet((8, 1)))


def test_weight_file_round_trip(tmp_path):
    agent = DDPGAgent(AgentConfig(), np.random.default_rng(3))
    path = tmp_path / "actor.bin"
    save_actor(path, agent.actor, "abc", {"seed": 3})
    raw = path.read_bytes()
    actor, header = load_actor(path)
    assert header["config_hash"] == "abc" and header["metadata"] == {"seed": 3}
    np.testing.assert_array_equal(actor.net.params, agent.actor.net.params)
    o = np.concatenate([X_S, X_S]) * 1.01
    np.testing.assert_array_equal(actor(o), agent.act(o))
    assert path.read_bytes() == raw  # loading never rewrites


def test_weight_file_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"not a weight file")
    with pytest.raises(ValueError):
        load_actor(p)
    agent = DDPGAgent(AgentConfig(), np.random.default_rng(3))
    save_actor(p, agent.actor)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError):
        load_actor(p)


def test_config_validation():
    for bad in (dict(gamma=1.0), dict(epsilon=0.0), dict(w1=0.0), dict(tau=2.0), dict(batch_size=0),
                dict(theta_low=1.2), dict(obs_scale=(1.0,))):
        with pytest.raises(ValueError):
            AgentConfig(**bad)


def test_zero_weight_nets():
    actor_net = MlpNet((8, 4, 6), "tanh")
    critic_net = MlpNet((14, 4, 1))
    o = np.concatenate([X_S, X_S])
    from rlempc.ddpg import actor_forward
    np.testing.assert_array_equal(actor_forward(o, actor_net), np.ones(6))
    assert critic_forward(o, np.ones(6), critic_net) == 0.0


def test_actor_matches_straight_line_forward():
    rng = np.random.default_rng(9)
    agent = DDPGAgent(AgentConfig(hidden=(16, 16)), rng)
    net = agent.actor.net
    o = rng.uniform(0.5, 1.5, 8)
    z = o / np.concatenate([X_S, X_S]) - 1.0
    h1 = np.maximum(z @ net.W[0] + net.b[0], 0)
    h2 = np.maximum(h1 @ net.W[1] + net.b[1], 0)
    theta = 1.0 + 0.1 * np.tanh(h2 @ net.W[2] + net.b[2])
    np.testing.assert_allclose(agent.act(o), theta, atol=1e-12)


def test_zero_upstream_gives_zero_gradient():
    net = MlpNet((8, 16, 6), "tanh", np.random.default_rng(0))
    _, cache = net.forward_cache(np.ones((3, 8)))
    g, dx = net.backward(cache, np.zeros((3, 6)))
    assert not g.any() and not dx.any()


def test_td_target_is_reward_when_gamma_zero():
    agent = DDPGAgent(AgentConfig(hidden=(8, 8), gamma=1e-300), np.random.default_rng(0))
    o = np.concatenate([X_S, X_S])
    agent.remember(o, np.ones(6), 3.0, o)
    stats = agent.update()
    assert stats.batch == 1 and stats.td_target_mean == pytest.approx(3.0, abs=1e-12)


def test_replay_sampling_reproducible():
    def batches(seed):
        buf = ReplayBuffer(50)
        for i in range(50):
            buf.add(np.zeros(OBS_DIM), np.zeros(ACT_DIM), float(i), np.zeros(OBS_DIM))
        rng = np.random.default_rng(seed)
        return [buf.sample(8, rng)[2] for _ in range(5)]
    assert all(np.array_equal(a, b) for a, b in zip(batches(4), batches(4)))


def test_zero_noise_explore_is_identity():
    th = np.linspace(0.92, 1.08, 6)
    np.testing.assert_array_equal(explore(th, OUNoise(6, sigma=0.0)), th)


@given(obs_like, obs_like)
def test_reward_bounds(x, y):
    x = x + 0.1
    assert -4.0 <= reward(x[:4], y[:4]) <= 4.0
