"""DDPG estimator of the kinetic multipliers.

The actor maps an observation ``(x, x_pred)`` to ``theta`` inside the box
``[theta_low, theta_high]`` through a tanh output layer and an affine map, so
every deterministic action is feasible by construction.  The critic scores
``(observation, action)`` pairs, with the action rescaled to ``[-1, 1]``.
"""

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .model import THETA_HIGH, THETA_LOW, X_S
from .nn import Adam, MlpNet

log = logging.getLogger(__name__)

OBS_DIM = 8
ACT_DIM = 6


@dataclass(frozen=True)
class AgentConfig:
    gamma: float = 0.99
    tau: float = 1e-3
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    critic_weight_decay: float = 1e-2
    batch_size: int = 64
    buffer_capacity: int = 100_000
    hidden: tuple = (64, 64)
    ou_theta: float = 0.15
    ou_sigma: float = 0.2
    w1: float = 1.0
    w2: float = 1.0
    epsilon: float = 0.03
    theta_low: float = THETA_LOW
    theta_high: float = THETA_HIGH
    obs_scale: tuple = tuple(np.concatenate([X_S, X_S]))
    obs_gain: float = 1.0
    # weight of |a|^2 (normalised action) subtracted from the actor objective
    action_reg: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("discount gamma must lie in (0, 1)")
        if not self.epsilon > 0:
            raise ValueError("error tolerance epsilon must be positive")
        if not (self.w1 > 0 and self.w2 > 0):
            raise ValueError("reward weights w1, w2 must be positive")
        if not 0 <= self.tau <= 1:
            raise ValueError("soft-update rate must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch size and buffer capacity must be positive")
        if self.action_reg < 0:
            raise ValueError("action_reg must be non-negative")
        if not self.theta_low < self.theta_high:
            raise ValueError("theta_low must be below theta_high")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "obs_scale", tuple(float(s) for s in self.obs_scale))
        if len(self.obs_scale) != OBS_DIM or min(self.obs_scale) <= 0:
            raise ValueError("obs_scale needs 8 positive entries")

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def relative_errors(x, x_pred, floor=1e-8):
    x = np.asarray(x, float)
    x_pred = np.asarray(x_pred, float)
    diff = np.abs(x - x_pred)
    scale = np.abs(x)
    # absolute error where the reference is numerically zero
    return np.where(scale < floor, diff, diff / np.where(scale < floor, 1.0, scale))


def reward(x, x_pred, cfg=AgentConfig()):
    """``w1`` per state predicted within ``epsilon``, ``-w2`` per state outside.

    A relative error exactly equal to ``epsilon`` scores zero.
    """
    e = relative_errors(x, x_pred)
    return float(cfg.w1 * np.sum(e < cfg.epsilon) - cfg.w2 * np.sum(e > cfg.epsilon))


def observation(x, x_pred):
    return np.concatenate([np.asarray(x, float), np.asarray(x_pred, float)])


def normalise_obs(obs, cfg=AgentConfig()):
    """Observation scaled by the steady-state vector and centred at 1."""
    return (np.asarray(obs, float) / np.asarray(cfg.obs_scale) - 1.0) * cfg.obs_gain


def theta_to_action(theta, cfg=AgentConfig()):
    mid = 0.5 * (cfg.theta_low + cfg.theta_high)
    half = 0.5 * (cfg.theta_high - cfg.theta_low)
    return (np.asarray(theta, float) - mid) / half


def action_to_theta(a, cfg=AgentConfig()):
    mid = 0.5 * (cfg.theta_low + cfg.theta_high)
    half = 0.5 * (cfg.theta_high - cfg.theta_low)
    # the clip only absorbs rounding at a saturated tanh
    return np.clip(mid + half * np.asarray(a, float), cfg.theta_low, cfg.theta_high)


class Actor:
    """Deterministic policy ``theta = mid + half * tanh(net(normalised obs))``."""

    def __init__(self, net, cfg=AgentConfig()):
        if net.sizes[0] != OBS_DIM or net.sizes[-1] != ACT_DIM or net.out_act != "tanh":
            raise ValueError(f"actor needs an {OBS_DIM}-in / {ACT_DIM}-out tanh net, got {net.sizes}")
        self.net = net
        self.cfg = cfg

    def normalise(self, obs):
        return normalise_obs(obs, self.cfg)

    def to_theta(self, a):
        return action_to_theta(a, self.cfg)

    def to_action(self, theta):
        return theta_to_action(theta, self.cfg)

    def raw(self, obs):
        return self.net.forward(self.normalise(obs))

    def __call__(self, obs):
        return self.to_theta(self.raw(obs))


def actor_forward(obs, net, cfg=AgentConfig()):
    return Actor(net, cfg)(obs)


def critic_input(obs_norm, action):
    return np.concatenate([np.atleast_2d(obs_norm), np.atleast_2d(action)], axis=1)


def critic_forward(obs, theta, net, cfg=AgentConfig()):
    if net.sizes[0] != OBS_DIM + ACT_DIM or net.sizes[-1] != 1:
        raise ValueError(f"critic needs a {OBS_DIM + ACT_DIM}-in / 1-out net, got {net.sizes}")
    q = net.forward(critic_input(normalise_obs(obs, cfg), theta_to_action(theta, cfg)))
    return q[:, 0] if np.ndim(obs) > 1 else float(q[0, 0])


class ReplayBuffer:
    """Fixed-capacity ring of ``(obs, action, reward, next_obs)`` transitions."""

    def __init__(self, capacity, obs_dim=OBS_DIM, act_dim=ACT_DIM):
        self.capacity = int(capacity)
        self.obs = np.empty((self.capacity, obs_dim))
        self.act = np.empty((self.capacity, act_dim))
        self.rew = np.empty(self.capacity)
        self.next_obs = np.empty((self.capacity, obs_dim))
        self.count = 0  # total insertions

    def __len__(self):
        return min(self.count, self.capacity)

    def add(self, obs, act, rew, next_obs):
        i = self.count % self.capacity
        self.obs[i] = obs
        self.act[i] = act
        self.rew[i] = rew
        self.next_obs[i] = next_obs
        self.count += 1

    def sample(self, batch, rng):
        """Uniform minibatch, without replacement inside the batch."""
        n = len(self)
        if n == 0:
            raise ValueError("cannot sample from an empty buffer")
        batch = min(batch, n)
        idx = _sample_distinct(rng, n, batch)
        return self.obs[idx], self.act[idx], self.rew[idx], self.next_obs[idx]


def _sample_distinct(rng, n, k):
    # Floyd's algorithm: k draws, no O(n) permutation
    chosen = {}
    out = np.empty(k, dtype=np.int64)
    draws = rng.integers(0, np.arange(n - k + 1, n + 1))
    for t, (j, r) in enumerate(zip(range(n - k, n), draws)):
        v = int(r)
        if v in chosen:
            v = j
        chosen[v] = True
        out[t] = v
    return out


class OUNoise:
    """Ornstein-Uhlenbeck process in normalised action units (unit time step)."""

    def __init__(self, size, theta=0.15, sigma=0.2, rng=None):
        self.size = size
        self.theta = theta
        self.sigma = sigma
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.state = np.zeros(size)

    def reset(self):
        self.state[:] = 0.0

    def sample(self):
        self.state += -self.theta * self.state + self.sigma * self.rng.standard_normal(self.size)
        return self.state.copy()


def explore(theta, noise, cfg=AgentConfig()):
    """Perturb ``theta`` with the next noise sample and clip into the box."""
    half = 0.5 * (cfg.theta_high - cfg.theta_low)
    return np.clip(np.asarray(theta, float) + half * noise.sample(), cfg.theta_low, cfg.theta_high)


class NonFiniteUpdate(FloatingPointError):
    pass


@dataclass
class UpdateStats:
    critic_loss: float
    actor_objective: float
    td_target_mean: float
    batch: int


class DDPGAgent:
    def __init__(self, cfg=AgentConfig(), rng=None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(0)
        h = cfg.hidden
        actor_net = MlpNet((OBS_DIM, *h, ACT_DIM), "tanh", self.rng)
        self.critic = MlpNet((OBS_DIM + ACT_DIM, *h, 1), "identity", self.rng)
        self.actor = Actor(actor_net, cfg)
        self.actor_target = actor_net.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(actor_net.n_params, cfg.actor_lr)
        self.critic_opt = Adam(self.critic.n_params, cfg.critic_lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.noise = OUNoise(ACT_DIM, cfg.ou_theta, cfg.ou_sigma, self.rng)
        self.sample_rng = self.rng
        self.updates = 0
        # mask of weight (not bias) entries for critic L2 decay
        self._decay_mask = np.zeros(self.critic.n_params)
        off = 0
        for a, b in zip(self.critic.sizes[:-1], self.critic.sizes[1:]):
            self._decay_mask[off:off + a * b] = 1.0
            off += a * b + b

    def act(self, obs):
        return self.actor(obs)

    def act_explore(self, obs):
        return explore(self.actor(obs), self.noise, self.cfg)

    def remember(self, obs, theta, rew, next_obs):
        self.buffer.add(self.actor.normalise(obs), self.actor.to_action(theta), rew, self.actor.normalise(next_obs))

    def update(self, batch=None):
        """One critic and one actor gradient step plus target soft updates."""
        cfg = self.cfg
        o, a, r, o2 = self.buffer.sample(batch or cfg.batch_size, self.sample_rng)
        B = len(r)
        a2 = self.actor_target.forward(o2)
        q2 = self.critic_target.forward(critic_input(o2, a2))[:, 0]
        y = r + cfg.gamma * q2

        q, cache = self.critic.forward_cache(critic_input(o, a))
        err = q[:, 0] - y
        critic_loss = float(np.mean(err * err))
        g_critic, _ = self.critic.backward(cache, (2.0 / B) * err[:, None])
        if cfg.critic_weight_decay:
            g_critic += cfg.critic_weight_decay * self._decay_mask * self.critic.params

        mu, acache = self.actor.net.forward_cache(o)
        qa, ccache = self.critic.forward_cache(critic_input(o, mu))
        _, dx = self.critic.backward(ccache, np.full((B, 1), -1.0 / B))
        da = dx[:, OBS_DIM:]
        if cfg.action_reg:
            # pull towards the nominal estimate where the critic is indifferent
            da = da + (2.0 * cfg.action_reg / B) * mu
        g_actor, _ = self.actor.net.backward(acache, da)

        if not (np.isfinite(critic_loss) and np.all(np.isfinite(g_critic)) and np.all(np.isfinite(g_actor))):
            raise NonFiniteUpdate(f"non-finite update: critic loss {critic_loss}, batch {B}")
        self.critic_opt.step(self.critic.params, g_critic)
        self.actor_opt.step(self.actor.net.params, g_actor)
        self.critic_target.soft_update(self.critic, cfg.tau)
        self.actor_target.soft_update(self.actor.net, cfg.tau)
        self.updates += 1
        return UpdateStats(critic_loss, float(np.mean(qa)), float(np.mean(y)), B)


# -- weight persistence --------------------------------------------------------
#
# File layout (all little endian):
#   8 bytes   magic b"RLEMPCW\x01"
#   4 bytes   uint32 header length H
#   H bytes   UTF-8 JSON header: format_version, kind, layer_sizes, out_act,
#             n_params, dtype ("<f8"), theta_low, theta_high, obs_scale,
#             obs_gain, config_hash, plus free-form metadata
#   8*n bytes float64 parameter vector in MlpNet.params order

MAGIC = b"RLEMPCW\x01"
FORMAT_VERSION = 1


def save_actor(path, actor, config_hash="", metadata=None):
    net = actor.net
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "actor",
        "layer_sizes": list(net.sizes),
        "out_act": net.out_act,
        "n_params": int(net.n_params),
        "dtype": "<f8",
        "theta_low": actor.cfg.theta_low,
        "theta_high": actor.cfg.theta_high,
        "obs_scale": list(actor.cfg.obs_scale),
        "obs_gain": actor.cfg.obs_gain,
        "config_hash": config_hash,
        "metadata": metadata or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(net.params.astype("<f8").tobytes())


def load_actor(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValueError(f"{path} is not an actor weight file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported weight format version {header.get('format_version')}")
    params = np.frombuffer(data[12 + hlen:], dtype="<f8")
    if params.size != header["n_params"]:
        raise ValueError("weight file truncated or corrupt")
    net = MlpNet(header["layer_sizes"], header["out_act"])
    net.set_params(params)
    sizes = header["layer_sizes"]
    cfg = AgentConfig(
        hidden=tuple(sizes[1:-1]), theta_low=header["theta_low"], theta_high=header["theta_high"],
        obs_scale=tuple(header["obs_scale"]), obs_gain=header["obs_gain"],
    )
    return Actor(net, cfg), header
