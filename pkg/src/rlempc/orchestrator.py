"""Training (Algorithm 1) and deployment (Algorithm 2) loops."""

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .ddpg import ACT_DIM, AgentConfig, DDPGAgent, NonFiniteUpdate, observation, reward
from .empc import EmpcConfig, EmpcSolver, stage_cost
from .metrics import run_metrics
from .model import DEFAULT_CONSTANTS, THETA_NOMINAL, U_HIGH, U_LOW, X_S, DomainError
from .scenario import ScenarioState
from .sim import IntegratorConfig, NoiseConfig, Plant, Trajectory

log = logging.getLogger(__name__)

#: subsystems that draw randomness, in SeedSequence spawn order
STREAMS = ("networks", "exploration", "replay", "resets", "plant")


def seed_streams(seed):
    """Independent generators for every subsystem from one root seed."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


class TrainingFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    episodes: int = 200
    steps_per_episode: int = 400
    x0_spread: float = 0.1
    model_theta_low: float = 0.9
    model_theta_high: float = 1.1
    plant_theta_low: float = 0.9
    plant_theta_high: float = 1.1
    # "episode": one plant draw per episode; "step": a fresh draw every period
    plant_resample: str = "episode"
    max_abort_fraction: float = 0.1
    warmup_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 1 or self.steps_per_episode < 1:
            raise ValueError("need F >= 1 episodes and T_tr >= 1 steps")
        if not 0 <= self.x0_spread < 1:
            raise ValueError("x0_spread must lie in [0, 1)")
        if self.plant_resample not in ("episode", "step"):
            raise ValueError("plant_resample must be 'episode' or 'step'")
        if not (self.model_theta_low <= self.model_theta_high and self.plant_theta_low <= self.plant_theta_high):
            raise ValueError("reset boxes need low <= high")


@dataclass
class TrainingResult:
    agent: DDPGAgent
    episode_rewards: np.ndarray
    aborted: list = field(default_factory=list)
    solves: int = 0
    plant_steps: int = 0
    updates: int = 0
    seconds: float = 0.0

    @property
    def actor(self):
        return self.agent.actor

    def slope(self):
        return reward_slope(self.episode_rewards)


def reward_slope(curve):
    """Least-squares slope of a reward curve against episode index."""
    y = np.asarray(curve, float)
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return float("nan")
    x = np.arange(len(y))[ok]
    return float(np.polyfit(x, y[ok], 1)[0])


class _TrainingPlant:
    """Scenario stand-in used during training: plant kinetics from a reset box."""

    def __init__(self, theta):
        self.theta = np.array(theta, float)
        self.noise = NoiseConfig()

    def theta_at(self, t):
        return self.theta

    def plant_input(self, u, t):
        return np.asarray(u, float)


def train(cfg=TrainingConfig(), empc=EmpcConfig(), agent_cfg=AgentConfig(), integrator=IntegratorConfig(),
          constants=DEFAULT_CONSTANTS, progress=None):
    """Run Algorithm 1 and return the agent with its per-episode average reward."""
    rngs = seed_streams(cfg.seed)
    agent = DDPGAgent(agent_cfg, rngs["networks"])
    agent.noise.rng = rngs["exploration"]
    agent.sample_rng = rngs["replay"]
    resets = rngs["resets"]
    solver = EmpcSolver(empc, constants)
    period = empc.sampling_period
    curve, aborted = [], []
    solves = steps = 0
    t_start = time.perf_counter()

    for ep in range(cfg.episodes):
        # step 3: reset the environment
        theta = resets.uniform(cfg.model_theta_low, cfg.model_theta_high, ACT_DIM)
        x = X_S * (1.0 + resets.uniform(-cfg.x0_spread, cfg.x0_spread, 4))
        env = _TrainingPlant(resets.uniform(cfg.plant_theta_low, cfg.plant_theta_high, ACT_DIM))
        plant = Plant(x, env, integrator, constants, rngs["plant"])
        agent.noise.reset()
        obs = observation(x, x)
        warm = None
        rewards = []
        try:
            for k in range(cfg.steps_per_episode):
                t = k * period
                if cfg.plant_resample == "step" and k:
                    env.theta = resets.uniform(cfg.plant_theta_low, cfg.plant_theta_high, ACT_DIM)
                # step 5: solve the EMPC with the current estimate
                res = solver.solve(x, theta, warm)
                solves += 1
                warm = res.plan.shifted()
                # steps 6-7: apply the first move, measure, predict
                x_next = plant.step(res.plan.first, t)
                steps += 1
                x_pred = res.x_next
                r = reward(x_next, x_pred, agent_cfg)
                obs_next = observation(x_next, x_pred)
                agent.remember(obs, theta, r, obs_next)
                rewards.append(r)
                # step 8: inner DDPG update
                if agent.buffer.count > cfg.warmup_steps:
                    agent.update()
                # step 9: next estimate from the current policy
                theta = agent.act_explore(obs_next)
                x, obs = x_next, obs_next
        except (DomainError, NonFiniteUpdate) as exc:
            aborted.append(ep)
            log.warning("episode %d aborted at step %d: %s", ep, len(rewards), exc)
            if isinstance(exc, NonFiniteUpdate):
                raise TrainingFailed(str(exc)) from exc
        curve.append(float(np.mean(rewards)) if rewards else float("nan"))
        if progress is not None:
            progress(ep, curve[-1])
        if len(aborted) > cfg.max_abort_fraction * cfg.episodes:
            raise TrainingFailed(f"{len(aborted)} of {ep + 1} episodes aborted")

    return TrainingResult(agent, np.array(curve), aborted, solves, steps, agent.updates,
                          time.perf_counter() - t_start)


# -- estimators used in deployment ---------------------------------------------

class PolicyEstimator:
    """Trained actor: ``theta(t_k+1) = pi(x(t_k+1), x_pred(t_k+1))``."""

    kind = "trained"

    def __init__(self, actor, theta0=THETA_NOMINAL):
        self.actor = actor
        self.theta0 = np.array(theta0, float)

    def initial(self, scenario):
        return self.theta0.copy()

    def __call__(self, obs, t):
        return self.actor(obs)


class FrozenEstimator:
    """EMPC alone: the estimate never moves from its initial value."""

    kind = "frozen"

    def __init__(self, theta=THETA_NOMINAL):
        self.theta = np.array(theta, float)

    def initial(self, scenario):
        return self.theta.copy()

    def __call__(self, obs, t):
        return self.theta.copy()


class OracleEstimator:
    """Reports the true kinetics of the upcoming period."""

    kind = "oracle"

    def __init__(self, scenario):
        self.scenario = scenario

    def initial(self, scenario):
        return scenario.theta_at(0.0)

    def __call__(self, obs, t):
        return self.scenario.theta_at(t)


def empc_for(scenario, base=EmpcConfig()):
    """Controller layout matching the scenario's manipulated set."""
    if tuple(scenario.manipulated) == tuple(base.manipulated):
        return base
    kind = "yield_per_feed" if len(scenario.manipulated) > 1 else base.stage_cost
    return replace(base, manipulated=tuple(scenario.manipulated), stage_cost=kind,
                   u_low=tuple(U_LOW), u_high=tuple(U_HIGH))


@dataclass
class DeployResult:
    trajectory: Trajectory
    metrics: object
    solver_failures: int = 0
    clamp_events: int = 0
    v_values: list = field(default_factory=list)


def deploy(estimator, scenario=ScenarioState(), empc=None, integrator=IntegratorConfig(), x0=X_S,
           agent_cfg=AgentConfig(), constants=DEFAULT_CONSTANTS, certificate=None, seed=0):
    """Run Algorithm 2 over ``[0, t_final]`` and return trajectory and metrics.

    ``estimator`` is one of :class:`PolicyEstimator`, :class:`FrozenEstimator`
    or :class:`OracleEstimator`; a bare actor is wrapped automatically.
    """
    if not hasattr(estimator, "initial"):
        estimator = PolicyEstimator(estimator)
    empc = empc_for(scenario, empc or EmpcConfig())
    solver = EmpcSolver(empc, constants, certificate)
    period = empc.sampling_period
    if abs(integrator.sampling_period - period) > 1e-12:
        raise ValueError("plant and controller sampling periods differ")
    K = int(round(scenario.t_final / period))
    rngs = seed_streams(seed)
    plant = Plant(x0, scenario, integrator, constants, rngs["plant"])

    traj = Trajectory()
    x = plant.measure()
    x_pred = x.copy()
    theta = np.asarray(estimator.initial(scenario), float)
    warm = None
    u_eff = scenario.plant_input(np.asarray(empc.nominal_input), 0.0)
    failures = 0
    v_values = []
    for k in range(K):
        t = k * period
        res = solver.solve(x, theta, warm)
        if not res.converged:
            failures += 1
        warm = res.plan.shifted()
        u = res.plan.first
        u_eff = scenario.plant_input(u, t)
        mode = res.mode if certificate is not None else ""
        if certificate is not None:
            v_values.append(float(certificate.V(plant.x)))
        traj.append(t, x, x_pred, u_eff, theta, scenario.theta_at(t), reward(x, x_pred, agent_cfg),
                    stage_cost(x, u_eff, empc.stage_cost), mode)
        x = plant.step(u, t)
        x_pred = res.x_next
        theta = np.asarray(estimator(observation(x, x_pred), t + period), float)
    t = K * period
    if certificate is not None:
        v_values.append(float(certificate.V(plant.x)))
    traj.append(t, x, x_pred, u_eff, theta, scenario.theta_at(t), reward(x, x_pred, agent_cfg),
                stage_cost(x, u_eff, empc.stage_cost), "")
    metrics = run_metrics(traj, scenario, period, plant.clamp_events)
    return DeployResult(traj, metrics, failures, plant.clamp_events, v_values)


def compare(actor, scenario=ScenarioState(), empc=None, integrator=IntegratorConfig(), seed=0, **kw):
    """The three runs behind the improvement table, on one seed and scenario."""
    runs = {
        "empc_only": FrozenEstimator(),
        "empc_rl": PolicyEstimator(actor),
        "oracle": OracleEstimator(scenario),
    }
    return {name: deploy(est, scenario, empc, integrator, seed=seed, **kw) for name, est in runs.items()}

