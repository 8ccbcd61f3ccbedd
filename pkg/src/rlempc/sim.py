"""Fixed-step sample-and-hold simulation of the reactor.

The same engine serves as the "real plant" (RK4 by default, true kinetics,
optional noise and feed spike) and as the controller's prediction model
(forward Euler, estimated kinetics, no disturbance).
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .model import DEFAULT_CONSTANTS, DomainError, INPUT_NAMES, STATE_NAMES, THETA_NAMES, X_S, check_state

log = logging.getLogger(__name__)

METHODS = ("euler", "rk4")


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"
    step_size: float = 0.01
    sampling_period: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        substeps(self.sampling_period, self.step_size)

    @property
    def substeps(self):
        return substeps(self.sampling_period, self.step_size)


def substeps(span, h):
    n = span / h
    nr = round(n)
    if nr < 0 or abs(n - nr) > 1e-9 * max(1.0, n):
        raise ValueError(f"step size {h} does not divide span {span}")
    return int(nr)


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian rate noise; ``std_dev`` is per unit time for each state."""

    enabled: bool = False
    std_dev: tuple = tuple(0.005 * X_S)
    seed: int = 0
    mode: str = "process"

    def __post_init__(self):
        std = tuple(float(s) for s in self.std_dev)
        if len(std) != 4 or any(s < 0 for s in std):
            raise ValueError("std_dev needs 4 non-negative entries")
        if self.mode not in ("process", "measurement"):
            raise ValueError("noise mode must be 'process' or 'measurement'")
        object.__setattr__(self, "std_dev", std)


@dataclass
class HoldResult:
    x: np.ndarray
    clamped_substeps: int = 0
    first_clamp: int = -1


def _as_disturbance(d_source, n):
    if d_source is None:
        return np.zeros((n, 4))
    if callable(d_source):
        d = np.asarray(d_source(n), dtype=float)
    else:
        d = np.asarray(d_source, dtype=float)
    if d.shape == (4,):
        d = np.broadcast_to(d, (n, 4))
    if d.shape != (n, 4):
        raise ValueError(f"disturbance must have shape ({n}, 4), got {d.shape}")
    return np.ascontiguousarray(d)


def integrate_hold(x0, theta, u, span, cfg=IntegratorConfig(), d_source=None, constants=DEFAULT_CONSTANTS):
    """Integrate with ``u`` and ``theta`` held constant over ``span``.

    ``d_source`` is ``None``, a (4,) constant rate offset, an (n, 4) array with
    one row per substep, or a callable ``n -> (n, 4)``.
    """
    x0 = check_state(x0)
    n = substeps(span, cfg.step_size)
    d = _as_disturbance(d_source, n)
    out = np.empty(4)
    kernel = _kernels.hold_rk4 if cfg.method == "rk4" else _kernels.hold_euler
    status, nclamp, first = kernel(
        x0, np.asarray(theta, float), np.asarray(u, float), constants.packed, float(cfg.step_size), d, out
    )
    if status != _kernels.OK:
        raise DomainError(f"integration left the model domain (status {status}) at state {out}")
    return HoldResult(out, int(nclamp), int(first))


class GaussianRateNoise:
    """Independent per-substep rate perturbations ``sigma * xi / sqrt(h)``."""

    def __init__(self, std_dev, step_size, rng):
        self.scale = np.asarray(std_dev, float) / math.sqrt(step_size)
        self.rng = rng

    def __call__(self, n):
        return self.rng.standard_normal((n, 4)) * self.scale


@dataclass
class Trajectory:
    """One row per sampling instant.

    Row ``k`` holds the measured and predicted state at ``t_k``, the input fed
    to the plant over ``[t_k, t_k+1)`` (the last row repeats the held input),
    the estimate used by the controller at ``t_k``, the true kinetics over the
    same period, the reward of the ``(x, x_pred)`` pair and the stage cost.
    """

    times: list = field(default_factory=list)
    measured_states: list = field(default_factory=list)
    predicted_states: list = field(default_factory=list)
    inputs: list = field(default_factory=list)
    theta_estimates: list = field(default_factory=list)
    theta_true: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    stage_costs: list = field(default_factory=list)
    modes: list = field(default_factory=list)

    def append(self, t, x, x_pred, u, theta_hat, theta_true, reward, stage_cost, mode=""):
        if self.times and not t > self.times[-1]:
            raise ValueError("trajectory times must be strictly increasing")
        self.times.append(float(t))
        self.measured_states.append(np.array(x, float))
        self.predicted_states.append(np.array(x_pred, float))
        self.inputs.append(np.array(u, float))
        self.theta_estimates.append(np.array(theta_hat, float))
        self.theta_true.append(np.array(theta_true, float))
        self.rewards.append(float(reward))
        self.stage_costs.append(float(stage_cost))
        self.modes.append(str(mode))

    def __len__(self):
        return len(self.times)

    def arrays(self):
        """Column arrays keyed by field name (empty-safe)."""
        def stack(rows, width):
            return np.array(rows, float).reshape(-1, width)

        return {
            "times": np.array(self.times, float),
            "x": stack(self.measured_states, 4),
            "x_pred": stack(self.predicted_states, 4),
            "u": stack(self.inputs, 3),
            "theta_hat": stack(self.theta_estimates, 6),
            "theta_true": stack(self.theta_true, 6),
            "rewards": np.array(self.rewards, float),
            "stage_costs": np.array(self.stage_costs, float),
        }

    columns = (
        ("time",)
        + STATE_NAMES
        + tuple(f"{s}_pred" for s in STATE_NAMES)
        + INPUT_NAMES
        + tuple(f"{t}_hat" for t in THETA_NAMES)
        + tuple(f"{t}_true" for t in THETA_NAMES)
        + ("reward", "stage_cost", "mode")
    )

    def rows(self):
        for k in range(len(self)):
            yield (
                [self.times[k]]
                + list(self.measured_states[k])
                + list(self.predicted_states[k])
                + list(self.inputs[k])
                + list(self.theta_estimates[k])
                + list(self.theta_true[k])
                + [self.rewards[k], self.stage_costs[k], self.modes[k]]
            )

    def to_csv(self, header=None):
        buf = io.StringIO()
        for key, value in (header or {}).items():
            buf.write(f"# {key}: {value}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.rows():
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
        reader = csv.reader(lines)
        head = next(reader)
        if tuple(head) != cls.columns:
            raise ValueError("unexpected trajectory CSV columns")
        traj = cls()
        for row in reader:
            vals = [float(v) for v in row[:-1]]
            traj.append(vals[0], vals[1:5], vals[5:9], vals[9:12], vals[12:18], vals[18:24], vals[24], vals[25], row[-1])
        return traj


def _fmt(v):
    if isinstance(v, str):
        return v
    return repr(float(v))


class Plant:
    """The simulated process: holds the true state and advances it one period.

    ``scenario`` supplies the true kinetics, the feed-spike rule and noise
    settings through ``theta_at(t)`` and ``plant_input(u, t)``.
    """

    def __init__(self, x0, scenario, integrator=IntegratorConfig(), constants=DEFAULT_CONSTANTS, rng=None):
        self.x = check_state(x0).copy()
        self.scenario = scenario
        self.integrator = integrator
        self.constants = constants
        noise = scenario.noise
        self.rng = rng if rng is not None else np.random.default_rng(noise.seed)
        self._noise = None
        if noise.enabled and noise.mode == "process":
            self._noise = GaussianRateNoise(noise.std_dev, integrator.step_size, self.rng)
        self.clamp_events = 0

    def measure(self):
        noise = self.scenario.noise
        if noise.enabled and noise.mode == "measurement":
            y = self.x + self.rng.standard_normal(4) * np.asarray(noise.std_dev)
            y[1:3] = np.maximum(y[1:3], 0.0)
            return y
        return self.x.copy()

    def step(self, u, t):
        """Advance over ``[t, t + period)`` with ``u`` held; return the measurement."""
        u_eff = self.scenario.plant_input(u, t)
        theta = self.scenario.theta_at(t)
        res = integrate_hold(
            self.x, theta, u_eff, self.integrator.sampling_period, self.integrator, self._noise, self.constants
        )
        if res.clamped_substeps:
            self.clamp_events += res.clamped_substeps
            log.debug("non-negativity clamp active on %d substeps after t=%g", res.clamped_substeps, t)
        self.x = res.x
        return self.measure()
