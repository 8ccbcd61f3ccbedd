"""Experiment definitions: what the true plant does over a run."""

from dataclasses import dataclass, field

import numpy as np

from .model import DEACTIVATION_STEPS, kinetic_schedule
from .sim import NoiseConfig


@dataclass(frozen=True)
class ScenarioState:
    """True kinetics, disturbances and controller layout over ``[0, t_final]``.

    With ``deactivation`` on, the catalyst moves through the five schedule
    steps at ``step_times`` (equally spaced over the run unless given), so the
    run splits into six equal segments labelled 0..5.
    """

    name: str = "deactivation"
    t_final: float = 120.0
    deactivation: bool = True
    step_times: tuple = ()
    shift_per_step: float = 0.01
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    spike_window: tuple = ()
    spike_factor: float = 1.3
    manipulated: tuple = ("u3",)
    plant_theta: tuple = ()

    def __post_init__(self):
        if self.t_final < 0:
            raise ValueError("t_final must be non-negative")
        times = tuple(float(t) for t in self.step_times)
        if self.deactivation and not times:
            seg = self.t_final / (DEACTIVATION_STEPS + 1)
            times = tuple(seg * (i + 1) for i in range(DEACTIVATION_STEPS))
        if times:
            if len(times) != DEACTIVATION_STEPS:
                raise ValueError(f"need {DEACTIVATION_STEPS} deactivation step times")
            if any(b < a for a, b in zip(times[:-1], times[1:])):
                raise ValueError("deactivation step times must be non-decreasing")
            if times[0] < 0 or times[-1] > self.t_final:
                raise ValueError("deactivation step times must lie within [0, t_final]")
        object.__setattr__(self, "step_times", times)
        if self.spike_window:
            a, b = (float(v) for v in self.spike_window)
            if not 0 <= a <= b:
                raise ValueError("spike window must satisfy 0 <= start <= end")
            object.__setattr__(self, "spike_window", (a, b))
        if self.plant_theta:
            pt = tuple(float(v) for v in self.plant_theta)
            if len(pt) != 6:
                raise ValueError("plant_theta needs six entries")
            object.__setattr__(self, "plant_theta", pt)

    def step_index(self, t):
        if not self.deactivation:
            return 0
        return int(np.searchsorted(np.asarray(self.step_times), t + 1e-9, side="right"))

    def theta_at(self, t):
        """True kinetic multipliers over the period starting at ``t``."""
        if self.plant_theta:
            return np.array(self.plant_theta)
        return kinetic_schedule(self.step_index(t), self.shift_per_step)

    def spike_active(self, t):
        if not self.spike_window:
            return False
        a, b = self.spike_window
        return a <= t + 1e-9 and t + 1e-9 < b

    def plant_input(self, u, t):
        """Input actually fed to the plant: ``u2`` is scaled inside the spike window."""
        u = np.array(u, dtype=float)
        if self.spike_active(t):
            u[1] *= self.spike_factor
        return u

    def segments(self, period=1.0):
        """Row ranges ``(step, first, last)`` of each deactivation segment (inclusive)."""
        K = int(round(self.t_final / period))
        bounds = [0] + [int(round(t / period)) for t in self.step_times] + [K]
        if not self.deactivation:
            bounds = [0, K]
        return [(i, bounds[i], bounds[i + 1]) for i in range(len(bounds) - 1)]


def named_scenario(name, **overrides):
    """Presets for the experiments: nominal, deactivation, noise, spike, three_input."""
    presets = {
        "nominal": dict(deactivation=False),
        "deactivation": dict(),
        "noise": dict(noise=NoiseConfig(enabled=True)),
        "spike": dict(spike_window=(50.0, 60.0)),
        "three_input": dict(manipulated=("u1", "u2", "u3")),
    }
    if name not in presets:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(presets)}")
    return ScenarioState(**{"name": name, **presets[name], **overrides})
