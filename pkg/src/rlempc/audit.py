"""Stability audit: certificate, sampled constants, bound checks, LEMPC run."""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .empc import EmpcConfig
from .model import DEFAULT_CONSTANTS
from .orchestrator import FrozenEstimator, deploy
from .scenario import named_scenario
from .sim import IntegratorConfig
from .stability import (
    build_certificate,
    closed_loop_under_h,
    decrease_monitor,
    estimate_constants,
    prop1_trials,
    prop2_growth_trials,
    prop2_v_trials,
    prop3_margin,
    theorem1_rho_e,
)


@dataclass
class AuditReport:
    certificate: dict
    constants: dict
    rho_e_theorem: float
    prop1_min_residual: float
    prop1_failures: int
    prop2_growth_min_residual: float
    prop2_growth_failures: int
    prop2_v_min_residual: float
    prop2_v_failures: int
    prop3_lhs: float
    prop3_eps_s: float
    prop3_satisfied: bool
    decrease_worst_rate: float
    decrease_ok: bool
    lempc_periods: int
    lempc_exits: int
    lempc_max_v_ratio: float
    lempc_modes: dict = field(default_factory=dict)
    v_trace: list = field(default_factory=list)

    @property
    def passed(self):
        return (self.prop1_failures == 0 and self.prop2_growth_failures == 0 and self.prop2_v_failures == 0
                and self.lempc_exits == 0)

    def to_dict(self):
        d = asdict(self)
        d.pop("v_trace")
        d["passed"] = self.passed
        return d


def stability_audit(section, empc=EmpcConfig(), integrator=IntegratorConfig(), scenario=None, estimator=None,
                    seed=0, constants=DEFAULT_CONSTANTS, periods=100):
    """Run every monitor once; ``section`` is a :class:`config.StabilitySection`."""
    period = empc.sampling_period
    h = integrator.step_size
    cert = build_certificate(state_weights=section.state_weights, control_weight=section.control_weight,
                             rho_start=section.rho_start, rho_s_fraction=section.rho_s_fraction,
                             n_samples=section.n_samples, period=period, seed=seed, constants=constants)
    est = estimate_constants(cert, n_samples=section.n_samples, delta=section.delta, beta=section.beta,
                             seed=seed, constants=constants)
    rho_e = theorem1_rho_e(cert, est, period)
    cert = cert.with_rho_e(rho_e)

    p1 = prop1_trials(cert, est, section.pairs, period, h, integrator.method, section.f_d_variant, seed)
    p2g = prop2_growth_trials(cert, est, n_pairs=section.pairs, period=period, h=h, method=integrator.method,
                              seed=seed)
    p2v = prop2_v_trials(cert, est, n_pairs=10 * section.pairs, seed=seed)
    lhs, eps_s, ok3 = prop3_margin(cert, est, period)

    rng = np.random.default_rng(seed)
    worst, dec_ok = -np.inf, True
    for x0 in cert.sample(10, rng, shell=True):
        X = closed_loop_under_h(cert, x0, periods=20, period=period, h=h, method=integrator.method)
        w, ok = decrease_monitor(cert, est, X, period)
        if np.isfinite(w):
            worst = max(worst, w)
        dec_ok = dec_ok and ok

    if scenario is None:
        scenario = named_scenario("nominal", t_final=float(periods * period))
    run = deploy(estimator or FrozenEstimator(), scenario, replace(empc, lyapunov_mode=True), integrator,
                 constants=constants, certificate=cert, seed=seed)
    v = np.array(run.v_values)
    modes = {}
    for m in run.trajectory.modes:
        if m:
            modes[m] = modes.get(m, 0) + 1
    return AuditReport(
        certificate=cert.to_dict(),
        constants=est.to_dict(),
        rho_e_theorem=rho_e,
        prop1_min_residual=float(p1.min()),
        prop1_failures=int(np.sum(p1 < 0)),
        prop2_growth_min_residual=float(p2g.min()),
        prop2_growth_failures=int(np.sum(p2g < 0)),
        prop2_v_min_residual=float(p2v.min()),
        prop2_v_failures=int(np.sum(p2v < 0)),
        prop3_lhs=lhs,
        prop3_eps_s=eps_s,
        prop3_satisfied=ok3,
        decrease_worst_rate=float(worst),
        decrease_ok=bool(dec_ok),
        lempc_periods=len(v) - 1,
        lempc_exits=int(np.sum(v > cert.rho)),
        lempc_max_v_ratio=float(v.max() / cert.rho) if len(v) else 0.0,
        lempc_modes=modes,
        v_trace=[float(x) for x in v],
    )
