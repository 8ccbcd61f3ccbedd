"""Economic MPC by direct single shooting over held inputs.

The prediction model is the forward-Euler discretisation of the reactor with
the kinetic estimate frozen over the horizon and no disturbance.  The
objective is the negative integrated stage cost, accumulated with the left
rectangle rule on the Euler grid, and is minimised with L-BFGS-B (a projected
quasi-Newton method) using the exact gradient of the discretised rollout.

An optional Lyapunov layer adds the two-mode constraint as an exact penalty:
inside ``Omega_rho_e`` the predicted ``V`` must stay below ``rho_e``; outside
it the first move must decrease ``V`` at least as fast as the stabilising
feedback ``h``.
"""

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .model import DEFAULT_CONSTANTS, INPUT_NAMES, U_HIGH, U_LOW, U_S, check_state, eval_rhs, rhs_jacobian
from .sim import substeps

log = logging.getLogger(__name__)

STAGE_COSTS = {"yield_numerator": 0, "yield_per_feed": 1}


class InfeasibleConfig(ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


def stage_cost(x, u, kind="yield_numerator"):
    """Instantaneous economic value (to be maximised).

    ``yield_numerator`` is ``u1 * x3 * x4``; ``yield_per_feed`` is
    ``x3 * x4 / u2`` for the variant where the feed is also manipulated.
    """
    if kind not in STAGE_COSTS:
        raise ValueError(f"unknown stage cost {kind!r}")
    if kind == "yield_per_feed" and u[1] == 0:
        raise ZeroDivisionError("yield_per_feed stage cost needs u2 != 0")
    return float(_kernels.stage(np.asarray(x, float), np.asarray(u, float), STAGE_COSTS[kind]))


@dataclass(frozen=True)
class EmpcConfig:
    horizon: int = 10
    sampling_period: float = 1.0
    step_size: float = 0.01
    manipulated: tuple = ("u3",)
    u_low: tuple = tuple(U_LOW)
    u_high: tuple = tuple(U_HIGH)
    nominal_input: tuple = tuple(U_S)
    stage_cost: str = "yield_numerator"
    max_iter: int = 200
    tol: float = 1e-6
    gradient: str = "adjoint"
    penalty_weight: float = 1e4
    lyapunov_mode: bool = False

    def __post_init__(self):
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ValueError("horizon N must satisfy N >= 1")
        for name in self.manipulated:
            if name not in INPUT_NAMES:
                raise ValueError(f"unknown manipulated variable {name!r}")
        if len(set(self.manipulated)) != len(self.manipulated) or not self.manipulated:
            raise ValueError("manipulated set must be a non-empty subset of u1, u2, u3")
        if self.stage_cost not in STAGE_COSTS:
            raise ValueError(f"unknown stage cost {self.stage_cost!r}")
        if self.gradient not in ("adjoint", "fd"):
            raise ValueError("gradient must be 'adjoint' or 'fd'")
        for key in ("u_low", "u_high", "nominal_input"):
            object.__setattr__(self, key, tuple(float(v) for v in getattr(self, key)))
        substeps(self.sampling_period, self.step_size)

    @property
    def index(self):
        return [INPUT_NAMES.index(n) for n in self.manipulated]

    @property
    def substeps(self):
        return substeps(self.sampling_period, self.step_size)


THREE_INPUT = dict(manipulated=("u1", "u2", "u3"), stage_cost="yield_per_feed")


def three_input_config(**kw):
    return EmpcConfig(**{**THREE_INPUT, **kw})


@dataclass
class ControlPlan:
    """``N`` held inputs (rows are full ``[u1, u2, u3]`` vectors)."""

    inputs: np.ndarray

    def __post_init__(self):
        self.inputs = np.array(self.inputs, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.inputs)

    @property
    def first(self):
        return self.inputs[0].copy()

    def shifted(self):
        """Drop the applied move and repeat the last one (standard warm start)."""
        return ControlPlan(np.vstack([self.inputs[1:], self.inputs[-1:]]))


@dataclass
class EmpcResult:
    plan: ControlPlan
    predicted: np.ndarray  # states at the N+1 sampling instants
    objective: float  # minimisation form: -integral of the stage cost
    penalty: float = 0.0
    iterations: int = 0
    converged: bool = True
    message: str = ""
    mode: int = 0  # 0 no Lyapunov layer, 1 or 2 otherwise
    residual: float = float("nan")
    warm_objective: float = float("nan")

    @property
    def value(self):
        return -self.objective

    @property
    def x_next(self):
        return self.predicted[1].copy()


def apply_mode_constraint(x_meas, theta_hat, cert, plan, cfg=EmpcConfig(), constants=DEFAULT_CONSTANTS, states=None):
    """Lyapunov-mode residual for ``plan``; ``<= 0`` means satisfied.

    Returns ``(mode, residual)``.  ``states`` may pass a precomputed substep
    rollout of the plan to avoid recomputing it.
    """
    x_meas = check_state(x_meas)
    plan = plan.inputs if isinstance(plan, ControlPlan) else np.asarray(plan, float).reshape(-1, 3)
    if cert.V(x_meas) <= cert.rho_e:
        if states is None:
            states = _rollout(x_meas, theta_hat, plan, cfg, constants)[0]
        v = cert.V_many(states[:-1])
        return 1, float(np.max(v) - cert.rho_e)
    g = cert.grad_V(x_meas)
    f_u = eval_rhs(x_meas, theta_hat, plan[0], constants=constants)
    f_h = eval_rhs(x_meas, theta_hat, cert.h(x_meas), constants=constants)
    return 2, float(g @ f_u - g @ f_h)


def _rollout(x0, theta, U, cfg, constants):
    nsub = cfg.substeps
    X = np.empty((len(U) * nsub + 1, 4))
    status, val = _kernels.rollout(
        np.asarray(x0, float), np.asarray(theta, float), np.ascontiguousarray(U), constants.packed,
        float(cfg.step_size), nsub, STAGE_COSTS[cfg.stage_cost], X,
    )
    return X, status, val


class EmpcSolver:
    """Receding-horizon economic MPC; one solve at a time per instance."""

    def __init__(self, cfg=EmpcConfig(), constants=DEFAULT_CONSTANTS, certificate=None):
        lo = np.asarray(cfg.u_low, float)
        hi = np.asarray(cfg.u_high, float)
        if lo.shape != (3,) or hi.shape != (3,):
            raise InfeasibleConfig("input bounds need three entries")
        if np.any(lo[cfg.index] > hi[cfg.index]):
            raise InfeasibleConfig(f"empty input box: low={lo} high={hi}")
        if cfg.lyapunov_mode and certificate is None:
            raise ValueError("lyapunov_mode needs a stability certificate")
        self.cfg = cfg
        self.constants = constants
        self.cert = certificate if cfg.lyapunov_mode else None
        self.low = lo
        self.high = hi
        self.idx = cfg.index
        self.nominal = np.asarray(cfg.nominal_input, float)
        self.nsub = cfg.substeps
        self._X = np.empty((cfg.horizon * self.nsub + 1, 4))
        self._g = np.empty((cfg.horizon, 3))

    # -- plan <-> decision vector ---------------------------------------
    def _full(self, z):
        U = np.tile(self.nominal, (self.cfg.horizon, 1))
        U[:, self.idx] = z.reshape(self.cfg.horizon, len(self.idx))
        return U

    def _z(self, plan):
        return np.asarray(plan.inputs[:, self.idx], float).ravel()

    def project(self, plan):
        U = np.array(plan.inputs, float)
        U[:, self.idx] = np.clip(U[:, self.idx], self.low[self.idx], self.high[self.idx])
        return ControlPlan(U)

    def cold_start(self):
        U = np.tile(self.nominal, (self.cfg.horizon, 1))
        U[:, self.idx] = 0.5 * (self.low[self.idx] + self.high[self.idx])
        return ControlPlan(U)

    def fallback(self, x):
        """Constant plan at the stabilising feedback ``h(x)``."""
        if self.cert is None:
            raise ValueError("fallback plan needs a certificate")
        U = np.tile(np.asarray(self.cert.h(x), float), (self.cfg.horizon, 1))
        return self.project(ControlPlan(U))

    # -- objective -----------------------------------------------------
    def _mode(self, x):
        if self.cert is None:
            return 0
        return 1 if self.cert.V(x) <= self.cert.rho_e else 2

    def _objective(self, z, x, theta, mode, want_grad=True):
        U = self._full(z)
        X = self._X
        status, val = _kernels.rollout(
            x, theta, U, self.constants.packed, self.cfg.step_size, self.nsub,
            STAGE_COSTS[self.cfg.stage_cost], X,
        )
        if status != _kernels.OK:
            big = 1e6
            return (big, np.zeros_like(z)) if want_grad else big
        J = -val
        seed_idx = -1
        seed = np.zeros(4)
        pen = 0.0
        w = self.cfg.penalty_weight
        gu0 = None
        if mode == 1:
            v = self.cert.V_many(X[:-1])
            m = int(np.argmax(v))
            r = v[m] - self.cert.rho_e
            if r > 0:
                pen = w * r
                seed_idx = m
                # rollout value is maximised, so its co-state seed carries a minus sign
                seed = -w * self.cert.grad_V(X[m])
        elif mode == 2:
            gV = self.cert.grad_V(x)
            fh = eval_rhs(x, theta, self.cert.h(x), constants=self.constants)
            fu = eval_rhs(x, theta, U[0], constants=self.constants)
            r = gV @ fu - gV @ fh
            if r > 0:
                pen = w * r
                gu0 = w * (gV @ rhs_jacobian(x, theta, U[0], self.constants)[1])
        if not want_grad:
            return J + pen
        if self.cfg.gradient == "adjoint":
            _kernels.rollout_adjoint(
                X, theta, U, self.constants.packed, self.cfg.step_size, self.nsub,
                STAGE_COSTS[self.cfg.stage_cost], seed_idx, seed, self._g,
            )
            G = -self._g
            if gu0 is not None:
                G = G.copy()
                G[0] += gu0
            grad = G[:, self.idx].ravel()
        else:
            grad = self._fd_grad(z, x, theta, mode)
        return J + pen, grad

    def _fd_grad(self, z, x, theta, mode, eps=1e-6):
        g = np.empty_like(z)
        for i in range(len(z)):
            zp = z.copy()
            zm = z.copy()
            zp[i] += eps
            zm[i] -= eps
            g[i] = (self._objective(zp, x, theta, mode, False) - self._objective(zm, x, theta, mode, False)) / (2 * eps)
        return g

    def evaluate(self, x, theta, plan):
        """Penalised objective of a given plan (minimisation form)."""
        x = check_state(x)
        theta = np.asarray(theta, float)
        return self._objective(self._z(plan), x, theta, self._mode(x), want_grad=False)

    def predict(self, x, theta, plan):
        """States at the sampling instants of ``plan`` under the prediction model."""
        X, status, val = _rollout(check_state(x), theta, plan.inputs, self.cfg, self.constants)
        if status != _kernels.OK:
            raise ValueError("prediction left the model domain")
        return X[:: self.nsub].copy(), val, X

    # -- solve -----------------------------------------------------------
    def solve(self, x_meas, theta_hat, warm_start=None):
        x = check_state(x_meas)
        theta = np.asarray(theta_hat, float)
        mode = self._mode(x)
        if warm_start is None:
            seed_plan = self.fallback(x) if self.cert is not None else self.cold_start()
        else:
            seed_plan = self.project(warm_start)
            if len(seed_plan) != self.cfg.horizon:
                raise ValueError("warm start length differs from the horizon")
        z0 = self._z(seed_plan)
        lo = np.repeat(self.low[self.idx][None, :], self.cfg.horizon, 0).ravel()
        hi = np.repeat(self.high[self.idx][None, :], self.cfg.horizon, 0).ravel()
        f0 = self._objective(z0, x, theta, mode, want_grad=False)
        if np.all(hi - lo == 0):
            z, nit, ok, msg = lo.copy(), 0, True, "singleton feasible set"
        else:
            res = minimize(
                self._objective, z0, args=(x, theta, mode), jac=True, method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
                options={"maxiter": self.cfg.max_iter, "gtol": self.cfg.tol, "ftol": 1e-15, "maxls": 40},
            )
            z = np.clip(res.x, lo, hi)
            nit = int(res.nit)
            msg = str(res.message)
            ok = bool(res.success) or self._pg_norm(z, x, theta, mode, lo, hi) <= 10 * self.cfg.tol
            if self._objective(z, x, theta, mode, want_grad=False) > f0:
                z = z0
                msg += " (kept seed plan)"
        if not ok:
            warnings.warn(f"EMPC did not converge: {msg}", ConvergenceWarning, stacklevel=2)
        plan = ControlPlan(self._full(z))
        states, value, X = self.predict(x, theta, plan)
        result = EmpcResult(plan, states, -value, iterations=nit, converged=ok, message=msg, mode=mode,
                            warm_objective=f0)
        if self.cert is not None:
            result.mode, result.residual = apply_mode_constraint(x, theta, self.cert, plan, self.cfg,
                                                                 self.constants, states=X)
            result.penalty = self.cfg.penalty_weight * max(result.residual, 0.0)
            if result.residual > 1e-6:
                log.info("Lyapunov mode %d constraint violated by %.3g", result.mode, result.residual)
        return result

    def _pg_norm(self, z, x, theta, mode, lo, hi):
        _, g = self._objective(z, x, theta, mode)
        pg = np.clip(z - g, lo, hi) - z
        return float(np.max(np.abs(pg))) if len(pg) else 0.0


def with_bounds(cfg, name, low, high):
    """Copy of ``cfg`` with the box of input ``name`` replaced."""
    i = INPUT_NAMES.index(name)
    lo = list(cfg.u_low)
    hi = list(cfg.u_high)
    lo[i] = low
    hi[i] = high
    return replace(cfg, u_low=tuple(lo), u_high=tuple(hi))
