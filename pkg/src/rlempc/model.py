"""Dimensionless ethylene-oxide CSTR (Ozgulsen et al. form).

States ``x = [x1, x2, x3, x4]``: gas density, ethylene concentration,
ethylene-oxide concentration and temperature, each scaled by a feed or
reference value.  Inputs ``u = [u1, u2, u3]``: feed rate, feed ethylene
concentration, coolant temperature.

The six kinetic multipliers enter as

    r_i = A_i * theta_{i+3} * exp(gamma_i * theta_i / x4) * (...)**order

so ``theta[0:3]`` scale the (negative) activation-energy groups and
``theta[3:6]`` scale the pre-exponential groups.  Because ``gamma_i < 0``, a
larger activation energy means a larger ``theta_i``.

The coolant term of the energy balance is ``-B4 / x1 * (x4 - u3)`` (heat is
removed when the reactor is hotter than the coolant).  With the opposite sign
the steady state is open-loop unstable with an eigenvalue near +6.9.

The dimensional design equations are not implemented; for reference they are

    drho/dt'  = Qf/V (rho_f - T/Tf rho)
    dCE/dt'   = Qf/V (CE_f - T/Tf CE) - w/V (r1 + r2)
    dCEO/dt'  = -Qf T/(V Tf) CEO + w/V (r1 - r3)
    dT/dt'    = Qf rho_f/(V rho) (Tf - T) + w sum(-dH_i r_i)/(V rho Cp)
                - hA/(V rho Cp) (T - Tc)
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import root

from . import _kernels

STATE_NAMES = ("x1", "x2", "x3", "x4")
INPUT_NAMES = ("u1", "u2", "u3")
THETA_NAMES = tuple(f"theta{i}" for i in range(1, 7))

#: steady state and steady input reported for the nominal reactor
X_S = np.array([0.998, 0.432, 0.0292, 1.002])
U_S = np.array([0.2, 0.5, 1.0])

THETA_LOW = 0.9
THETA_HIGH = 1.1
THETA_NOMINAL = np.ones(6)

#: default input boxes; u1 and u2 are only free in the three-input variant
U_LOW = np.array([0.071, 0.25, 0.6])
U_HIGH = np.array([0.71, 2.5, 1.4])

# Deactivation direction per unit step: E1 up, E2 down, E3 down, k1 down,
# k2 up, k3 up (activation energies live in theta[0:3]).
DEACTIVATION_DIRECTION = np.array([1.0, -1.0, -1.0, -1.0, 1.0, 1.0])
DEACTIVATION_STEPS = 5


class DomainError(ValueError):
    """State outside the region where the rate expressions are defined."""


@dataclass(frozen=True)
class ModelConstants:
    gamma: tuple = (-8.13, -7.12, -11.07)
    A: tuple = (92.80, 12.66, 2417.71)
    B: tuple = (7.32, 10.39, 2170.57, 7.02)
    _packed: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        gamma = tuple(float(v) for v in self.gamma)
        A = tuple(float(v) for v in self.A)
        B = tuple(float(v) for v in self.B)
        if len(gamma) != 3 or len(A) != 3 or len(B) != 4:
            raise ValueError("gamma and A need 3 entries, B needs 4")
        if any(g >= 0 for g in gamma):
            raise ValueError("gamma entries must be negative")
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        packed = np.array(gamma + A + B, dtype=float)
        packed.setflags(write=False)
        object.__setattr__(self, "_packed", packed)

    @property
    def packed(self):
        return self._packed


DEFAULT_CONSTANTS = ModelConstants()


def check_state(x):
    x = np.asarray(x, dtype=float)
    if x.shape != (4,):
        raise ValueError(f"state must have shape (4,), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite state {x}")
    if x[0] <= 0 or x[3] <= 0:
        raise DomainError(f"x1 and x4 must be positive, got {x}")
    if x[1] * x[3] < 0 or x[2] * x[3] < 0:
        raise DomainError(f"fractional power of a negative concentration in {x}")
    return x


def check_theta(theta, low=THETA_LOW, high=THETA_HIGH):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (6,):
        raise ValueError(f"theta must have shape (6,), got {theta.shape}")
    if np.any(theta < low) or np.any(theta > high):
        raise ValueError(f"theta outside [{low}, {high}]: {theta}")
    return theta


def eval_rhs(x, theta, u, d=None, constants=DEFAULT_CONSTANTS):
    """Right-hand side ``dx/dt`` of the dimensionless reactor plus additive ``d``."""
    x = check_state(x)
    theta = np.asarray(theta, dtype=float)
    u = np.asarray(u, dtype=float)
    if theta.shape != (6,) or u.shape != (3,):
        raise ValueError("theta must have 6 entries and u 3 entries")
    out = np.empty(4)
    _kernels.rhs(x, theta, u, constants.packed, out)
    if d is not None:
        out = out + np.asarray(d, dtype=float)
    return out


def rhs_jacobian(x, theta, u, constants=DEFAULT_CONSTANTS):
    """Analytic ``(df/dx, df/du)`` at a valid state."""
    x = check_state(x)
    fx = np.empty((4, 4))
    fu = np.empty((4, 3))
    _kernels.rhs_jac(x, np.asarray(theta, float), np.asarray(u, float), constants.packed, fx, fu)
    return fx, fu


def kinetic_schedule(step, shift_per_step=0.01):
    """Plant-side kinetic multipliers after ``step`` deactivation steps (0..5)."""
    if int(step) != step or not 0 <= step <= DEACTIVATION_STEPS:
        raise ValueError(f"deactivation step must be an integer in 0..{DEACTIVATION_STEPS}, got {step}")
    return 1.0 + shift_per_step * int(step) * DEACTIVATION_DIRECTION


def steady_state(theta=THETA_NOMINAL, u=U_S, x0=X_S, constants=DEFAULT_CONSTANTS, tol=1e-12, settle=200.0):
    """Equilibrium of the reactor near ``x0``.

    Newton-type root finding on the analytic Jacobian; if that leaves the
    domain or stalls, the reactor is first simulated for ``settle`` time units
    and the root search restarts from there.
    """
    theta = np.asarray(theta, float)
    u = np.asarray(u, float)

    def fun(x):
        return eval_rhs(x, theta, u, constants=constants)

    def jac(x):
        return rhs_jacobian(x, theta, u, constants)[0]

    def search(start):
        try:
            sol = root(fun, start, jac=jac, method="hybr", tol=tol)
        except DomainError:
            return None
        return sol.x if sol.success else None

    x = search(np.asarray(x0, float))
    if x is None:
        h = 0.01
        out = np.empty(4)
        n = int(round(settle / h))
        status, _, _ = _kernels.hold_rk4(check_state(x0), theta, u, constants.packed, h, np.zeros((n, 4)), out)
        if status == _kernels.OK:
            x = search(out)
    if x is None:
        raise RuntimeError(f"steady-state search failed for theta={theta}, u={u}")
    return x
