"""Lyapunov certificate, sampled Lipschitz constants and bound monitors.

Everything here is empirical: constants are maxima over random samples
(inflated by a safety factor) and the checks can refute a bound on the
sampled points, never prove it.
"""

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np
import scipy.linalg as sla

from . import _kernels
from .model import DEFAULT_CONSTANTS, THETA_HIGH, THETA_LOW, THETA_NOMINAL, U_HIGH, U_LOW, U_S, eval_rhs, \
    rhs_jacobian, steady_state

log = logging.getLogger(__name__)

INFLATION = 1.5
#: gap between a measured state and a prediction started from it: float rounding only
BETA_EXACT = float(2 * np.finfo(float).eps)


class CertificateError(ValueError):
    pass


def _ball(rng, n, dim):
    """Uniform points in the unit ball."""
    z = rng.standard_normal((n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * rng.uniform(0.0, 1.0, (n, 1)) ** (1.0 / dim)


def _sphere(rng, n, dim):
    z = rng.standard_normal((n, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


@dataclass
class StabilityCertificate:
    """Quadratic ``V(x) = (x - x_e)' P (x - x_e)`` and saturated feedback ``h``.

    ``alpha3`` is the coefficient of the sampled quadratic decrease rate
    ``dV/dt <= -alpha3 |x - x_e|^2`` under ``h`` on ``Omega_rho``.
    """

    center: np.ndarray
    P: np.ndarray
    K: np.ndarray
    u_center: np.ndarray
    rho: float
    rho_e: float
    rho_s: float
    alpha3: float = 0.0
    u_low: np.ndarray = None
    u_high: np.ndarray = None

    def __post_init__(self):
        self.center = np.asarray(self.center, float)
        self.P = np.asarray(self.P, float)
        self.K = np.asarray(self.K, float).reshape(3, 4)
        self.u_center = np.asarray(self.u_center, float)
        self.u_low = np.asarray(U_LOW if self.u_low is None else self.u_low, float)
        self.u_high = np.asarray(U_HIGH if self.u_high is None else self.u_high, float)
        if not np.allclose(self.P, self.P.T):
            raise CertificateError("P must be symmetric")
        ev = np.linalg.eigvalsh(self.P)
        if ev[0] <= 0:
            raise CertificateError("P must be positive definite")
        self.lam_min, self.lam_max = float(ev[0]), float(ev[-1])
        if not self.rho > self.rho_e > self.rho_s > 0:
            raise CertificateError(f"need rho > rho_e > rho_s > 0, got {self.rho}, {self.rho_e}, {self.rho_s}")

    def V(self, x):
        e = np.asarray(x, float) - self.center
        return float(e @ self.P @ e)

    def V_many(self, X):
        E = np.asarray(X, float) - self.center
        return np.einsum("ij,jk,ik->i", E, self.P, E)

    def grad_V(self, x):
        return 2.0 * self.P @ (np.asarray(x, float) - self.center)

    def h(self, x):
        u = self.u_center + self.K @ (np.asarray(x, float) - self.center)
        return np.clip(u, self.u_low, self.u_high)

    def contains(self, x, level=None):
        return self.V(x) <= (self.rho if level is None else level)

    # class-K bounds induced by P
    def alpha1(self, s):
        return self.lam_min * s * s

    def alpha2(self, s):
        return self.lam_max * s * s

    def alpha3_fn(self, s):
        return self.alpha3 * s * s

    def alpha4(self, s):
        return 2.0 * self.lam_max * s

    def alpha1_inv(self, v):
        return np.sqrt(v / self.lam_min)

    def alpha2_inv(self, v):
        return np.sqrt(v / self.lam_max)

    def sample(self, n, rng, level=None, shell=False, radius_rng=None):
        """Points of ``Omega_level`` (uniform in the ellipsoid, or on its boundary).

        With ``radius_rng`` the radii come from a second stream, so the first
        ``n`` points of a larger draw are the points of a smaller one.
        """
        level = self.rho if level is None else level
        L = np.linalg.cholesky(self.P)
        if shell:
            Z = _sphere(rng, n, 4)
        elif radius_rng is not None:
            Z = _sphere(rng, n, 4) * radius_rng.uniform(0.0, 1.0, (n, 1)) ** 0.25
        else:
            Z = _ball(rng, n, 4)
        # x = c + sqrt(level) L^{-T} z gives (x-c)' P (x-c) = level |z|^2
        return self.center + np.sqrt(level) * sla.solve_triangular(L.T, Z.T, lower=False).T

    def with_rho_e(self, rho_e):
        return replace(self, rho_e=float(rho_e))

    def to_dict(self):
        d = asdict(self)
        out = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in d.items()}
        out.update(lam_min=self.lam_min, lam_max=self.lam_max)
        return out


def _valid(X):
    return (X[:, 0] > 0) & (X[:, 1] >= 0) & (X[:, 2] >= 0) & (X[:, 3] > 0)


def decrease_rates(cert, X, theta=THETA_NOMINAL, constants=DEFAULT_CONSTANTS):
    """``dV/dt = grad V . f(x, theta, h(x), 0)`` at each row of ``X``."""
    return np.array([cert.grad_V(x) @ eval_rhs(x, theta, cert.h(x), constants=constants) for x in X])


def _held_decrease(cert, X, theta, period, constants):
    h = 0.01
    n = int(round(period / h))
    zero = np.zeros((n, 4))
    out = np.empty(4)
    for x in X:
        status, _, _ = _kernels.hold_rk4(x, np.asarray(theta, float), cert.h(x), constants.packed, h, zero, out)
        if status != _kernels.OK or cert.V(out) >= cert.V(x):
            return False
    return True


def build_certificate(u_center=U_S, theta=THETA_NOMINAL, manipulated=(2,), state_weights=(100.0, 1.0, 10.0, 100.0),
                      control_weight=100.0, rho_start=0.05, shrink=0.9, rho_e_fraction=0.5, rho_s_fraction=0.01,
                      n_samples=2000, n_held=200, period=1.0, seed=0, constants=DEFAULT_CONSTANTS):
    """Certificate from the linearisation at the equilibrium under ``u_center``.

    ``K`` is the LQR gain on the manipulated inputs, ``P`` solves the
    closed-loop Lyapunov equation with weights ``state_weights``, and ``rho``
    is shrunk from ``rho_start`` until every sampled state of ``Omega_rho`` is
    physical, shows ``dV/dt < 0`` under ``h``, and (for ``n_held`` boundary
    points) ends one sample-and-hold period under ``h`` with a smaller ``V``.
    ``rho_e`` starts as a
    placeholder fraction of ``rho``; see :func:`theorem1_rho_e`.
    """
    u_center = np.asarray(u_center, float)
    xe = steady_state(theta, u_center, constants=constants)
    A, B = rhs_jacobian(xe, theta, u_center, constants)
    idx = list(manipulated)
    Bm = B[:, idx]
    Q = np.diag(np.asarray(state_weights, float))
    R = control_weight * np.eye(len(idx))
    S = sla.solve_continuous_are(A, Bm, Q, R)
    K = np.zeros((3, 4))
    K[idx] = -np.linalg.solve(R, Bm.T @ S)
    Acl = A + B @ K
    P = sla.solve_continuous_lyapunov(Acl.T, -Q)
    P = 0.5 * (P + P.T)

    rng = np.random.default_rng(seed)
    rho = float(rho_start)
    for _ in range(200):
        cert = StabilityCertificate(xe, P, K, u_center, rho, rho_e_fraction * rho, rho_s_fraction * rho)
        X = np.vstack([cert.sample(n_samples, rng), cert.sample(n_samples, rng, shell=True)])
        if np.all(_valid(X)):
            dist2 = np.sum((X - xe) ** 2, axis=1)
            far = dist2 > 1e-14
            rates = decrease_rates(cert, X[far], theta, constants)
            if np.all(rates < 0) and _held_decrease(cert, X[n_samples:n_samples + n_held], theta, period, constants):
                cert.alpha3 = float(np.min(-rates / dist2[far]))
                return cert
        rho *= shrink
    raise CertificateError("no level set with sampled decrease found")


# -- Lipschitz-type constants --------------------------------------------------

@dataclass
class LipschitzEstimates:
    """Sampled constants; ``inflation`` has already been applied unless 1."""

    M: float
    L_x: float
    L_theta: float
    L_d: float
    Ls_x: float
    Ls_theta: float
    Ls_d: float
    delta: float
    beta: float
    nu: float
    eps_s: float
    inflation: float = INFLATION
    note: str = "empirical lower bounds inflated by safety factor 1.5"

    def raw(self):
        """Values with the safety factor removed."""
        k = self.inflation
        return replace(self, M=self.M / k, L_x=self.L_x / k, L_theta=self.L_theta / k, L_d=self.L_d / k,
                       Ls_x=self.Ls_x / k, Ls_theta=self.Ls_theta / k, Ls_d=self.Ls_d / k, inflation=1.0)

    def to_dict(self):
        return asdict(self)


def estimate_constants(cert, n_samples=2000, delta=1e-3, beta=BETA_EXACT, eps_s=None, rhs=None, seed=0,
                       inflation=INFLATION, rel_step=1e-3, constants=DEFAULT_CONSTANTS):
    """Monte-Carlo estimates over ``Omega_rho`` x input box x theta box x ``|d| <= delta``.

    ``rhs(x, theta, u, d)`` replaces the reactor (for tests).  Every random
    quantity has its own stream, so a larger ``n_samples`` only adds samples.

    ``beta`` bounds the gap between the measured state and the state the
    prediction starts from.  Predictions start at the measurement, so without
    measurement noise the gap is only rounding, which is the default.
    """
    if rhs is None:
        def rhs(x, th, u, d):
            return eval_rhs(x, th, u, d, constants)

    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(9)]
    X = cert.sample(n_samples, streams[0], radius_rng=streams[7])
    keep = _valid(X)
    th = streams[1].uniform(THETA_LOW, THETA_HIGH, (n_samples, 6))
    U = streams[2].uniform(cert.u_low, cert.u_high, (n_samples, 3))
    D = delta * _sphere(streams[3], n_samples, 4) * streams[8].uniform(0.0, 1.0, (n_samples, 1)) ** 0.25
    dx = _sphere(streams[4], n_samples, 4)
    dth = _sphere(streams[5], n_samples, 6)
    dd = _sphere(streams[6], n_samples, 4)
    step_x = rel_step * np.sqrt(cert.rho / cert.lam_max)

    M = Lx = Lt = Ld = Sx = St = Sd = 0.0
    for i in np.flatnonzero(keep):
        x, t, u, d = X[i], th[i], U[i], D[i]
        f = rhs(x, t, u, d)
        g = cert.grad_V(x)
        M = max(M, float(np.linalg.norm(f)))
        x2 = x + step_x * dx[i]
        if x2[1] >= 0 and x2[2] >= 0:
            f2 = rhs(x2, t, u, d)
            Lx = max(Lx, float(np.linalg.norm(f2 - f)) / step_x)
            Sx = max(Sx, abs(cert.grad_V(x2) @ f2 - g @ f) / step_x)
        t2 = t + rel_step * dth[i]
        f2 = rhs(x, t2, u, d)
        Lt = max(Lt, float(np.linalg.norm(f2 - f)) / rel_step)
        St = max(St, abs(g @ (f2 - f)) / rel_step)
        d2 = d + delta * rel_step * dd[i] if delta > 0 else d + rel_step * dd[i]
        step_d = float(np.linalg.norm(d2 - d))
        f2 = rhs(x, t, u, d2)
        Ld = max(Ld, float(np.linalg.norm(f2 - f)) / step_d)
        Sd = max(Sd, abs(g @ (f2 - f)) / step_d)
    k = float(inflation)
    if eps_s is None:
        # half the guaranteed decrease at the edge of the small level set
        eps_s = 0.5 * cert.alpha3_fn(cert.alpha2_inv(cert.rho_s))
    vals = [float(k * v) for v in (M, Lx, Lt, Ld, Sx, St, Sd)]
    return LipschitzEstimates(*vals, float(delta), float(beta), cert.lam_max, float(eps_s), k)


# -- bounds --------------------------------------------------------------------

def prop1_bound(tau, est, variant="printed"):
    """Worst-case gap between disturbed and nominal trajectories after ``tau``.

    ``variant="printed"`` uses the exponent ``L_x * L_theta`` and prefactor
    ``L_d delta / (L_x L_theta)``; ``"lx_only"`` is the Gronwall form with
    ``L_x`` alone.
    """
    tau = np.asarray(tau, float)
    if variant == "printed":
        rate = est.L_x * est.L_theta
    elif variant == "lx_only":
        rate = est.L_x
    else:
        raise ValueError("variant must be 'printed' or 'lx_only'")
    if est.delta == 0 or est.L_d == 0:
        return np.zeros_like(tau) if tau.ndim else 0.0
    if rate == 0:
        out = est.L_d * est.delta * tau
    else:
        out = est.L_d * est.delta / rate * np.expm1(rate * tau)
    return out if np.ndim(out) else float(out)


def prop2_checks(x, x_tilde, cert, est, t=0.0, gap0=None):
    """Residuals of the estimation-error growth and the ``V`` upper bound.

    Returns ``(growth_residual, v_residual)``; each is ``>= 0`` when the
    inequality holds.  ``growth_residual = beta e^{L_x t} - |x - x_tilde|``
    (with ``gap0`` replacing ``beta`` when given) and ``v_residual`` is
    ``V(x_tilde) + a4(a1^-1(rho)) |x - x_tilde| + nu |x - x_tilde|^2 - V(x)``.
    """
    x = np.asarray(x, float)
    x_tilde = np.asarray(x_tilde, float)
    gap = float(np.linalg.norm(x - x_tilde))
    beta = est.beta if gap0 is None else gap0
    growth = beta * np.exp(est.L_x * t) - gap
    a4 = cert.alpha4(cert.alpha1_inv(cert.rho))
    v_res = cert.V(x_tilde) + a4 * gap + est.nu * gap * gap - cert.V(x)
    return float(growth), float(v_res)


def prop3_margin(cert, est, delta_t):
    """Left side of the decrease condition, ``eps_s`` and whether it holds."""
    lhs = -cert.alpha3_fn(cert.alpha2_inv(cert.rho_s)) + est.Ls_x * (est.beta + est.M * delta_t)
    return float(lhs), float(est.eps_s), bool(lhs <= est.eps_s)


def theorem1_rho_e(cert, est, delta_t):
    """Largest admissible ``rho_e``; raises when it would fall below ``rho_s``."""
    gap = est.beta * np.exp(est.L_x * delta_t)
    rho_e = cert.rho - cert.alpha4(cert.alpha1_inv(cert.rho)) * gap - est.nu * gap * gap
    if rho_e <= cert.rho_s:
        raise CertificateError(f"no valid rho_e: bound {rho_e:.4g} is not above rho_s = {cert.rho_s:.4g}")
    return float(min(rho_e, cert.rho))


# -- runtime monitors ----------------------------------------------------------

@dataclass
class RegionReport:
    exits: int
    max_ratio: float
    samples: int


def region_monitor(cert, states):
    """Count sampling instants with ``V(x) > rho``."""
    v = cert.V_many(np.atleast_2d(states))
    return RegionReport(int(np.sum(v > cert.rho)), float(np.max(v) / cert.rho) if len(v) else 0.0, len(v))


def decrease_monitor(cert, est, states, period):
    """Observed ``dV/dt`` between instants that start in ``Omega_rho \\ Omega_rho_s``.

    Returns the worst observed rate and whether every rate is ``<= -eps_s``.
    """
    v = cert.V_many(np.atleast_2d(states))
    rates = np.diff(v) / period
    mask = (v[:-1] <= cert.rho) & (v[:-1] > cert.rho_s)
    if not mask.any():
        return float("nan"), True
    worst = float(np.max(rates[mask]))
    return worst, bool(worst <= -est.eps_s)


# -- simulation oracles for the bounds -----------------------------------------

def _substep_path(x0, theta, u, d, h, method, constants=DEFAULT_CONSTANTS):
    kernel = _kernels.hold_rk4 if method == "rk4" else _kernels.hold_euler
    theta = np.asarray(theta, float)
    u = np.asarray(u, float)
    path = np.empty((len(d) + 1, 4))
    path[0] = x0
    for i in range(len(d)):
        status, _, _ = kernel(path[i], theta, u, constants.packed, h, d[i:i + 1], path[i + 1])
        if status != _kernels.OK:
            raise ValueError("trajectory left the model domain")
    return path


def _draw_case(cert, rng, level=None):
    x0 = cert.sample(1, rng, level=level)[0]
    while not _valid(x0[None])[0]:
        x0 = cert.sample(1, rng, level=level)[0]
    theta = rng.uniform(THETA_LOW, THETA_HIGH, 6)
    u = rng.uniform(cert.u_low, cert.u_high)
    return x0, theta, u


def prop1_trials(cert, est, n_pairs=100, period=1.0, h=0.01, method="rk4", variant="printed", seed=0):
    """Worst ``f_d(t) - |x_nominal(t) - x_disturbed(t)|`` over each trial.

    Both trajectories start at the same state with the same kinetics and
    input; the disturbed one sees a fresh ``|d| <= delta`` every substep.
    """
    rng = np.random.default_rng(seed)
    n = int(round(period / h))
    times = h * np.arange(n + 1)
    bound = prop1_bound(times, est, variant)
    out = np.empty(n_pairs)
    for i in range(n_pairs):
        x0, theta, u = _draw_case(cert, rng)
        d = est.delta * _ball(rng, n, 4)
        nominal = _substep_path(x0, theta, u, np.zeros((n, 4)), h, method)
        disturbed = _substep_path(x0, theta, u, d, h, method)
        gap = np.linalg.norm(nominal - disturbed, axis=1)
        out[i] = np.min(bound - gap)
    return out


def prop2_growth_trials(cert, est, gap0=1e-4, n_pairs=100, period=1.0, h=0.01, method="rk4", seed=0):
    """``gap0 e^{L_x t} - |x(t) - x_tilde(t)|`` at ``t = period`` for seeded pairs."""
    rng = np.random.default_rng(seed)
    n = int(round(period / h))
    out = np.empty(n_pairs)
    zero = np.zeros((n, 4))
    for i in range(n_pairs):
        x0, theta, u = _draw_case(cert, rng, level=0.5 * cert.rho)
        x1 = x0 + gap0 * _sphere(rng, 1, 4)[0]
        a = _substep_path(x0, theta, u, zero, h, method)[-1]
        b = _substep_path(x1, theta, u, zero, h, method)[-1]
        out[i] = gap0 * np.exp(est.L_x * period) - np.linalg.norm(a - b)
    return out


def prop2_v_trials(cert, est, n_pairs=1000, seed=0):
    """``V``-bound residuals on random pairs inside ``Omega_rho``."""
    rng = np.random.default_rng(seed)
    X = cert.sample(n_pairs, rng)
    Y = cert.sample(n_pairs, rng)
    return np.array([prop2_checks(x, y, cert, est)[1] for x, y in zip(X, Y)])


def closed_loop_under_h(cert, x0, periods=20, period=1.0, h=0.01, method="rk4", theta=THETA_NOMINAL):
    """Sample-and-hold trajectory under ``h`` at the sampling instants."""
    from .sim import IntegratorConfig, integrate_hold

    cfg = IntegratorConfig(method=method, step_size=h, sampling_period=period)
    xs = [np.asarray(x0, float)]
    for _ in range(periods):
        xs.append(integrate_hold(xs[-1], theta, cert.h(xs[-1]), period, cfg).x)
    return np.array(xs)
