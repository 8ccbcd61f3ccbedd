"""Compiled inner loops for the dimensionless ethylene-oxide CSTR.

Everything here works on plain float64 arrays so numba can compile it.
The packed constant vector ``c`` is ``[g1, g2, g3, A1, A2, A3, B1, B2, B3, B4]``.

Fractional-power bases are floored at zero inside the integrators (a slightly
negative concentration at an intermediate RK stage contributes no reaction);
the public ``eval_rhs`` in :mod:`rlempc.model` rejects such states instead.
"""

import math

import numpy as np
from numba import njit

# status codes returned by the integrators
OK = 0
DOMAIN = 1
NONFINITE = 2

_PFLOOR = 1e-12


@njit(cache=True)
def rhs(x, th, u, c, out):
    x1 = x[0]
    x2 = x[1]
    x3 = x[2]
    x4 = x[3]
    p2 = x2 * x4
    p3 = x3 * x4
    if p2 < 0.0:
        p2 = 0.0
    if p3 < 0.0:
        p3 = 0.0
    s2 = math.sqrt(p2)
    q2 = math.sqrt(s2)
    s3 = math.sqrt(p3)
    r1 = c[3] * th[3] * math.exp(c[0] * th[0] / x4) * s2
    r2 = c[4] * th[4] * math.exp(c[1] * th[1] / x4) * q2
    r3 = c[5] * th[5] * math.exp(c[2] * th[2] / x4) * s3
    h1 = c[6] * math.exp(c[0] / x4) * s2
    h2 = c[7] * math.exp(c[1] / x4) * q2
    h3 = c[8] * math.exp(c[2] / x4) * s3
    out[0] = u[0] * (1.0 - x1 * x4)
    out[1] = u[0] * (u[1] - x2 * x4) - r1 - r2
    out[2] = -u[0] * x3 * x4 + r1 - r3
    out[3] = (u[0] * (1.0 - x4) + h1 + h2 + h3 - c[9] * (x4 - u[2])) / x1


@njit(cache=True)
def rhs_jac(x, th, u, c, fx, fu):
    """Partial derivatives of ``rhs`` w.r.t. state (4x4) and input (4x3)."""
    x1 = x[0]
    x2 = x[1]
    x3 = x[2]
    x4 = x[3]
    p2 = x2 * x4
    p3 = x3 * x4
    if p2 < 0.0:
        p2 = 0.0
    if p3 < 0.0:
        p3 = 0.0
    s2 = math.sqrt(p2)
    q2 = math.sqrt(s2)
    s3 = math.sqrt(p3)
    pd2 = p2 if p2 > _PFLOOR else _PFLOOR
    pd3 = p3 if p3 > _PFLOOR else _PFLOOR
    # d/dp of p**0.5 and p**0.25
    ds2 = 0.5 / math.sqrt(pd2)
    dq2 = 0.25 * pd2 ** -0.75
    ds3 = 0.5 / math.sqrt(pd3)
    if p2 == 0.0:
        ds2 = 0.0
        dq2 = 0.0
    if p3 == 0.0:
        ds3 = 0.0
    ix4sq = 1.0 / (x4 * x4)

    k1 = c[3] * th[3] * math.exp(c[0] * th[0] / x4)
    k2 = c[4] * th[4] * math.exp(c[1] * th[1] / x4)
    k3 = c[5] * th[5] * math.exp(c[2] * th[2] / x4)
    r1 = k1 * s2
    r2 = k2 * q2
    r3 = k3 * s3
    dr1_x2 = k1 * ds2 * x4
    dr1_x4 = -r1 * c[0] * th[0] * ix4sq + k1 * ds2 * x2
    dr2_x2 = k2 * dq2 * x4
    dr2_x4 = -r2 * c[1] * th[1] * ix4sq + k2 * dq2 * x2
    dr3_x3 = k3 * ds3 * x4
    dr3_x4 = -r3 * c[2] * th[2] * ix4sq + k3 * ds3 * x3

    b1 = c[6] * math.exp(c[0] / x4)
    b2 = c[7] * math.exp(c[1] / x4)
    b3 = c[8] * math.exp(c[2] / x4)
    h1 = b1 * s2
    h2 = b2 * q2
    h3 = b3 * s3
    dh1_x2 = b1 * ds2 * x4
    dh1_x4 = -h1 * c[0] * ix4sq + b1 * ds2 * x2
    dh2_x2 = b2 * dq2 * x4
    dh2_x4 = -h2 * c[1] * ix4sq + b2 * dq2 * x2
    dh3_x3 = b3 * ds3 * x4
    dh3_x4 = -h3 * c[2] * ix4sq + b3 * ds3 * x3

    for i in range(4):
        for j in range(4):
            fx[i, j] = 0.0
        for j in range(3):
            fu[i, j] = 0.0

    fx[0, 0] = -u[0] * x4
    fx[0, 3] = -u[0] * x1
    fu[0, 0] = 1.0 - x1 * x4

    fx[1, 1] = -u[0] * x4 - dr1_x2 - dr2_x2
    fx[1, 3] = -u[0] * x2 - dr1_x4 - dr2_x4
    fu[1, 0] = u[1] - x2 * x4
    fu[1, 1] = u[0]

    fx[2, 1] = dr1_x2
    fx[2, 2] = -u[0] * x4 - dr3_x3
    fx[2, 3] = -u[0] * x3 + dr1_x4 - dr3_x4
    fu[2, 0] = -x3 * x4

    g = u[0] * (1.0 - x4) + h1 + h2 + h3 - c[9] * (x4 - u[2])
    fx[3, 0] = -g / (x1 * x1)
    fx[3, 1] = (dh1_x2 + dh2_x2) / x1
    fx[3, 2] = dh3_x3 / x1
    fx[3, 3] = (-u[0] + dh1_x4 + dh2_x4 + dh3_x4 - c[9]) / x1
    fu[3, 0] = (1.0 - x4) / x1
    fu[3, 2] = c[9] / x1


@njit(cache=True)
def _clamp(x):
    n = 0
    if x[1] < 0.0:
        x[1] = 0.0
        n = 1
    if x[2] < 0.0:
        x[2] = 0.0
        n = 1
    return n


@njit(cache=True)
def _bad(x):
    for i in range(4):
        if not math.isfinite(x[i]):
            return NONFINITE
    if x[0] <= 0.0 or x[3] <= 0.0:
        return DOMAIN
    return OK


@njit(cache=True)
def hold_euler(x0, th, u, c, h, d, out):
    """Forward Euler over ``d.shape[0]`` substeps with the rate offset ``d[n]``.

    Returns ``(status, substeps_with_clamping, first_clamp_substep)``.
    """
    x = x0.copy()
    k = np.empty(4)
    nclamp = 0
    first = -1
    for n in range(d.shape[0]):
        st = _bad(x)
        if st != OK:
            out[:] = x
            return st, nclamp, first
        rhs(x, th, u, c, k)
        for i in range(4):
            x[i] += h * (k[i] + d[n, i])
        if _clamp(x):
            nclamp += 1
            if first < 0:
                first = n
    out[:] = x
    return _bad(x), nclamp, first


@njit(cache=True)
def hold_rk4(x0, th, u, c, h, d, out):
    """Classical RK4 over ``d.shape[0]`` substeps, ``d[n]`` held over substep n."""
    x = x0.copy()
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    xt = np.empty(4)
    nclamp = 0
    first = -1
    for n in range(d.shape[0]):
        st = _bad(x)
        if st != OK:
            out[:] = x
            return st, nclamp, first
        rhs(x, th, u, c, k1)
        for i in range(4):
            k1[i] += d[n, i]
            xt[i] = x[i] + 0.5 * h * k1[i]
        if xt[0] <= 0.0 or xt[3] <= 0.0:
            out[:] = xt
            return DOMAIN, nclamp, first
        rhs(xt, th, u, c, k2)
        for i in range(4):
            k2[i] += d[n, i]
            xt[i] = x[i] + 0.5 * h * k2[i]
        if xt[0] <= 0.0 or xt[3] <= 0.0:
            out[:] = xt
            return DOMAIN, nclamp, first
        rhs(xt, th, u, c, k3)
        for i in range(4):
            k3[i] += d[n, i]
            xt[i] = x[i] + h * k3[i]
        if xt[0] <= 0.0 or xt[3] <= 0.0:
            out[:] = xt
            return DOMAIN, nclamp, first
        rhs(xt, th, u, c, k4)
        for i in range(4):
            k4[i] += d[n, i]
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        if _clamp(x):
            nclamp += 1
            if first < 0:
                first = n
    out[:] = x
    return _bad(x), nclamp, first


@njit(cache=True)
def stage(x, u, kind):
    if kind == 0:
        return u[0] * x[2] * x[3]
    return x[2] * x[3] / u[1]


@njit(cache=True)
def stage_grad(x, u, kind, gx, gu):
    for i in range(4):
        gx[i] = 0.0
    for j in range(3):
        gu[j] = 0.0
    if kind == 0:
        gx[2] = u[0] * x[3]
        gx[3] = u[0] * x[2]
        gu[0] = x[2] * x[3]
    else:
        gx[2] = x[3] / u[1]
        gx[3] = x[2] / u[1]
        gu[1] = -x[2] * x[3] / (u[1] * u[1])


@njit(cache=True)
def rollout(x0, th, U, c, h, nsub, kind, X):
    """Euler rollout of held inputs ``U`` (N x 3); fills every substep into ``X``.

    Returns ``(status, value)`` where value is ``h * sum(stage(x_n, u_n))``
    over all substeps (left rectangle rule on the Euler grid).
    """
    N = U.shape[0]
    k = np.empty(4)
    x = x0.copy()
    X[0, :] = x
    val = 0.0
    m = 0
    for p in range(N):
        u = U[p]
        for s in range(nsub):
            st = _bad(x)
            if st != OK:
                return st, val
            val += h * stage(x, u, kind)
            rhs(x, th, u, c, k)
            for i in range(4):
                x[i] += h * k[i]
            _clamp(x)
            m += 1
            X[m, :] = x
    return _bad(x), val


@njit(cache=True)
def rollout_adjoint(X, th, U, c, h, nsub, kind, seed_idx, seed, gU):
    """Gradient of the rollout value w.r.t. ``U`` by reverse sweep.

    ``seed`` (4,) is added to the co-state at substep ``seed_idx`` (pass -1 for
    none); this carries the gradient of any extra function of a single state.
    """
    N = U.shape[0]
    M = N * nsub
    lam = np.zeros(4)
    fx = np.empty((4, 4))
    fu = np.empty((4, 3))
    gx = np.empty(4)
    gu = np.empty(3)
    for p in range(N):
        for j in range(3):
            gU[p, j] = 0.0
    if seed_idx == M:
        for i in range(4):
            lam[i] += seed[i]
    nl = np.empty(4)
    for n in range(M - 1, -1, -1):
        p = n // nsub
        u = U[p]
        x = X[n]
        rhs_jac(x, th, u, c, fx, fu)
        stage_grad(x, u, kind, gx, gu)
        for j in range(3):
            acc = h * gu[j]
            for i in range(4):
                acc += h * fu[i, j] * lam[i]
            gU[p, j] += acc
        for j in range(4):
            acc = lam[j] + h * gx[j]
            for i in range(4):
                acc += h * fx[i, j] * lam[i]
            nl[j] = acc
        for j in range(4):
            lam[j] = nl[j]
        if n == seed_idx:
            for i in range(4):
                lam[i] += seed[i]
