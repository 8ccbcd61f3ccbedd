import numpy as np
import pytest
from hypothesis import given, strategies as st

from rlempc.model import (
    DEACTIVATION_DIRECTION, DEFAULT_CONSTANTS, THETA_NOMINAL, U_S, X_S, DomainError, ModelConstants,
    check_theta, eval_rhs, kinetic_schedule, rhs_jacobian, steady_state,
)

# equilibrium of the implemented model at theta = 1, u = u_s (frozen from a tight root solve)
X_E = np.array([0.99788, 0.37349, 0.04435, 1.00212])

thetas = st.lists(st.floats(0.9, 1.1), min_size=6, max_size=6).map(np.array)
feeds = st.floats(0.071, 0.71)


def test_steady_state_frozen():
    x = steady_state()
    np.testing.assert_allclose(x, X_E, atol=1e-5)
    assert np.max(np.abs(eval_rhs(x, THETA_NOMINAL, U_S))) < 1e-10


def test_equilibrium_is_stable():
    fx, _ = rhs_jacobian(steady_state(), THETA_NOMINAL, U_S)
    assert np.max(np.linalg.eigvals(fx).real) < 0


def test_steady_state_fallback_from_far_start():
    x = steady_state(kinetic_schedule(5), np.array([0.2, 0.5, 1.1]))
    assert np.max(np.abs(eval_rhs(x, kinetic_schedule(5), np.array([0.2, 0.5, 1.1])))) < 1e-9


@given(thetas, feeds)
def test_washout_state_is_exact_equilibrium(theta, u1):
    f = eval_rhs(np.array([1.0, 0.0, 0.0, 1.0]), theta, np.array([u1, 0.0, 1.0]), np.zeros(4))
    assert np.all(f == 0.0)


@given(thetas, st.floats(0.8, 1.2), st.floats(0.1, 1.0))
def test_jacobian_matches_central_differences(theta, x4, x2):
    x = np.array([1.0, x2, 0.05, x4])
    u = np.array([0.2, 0.5, 1.0])
    fx, fu = rhs_jacobian(x, theta, u)
    h = 1e-6
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        fd = (eval_rhs(x + e, theta, u) - eval_rhs(x - e, theta, u)) / (2 * h)
        np.testing.assert_allclose(fx[:, j], fd, rtol=1e-5, atol=1e-6)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (eval_rhs(x, theta, u + e) - eval_rhs(x, theta, u - e)) / (2 * h)
        np.testing.assert_allclose(fu[:, j], fd, rtol=1e-5, atol=1e-6)


def test_coolant_removes_heat():
    # hotter coolant heats the reactor
    x = X_E.copy()
    lo = eval_rhs(x, THETA_NOMINAL, np.array([0.2, 0.5, 0.9]))[3]
    hi = eval_rhs(x, THETA_NOMINAL, np.array([0.2, 0.5, 1.1]))[3]
    assert hi > lo


def test_disturbance_is_additive():
    d = np.array([0.1, -0.2, 0.3, -0.4])
    np.testing.assert_allclose(eval_rhs(X_S, THETA_NOMINAL, U_S, d) - eval_rhs(X_S, THETA_NOMINAL, U_S), d,
                               atol=1e-14)


@pytest.mark.parametrize("x", [[0.0, 0.4, 0.03, 1.0], [1.0, 0.4, 0.03, -1.0], [1.0, np.nan, 0.03, 1.0],
                               [1.0, -0.1, 0.03, 1.0]])
def test_domain_errors(x):
    with pytest.raises(DomainError):
        eval_rhs(np.array(x), THETA_NOMINAL, U_S)


def test_shape_errors():
    with pytest.raises(ValueError):
        eval_rhs(np.ones(3), THETA_NOMINAL, U_S)
    with pytest.raises(ValueError):
        eval_rhs(X_S, np.ones(5), U_S)


def test_kinetic_schedule():
    np.testing.assert_array_equal(kinetic_schedule(0), np.ones(6))
    np.testing.assert_allclose(kinetic_schedule(5), 1 + 0.05 * DEACTIVATION_DIRECTION)
    with pytest.raises(ValueError):
        kinetic_schedule(6)
    with pytest.raises(ValueError):
        kinetic_schedule(1.5)


def test_check_theta_box():
    check_theta(np.full(6, 1.1))
    with pytest.raises(ValueError):
        check_theta(np.full(6, 1.2))


def test_constants_validation_and_override():
    with pytest.raises(ValueError):
        ModelConstants(gamma=(1.0, -7.12, -11.07))
    with pytest.raises(ValueError):
        ModelConstants(B=(1.0, 2.0))
    c = ModelConstants(B=(7.32, 10.39, 2170.57, 8.0))
    assert not np.allclose(eval_rhs(X_S, THETA_NOMINAL, U_S, constants=c),
                           eval_rhs(X_S, THETA_NOMINAL, U_S, constants=DEFAULT_CONSTANTS))


@given(st.floats(0.9, 1.09))
def test_pre_exponential_of_first_reaction_is_monotone(t4):
    th_lo = np.ones(6)
    th_hi = np.ones(6)
    th_lo[3] = t4
    th_hi[3] = t4 + 0.01
    lo = eval_rhs(X_S, th_lo, U_S)
    hi = eval_rhs(X_S, th_hi, U_S)
    assert hi[1] < lo[1] and hi[2] > lo[2]


def test_reported_point_is_closer_at_higher_feed():
    # the reported steady state sits 0.0585 off the root at u1 = 0.2 but within 0.0085 at u1 = 0.35
    far = np.max(np.abs(steady_state() - X_S))
    near = np.max(np.abs(steady_state(u=np.array([0.35, 0.5, 1.0])) - X_S))
    assert far == pytest.approx(0.0585, abs=5e-4)
    assert near < 0.0085


def test_eval_rhs_is_pure():
    a = eval_rhs(X_S, THETA_NOMINAL, U_S)
    b = eval_rhs(X_S.copy(), THETA_NOMINAL.copy(), U_S.copy())
    assert a.tobytes() == b.tobytes()
