import numpy as np
import pytest
from scipy.integrate import solve_ivp

from rlempc.model import THETA_NOMINAL, U_S, X_S, eval_rhs
from rlempc.scenario import named_scenario
from rlempc.sim import IntegratorConfig, NoiseConfig, Plant, Trajectory, integrate_hold, substeps


def reference(x0, theta, u, span):
    sol = solve_ivp(lambda t, x: eval_rhs(x, theta, u), (0, span), x0, method="DOP853", rtol=1e-13, atol=1e-13)
    return sol.y[:, -1]


def observed_orders(method, span=1.0):
    x0 = np.array([0.9, 0.45, 0.02, 1.05])
    u = np.array([0.2, 0.5, 1.1])
    ref = reference(x0, THETA_NOMINAL, u, span)
    hs = [0.02, 0.01, 0.005]
    errs = [np.linalg.norm(integrate_hold(x0, THETA_NOMINAL, u, span, IntegratorConfig(method, h)).x - ref)
            for h in hs]
    return [np.log2(errs[i] / errs[i + 1]) for i in range(len(hs) - 1)]


@pytest.mark.parametrize("method,order", [("euler", 1), ("rk4", 4)])
def test_convergence_order(method, order):
    for p in observed_orders(method):
        assert abs(p - order) <= 0.3


def test_zero_span_returns_start():
    x = integrate_hold(X_S, THETA_NOMINAL, U_S, 0.0).x
    np.testing.assert_array_equal(x, X_S)


def test_step_must_divide_span():
    with pytest.raises(ValueError):
        integrate_hold(X_S, THETA_NOMINAL, U_S, 1.0, IntegratorConfig(step_size=0.3, sampling_period=0.9))
    assert substeps(1.0, 0.01) == 100
    with pytest.raises(ValueError):
        IntegratorConfig(method="rk45")


def test_constant_disturbance_shifts_result():
    a = integrate_hold(X_S, THETA_NOMINAL, U_S, 1.0).x
    b = integrate_hold(X_S, THETA_NOMINAL, U_S, 1.0, d_source=np.array([0, 0, 1e-3, 0])).x
    assert b[2] > a[2]


def test_disturbance_shape_checked():
    with pytest.raises(ValueError):
        integrate_hold(X_S, THETA_NOMINAL, U_S, 1.0, d_source=np.zeros((3, 4)))


def test_clamp_keeps_concentrations_non_negative():
    # strong negative rate noise on x3 would drive it below zero
    res = integrate_hold(np.array([1.0, 0.4, 1e-4, 1.0]), THETA_NOMINAL, U_S, 0.1,
                         d_source=np.array([0, 0, -1.0, 0]))
    assert res.x[2] >= 0
    assert res.clamped_substeps > 0


def test_plant_noise_is_seeded():
    sc = named_scenario("noise", t_final=5.0)
    runs = []
    for _ in range(2):
        p = Plant(X_S, sc, rng=np.random.default_rng(7))
        runs.append(np.array([p.step(U_S, float(k)) for k in range(5)]))
    np.testing.assert_array_equal(runs[0], runs[1])
    p = Plant(X_S, sc, rng=np.random.default_rng(8))
    assert not np.array_equal(runs[0][-1], p.step(U_S, 0.0))


def test_measurement_noise_leaves_state():
    sc = named_scenario("nominal", noise=NoiseConfig(enabled=True, mode="measurement"))
    p = Plant(X_S, sc, rng=np.random.default_rng(0))
    y = p.measure()
    np.testing.assert_array_equal(p.x, X_S)
    assert not np.array_equal(y, X_S)


def test_trajectory_csv_round_trip():
    tr = Trajectory()
    tr.append(0.0, X_S, X_S, U_S, THETA_NOMINAL, THETA_NOMINAL, 4.0, 0.1, "1")
    tr.append(1.0, X_S * 1.01, X_S, U_S, THETA_NOMINAL * 1.01, THETA_NOMINAL, -2.0, 0.2, "")
    text = tr.to_csv({"seed": 3})
    assert text.startswith("# seed: 3\n")
    back = Trajectory.from_csv(text)
    assert back.to_csv({"seed": 3}) == text
    head = text.splitlines()[1].split(",")
    assert head[0] == "time" and head[-1] == "mode" and len(head) == 27


@pytest.mark.parametrize("method", ["euler", "rk4"])
def test_washout_fixed_point_preserved(method):
    x = integrate_hold(np.array([1.0, 0.0, 0.0, 1.0]), THETA_NOMINAL, np.array([0.35, 0.0, 1.0]), 1.0,
                       IntegratorConfig(method))
    np.testing.assert_array_equal(x.x, [1.0, 0.0, 0.0, 1.0])


@pytest.mark.parametrize("method,tol", [("euler", 1e-3), ("rk4", 1e-7)])
def test_one_period_from_reported_point(method, tol):
    ref = reference(X_S, THETA_NOMINAL, U_S, 1.0)
    x = integrate_hold(X_S, THETA_NOMINAL, U_S, 1.0, IntegratorConfig(method)).x
    assert np.max(np.abs(x - ref)) < tol


def test_hold_equals_composition_of_substeps():
    cfg = IntegratorConfig("rk4", 0.01)
    whole = integrate_hold(X_S, THETA_NOMINAL, U_S, 1.0, cfg).x
    x = X_S
    for _ in range(100):
        x = integrate_hold(x, THETA_NOMINAL, U_S, 0.01, cfg).x
    np.testing.assert_allclose(whole, x, rtol=0, atol=1e-15)


def test_spike_reaches_plant():
    sc = named_scenario("spike", deactivation=False)
    a = Plant(X_S, sc)
    b = Plant(X_S, named_scenario("nominal"))
    np.testing.assert_array_equal(a.step(U_S, 10.0), b.step(U_S, 10.0))
    assert not np.array_equal(a.step(U_S, 55.0), b.step(U_S, 55.0))
