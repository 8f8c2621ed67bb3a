import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kph import ph_model
from kph.errors import NumericalError, StructureError
from kph.ph_model import drift, energy_rate, output, simulate, sub_fields

from oracles import central_jacobian

finite = st.floats(-4, 4, allow_nan=False)


def test_drift_examples(oscillator_ph):
    assert np.array_equal(drift(ph_model.pendulum(0.5), [0.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(drift(ph_model.pendulum(0.5), [np.pi / 2, 1.0]), [1.0, -1.5], atol=1e-15)
    lin = ph_model.linear_ph([[0, 1], [-1, 0]], np.diag([0, 0.3]), [[0], [1]])
    np.testing.assert_allclose(drift(lin, [1.0, 0.0]), [0.0, -1.0], atol=0)


def test_sub_fields_examples():
    vJ, vR = sub_fields(ph_model.pendulum(0.3), [np.pi / 2, 2.0])
    np.testing.assert_allclose(vJ, [2.0, -1.0], atol=1e-15)
    np.testing.assert_allclose(vR, [0.0, 0.6], atol=1e-15)
    vJ, vR = sub_fields(ph_model.pendulum(0.0), [0.7, -1.3])
    assert np.all(vR == 0)
    vJ, vR = sub_fields(ph_model.pendulum(0.3), [np.pi, 0.0])
    np.testing.assert_allclose(vJ, 0, atol=1e-15)
    np.testing.assert_allclose(vR, 0, atol=1e-15)


def test_output_examples():
    assert output(ph_model.pendulum(0.3), [np.pi / 2, 2.0]) == pytest.approx([2.0])
    assert output(ph_model.pendulum(0.3), [0.0, 0.0]) == pytest.approx([0.0])
    lin = ph_model.linear_ph([[0, 1], [-1, 0]], np.zeros((2, 2)), [[0], [1]])
    assert output(lin, [3.0, 4.0]) == pytest.approx([4.0])


def test_energy_rate_examples():
    assert energy_rate(ph_model.pendulum(0.3), [np.pi / 2, 2.0], [0.0]) == pytest.approx(-1.2, abs=1e-15)
    assert energy_rate(ph_model.pendulum(0.0), [1.1, -0.4], [0.0]) == 0.0
    assert energy_rate(ph_model.pendulum(0.5), [0.0, 1.0], [1.0]) == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(finite, finite, st.floats(0, 2), st.floats(-3, 3))
def test_pointwise_invariants(th, p, b, u):
    sys = ph_model.pendulum(b)
    x = np.array([th, p])
    vJ, vR = sub_fields(sys, x)
    assert np.array_equal(drift(sys, x), vJ - vR)
    assert abs(sys.gradH(x) @ vJ) <= 1e-10
    y = output(sys, x)
    assert energy_rate(sys, x, [u]) - float(y @ [u]) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 5))
def test_linear_invariants(seed, n):
    rng = np.random.default_rng(seed)
    lin = ph_model.random_linear_ph(rng, n, 2, Q=True)
    sys = lin.as_ph()
    x, u = rng.standard_normal(n), rng.standard_normal(2)
    np.testing.assert_allclose(drift(sys, x), lin.A @ x, rtol=1e-12, atol=1e-12)
    vJ, _ = sub_fields(sys, x)
    assert abs(sys.gradH(x) @ vJ) <= 1e-10 * max(1, np.linalg.norm(x) ** 2 * np.linalg.norm(lin.Q) ** 2)
    assert energy_rate(sys, x, u) <= float(output(sys, x) @ u) + 1e-12


@pytest.mark.parametrize("make", [lambda: ph_model.pendulum(0.3),
                                  lambda: ph_model.random_linear_ph(np.random.default_rng(3), 3, Q=True).as_ph()])
def test_gradH_consistent_with_H(make, rng):
    sys = make()
    for _ in range(10):
        x = rng.uniform(-2, 2, sys.n)
        err = [np.max(np.abs(central_jacobian(sys.H, x, h) - sys.gradH(x))) for h in (1e-2, 5e-3)]
        assert err[1] <= 1e-9 or 3.0 <= err[0] / err[1] <= 5.0


def test_structure_checks():
    bad_J = ph_model.PHSystem(2, 1, lambda x: np.array([[0, 1.0], [1.0, 0]]), lambda x: np.zeros((2, 2)),
                              lambda x: np.array([[0.0], [1.0]]), lambda x: 0.5 * x @ x, lambda x: x)
    with pytest.raises(StructureError):
        drift(bad_J, [1.0, 0.0])
    drift(bad_J, [1.0, 0.0], check=False)
    with pytest.raises(StructureError):
        ph_model.linear_ph(np.eye(2), np.zeros((2, 2)), [[0], [1]])
    with pytest.raises(StructureError):
        ph_model.linear_ph([[0, 1], [-1, 0]], np.diag([1.0, -0.1]), [[0], [1]])
    with pytest.raises(NumericalError):
        drift(ph_model.pendulum(0.3), [np.nan, 0.0])


def test_rk4_conserves_energy_without_damping():
    traj = simulate(ph_model.pendulum(0.0), [0.1, 0.0], None, t_end=10.0, dt=1e-3)
    assert np.max(np.abs(traj.energies - traj.energies[0])) < 1e-9


def test_rk4_energy_error_is_fourth_order():
    errs = []
    for dt in (0.1, 0.05):
        traj = simulate(ph_model.pendulum(0.0), [1.0, 0.5], None, t_end=5.0, dt=dt)
        errs.append(np.max(np.abs(traj.energies - traj.energies[0])))
    assert 10 <= errs[0] / errs[1] <= 40


def test_damped_energy_strictly_decreasing():
    traj = simulate(ph_model.pendulum(0.5), [1.0, 1.0], None, t_end=10.0, dt=1e-2)
    assert np.all(np.diff(traj.energies) < 0)


def test_equilibrium_is_constant():
    traj = simulate(ph_model.pendulum(0.3), [0.0, 0.0], None, t_end=2.0, dt=1e-2)
    assert np.all(traj.states == 0) and np.all(traj.energies == 0)


def test_energy_rate_matches_finite_differences_along_trajectory():
    sys = ph_model.pendulum(0.4)
    u = lambda t: np.array([0.5 * np.sin(t)])
    traj = simulate(sys, [1.0, -0.5], u, t_end=3.0, dt=1e-3)
    f = lambda t, x: ph_model.vector_field(sys, x, u(t))
    res = []
    for h in (0.02, 0.01):
        r = 0.0
        for k in range(0, len(traj), 300):
            t, x = traj.times[k], traj.states[k]
            fwd, bwd = x, x
            for i in range(20):
                fwd = ph_model.rk4_step(f, t + i * h / 20, fwd, h / 20)
                bwd = ph_model.rk4_step(f, t - i * h / 20, bwd, -h / 20)
            r = max(r, abs((sys.H(fwd) - sys.H(bwd)) / (2 * h) - energy_rate(sys, x, u(t))))
        res.append(r)
    assert 3.5 <= res[0] / res[1] <= 4.5


def test_blowup_guard():
    grow = ph_model.PHSystem(1, 1, lambda x: np.zeros((1, 1)), lambda x: -np.eye(1),
                             lambda x: np.ones((1, 1)), lambda x: 0.5 * x @ x, lambda x: x)
    with pytest.raises(NumericalError):
        simulate(grow, [1.0], None, t_end=40.0, dt=0.01)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        ph_model.Trajectory(np.array([0.0, 0.0]), np.zeros((2, 1)), np.zeros((2, 1)),
                            np.zeros((2, 1)), np.zeros(2))
