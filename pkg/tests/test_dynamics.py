import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import rollout_oracle, zoh_oracle
from dmpc_manip.dynamics import bounds, brake_input, discretize, input_from_states, rollout, step


@pytest.mark.parametrize("Ts", [0.05, 0.2, 1.0])
def test_discretize_matches_matrix_exponential(Ts):
    dyn = discretize(3, Ts)
    A, B = zoh_oracle(3, Ts)
    np.testing.assert_allclose(dyn.A, A, atol=1e-12, rtol=0)
    np.testing.assert_allclose(dyn.B, B, atol=1e-12, rtol=0)


def test_discretize_values():
    dyn = discretize(1, 0.2)
    np.testing.assert_allclose(dyn.A, [[1, 0.2], [0, 1]])
    np.testing.assert_allclose(dyn.B, [[0.02], [0.2]])
    zero = discretize(2, 0.0)
    np.testing.assert_array_equal(zero.A, np.eye(4))
    np.testing.assert_array_equal(zero.B, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        discretize(2, -0.1)


def test_step_examples():
    dyn = discretize(2, 0.2)
    np.testing.assert_allclose(step(dyn, np.zeros(4), np.ones(2)), [0.02, 0.02, 0.2, 0.2])
    x = np.array([0.1, -0.3, 0.7, -1.1])
    np.testing.assert_array_equal(step(dyn, x, np.zeros(2))[2:], x[2:])


def test_rollout_closed_form():
    dyn = discretize(1, 0.2)
    xs = rollout(dyn, np.zeros(2), np.full((10, 1), 1.5))
    t = 0.2 * np.arange(11)
    np.testing.assert_allclose(xs[:, 0], 0.5 * 1.5 * t**2, atol=1e-12)
    np.testing.assert_allclose(xs[:, 1], 1.5 * t, atol=1e-12)


def test_rollout_zero_input_drift():
    dyn = discretize(2, 0.1)
    xs = rollout(dyn, [0, 0, 1, -2], np.zeros((5, 2)))
    np.testing.assert_allclose(xs[:, 2:], [[1, -2]] * 6)
    np.testing.assert_allclose(xs[-1, :2], [0.5, -1.0])


def test_rollout_matches_double_loop(rng):
    dyn = discretize(3, 0.2)
    x0, us = rng.normal(size=6), rng.normal(size=(12, 3))
    np.testing.assert_allclose(rollout(dyn, x0, us), rollout_oracle(dyn.A, dyn.B, x0, us), atol=1e-12)
    np.testing.assert_allclose(rollout(dyn, x0, us)[3], step(dyn, step(dyn, step(dyn, x0, us[0]), us[1]), us[2]))


def test_bounds_ur3(ur3):
    b = bounds(ur3)
    lim = np.pi * np.array([1, 1, 1, 2, 2, 2])
    np.testing.assert_allclose(b.x_max[6:], lim)
    np.testing.assert_allclose(b.u_max, lim)
    np.testing.assert_allclose(b.u_min, -lim)
    assert b.contains_state(np.zeros(12)) and b.contains_input(np.zeros(6))
    x = np.zeros(12)
    x[6] = np.pi + 1e-9
    assert not b.contains_state(x)
    assert b.contains_state(x, tol=1e-8)
    assert b.state_violation(x) == pytest.approx(1e-9)


def test_input_recovery_and_brake(ur3):
    dyn = discretize(6, 0.2)
    x = np.concatenate([np.zeros(6), [0.1, -0.5, 2.0, 0, 0, 0]])
    u = np.array([0.3, 0.1, -0.2, 0, 1, 0])
    np.testing.assert_allclose(input_from_states(dyn, x, step(dyn, x, u)), u, atol=1e-12)
    ub = brake_input(ur3, x, 0.2)
    np.testing.assert_allclose(ub[:2], [-0.5, 2.5])
    assert ub[2] == pytest.approx(-np.pi)


vec = st.lists(st.floats(-10, 10), min_size=4, max_size=4).map(np.array)
inp = st.lists(st.floats(-10, 10), min_size=2, max_size=2).map(np.array)


@settings(max_examples=60, deadline=None)
@given(vec, vec, inp, inp, st.floats(0.0, 1.0))
def test_step_linearity(x1, x2, u1, u2, Ts):
    dyn = discretize(2, Ts)
    lhs = step(dyn, x1 + x2, u1 + u2)
    rhs = step(dyn, x1, u1) + step(dyn, x2, u2) - step(dyn, np.zeros(4), np.zeros(2))
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)
