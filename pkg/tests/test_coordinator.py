import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmpc_manip.comms import DeadlockReport
from dmpc_manip.coordinator import Coordinator, DeadlockParams, cluster, detect_deadlock, residuum, resolve
from dmpc_manip.kinematics import planar_model

P = DeadlockParams()


def prediction(qd0, qdN, n=1, Np=5):
    s = np.zeros((Np + 1, 2 * n))
    s[:, n:] = np.linspace(qd0, qdN, Np + 1).reshape(-1, n)
    return s


def test_detect_deadlock_cases():
    xs, xf = np.zeros(2), np.array([0.5, 0.0])
    assert detect_deadlock(prediction(0.2, 0.2), xs, xf, P)
    assert not detect_deadlock(prediction(0.2, 0.2), xs, xs, P)
    assert not detect_deadlock(prediction(0.0, 0.3), xs, xf, P)


def test_residuum(rng):
    assert residuum(np.zeros(4), np.zeros(4)) == 0.0
    assert residuum([1, 0, 0, 0], np.zeros(4)) == 1.0
    a, b = rng.normal(size=12), rng.normal(size=12)
    assert residuum(a, b) == pytest.approx(np.sqrt(np.sum((a - b) ** 2)))


def three_planar(gap12=0.15, far=5.0):
    """Robot 0 and 1 parallel arms gap12 apart, robot 2 far away (all straight along x)."""
    return [planar_model(2, base_position=[0, 0, 0]),
            planar_model(2, base_position=[0, gap12, 0]),
            planar_model(2, base_position=[0, far, 0])]


def test_cluster_hand_trace():
    models = three_planar()
    q = [np.zeros(2)] * 3
    assert cluster(q, [True, False, False], models, P) == [[0, 1], [2]]
    assert cluster(q, [False, False, False], models, P) == [[0], [1], [2]]


def test_cluster_transitive():
    models = [planar_model(2, base_position=[0, 0.15 * i, 0]) for i in range(3)]
    assert cluster([np.zeros(2)] * 3, [True, False, False], models, P) == [[0, 1], [2]]
    # flagged robot 1 pulls in both of its neighbours
    assert cluster([np.zeros(2)] * 3, [False, True, False], models, P) == [[0, 1, 2]]
    close = [planar_model(2, base_position=[0, 0.05 * i, 0]) for i in range(3)]
    assert cluster([np.zeros(2)] * 3, [True, False, False], close, P) == [[0, 1, 2]]


def test_resolve():
    assert resolve([[0, 1]], {0: 0.3, 1: 0.7}) == {0: True, 1: False}
    assert resolve([[0], [1]], {0: 0.3, 1: 0.7}) == {0: True, 1: True}
    assert resolve([[0, 1]], {0: 0.5, 1: 0.5}) == {0: True, 1: False}
    with pytest.raises(ValueError):
        resolve([[]], {})


def reports(step, xs, xf, flags):
    return [DeadlockReport(i, step, f, a, b) for i, (a, b, f) in enumerate(zip(xs, xf, flags))]


def test_coordinator_two_step_trace():
    models = three_planar()
    neutral = [np.array([1.0, 0, 0, 0])] * 3
    coord = Coordinator(models, neutral, P)
    x = [np.zeros(4)] * 3
    targets = [np.array([0.3, 0, 0, 0]), np.array([0.7, 0, 0, 0]), np.array([2.0, 0, 0, 0])]
    cmds = coord.update(0, reports(0, x, targets, [True, True, True]))
    assert [c.gamma_R for c in cmds] == [True, False, True]
    assert cmds[1].has_override and np.array_equal(cmds[1].override_target, neutral[1])
    assert not cmds[0].has_override and not cmds[2].has_override
    assert coord.events == [(0, [0, 1], 0)]
    # active robot reaches its target: cluster dissolves, everybody active again
    x = [targets[0], np.zeros(4), np.zeros(4)]
    cmds = coord.update(1, reports(1, x, targets, [False, False, False]))
    assert all(c.gamma_R and not c.has_override for c in cmds)
    assert coord.reactivations == [(1, [0, 1])]


def test_coordinator_stall_release():
    models = three_planar()[:2]
    neutral = [np.array([1.0, 0, 0, 0])] * 2
    coord = Coordinator(models, neutral, P)
    targets = [np.array([0.3, 0, 0, 0]), np.array([0.7, 0, 0, 0])]
    coord.update(0, reports(0, [np.zeros(4)] * 2, targets, [True, True]))
    # still stuck, robot 1 not yet parked: resolution stays open
    cmds = coord.update(1, reports(1, [np.zeros(4)] * 2, targets, [True, False]))
    assert [c.gamma_R for c in cmds] == [True, False]
    # robot 1 parked at neutral and the active robot still reports a deadlock
    cmds = coord.update(2, reports(2, [np.zeros(4), neutral[1]], targets, [True, False]))
    assert coord.reactivations == [(2, [0, 1])]


def test_params_validated():
    with pytest.raises(ValueError):
        DeadlockParams(eps_v=0.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1), st.floats(1e-3, 1))
def test_detect_monotone_in_delta_x(dv, dist, d1, d2):
    lo, hi = sorted((d1, d2))
    xs, xf = np.zeros(2), np.array([dist, 0.0])
    sol = prediction(0.0, dv)
    if detect_deadlock(sol, xs, xf, DeadlockParams(delta_x=hi)):
        assert detect_deadlock(sol, xs, xf, DeadlockParams(delta_x=lo))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=4, max_size=4), st.lists(st.booleans(), min_size=4, max_size=4))
def test_cluster_partition_and_single_active(offsets, flags):
    models = [planar_model(2, base_position=[0, y, 0]) for y in offsets]
    groups = cluster([np.zeros(2)] * 4, flags, models, P)
    assert sorted(r for g in groups for r in g) == [0, 1, 2, 3]
    if not any(flags):
        assert all(len(g) == 1 for g in groups)
    active = resolve(groups, {i: float(i) for i in range(4)})
    for g in groups:
        assert sum(active[r] for r in g) == 1
