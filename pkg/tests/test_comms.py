from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmpc_manip.comms import (
    CoordinatorCommand,
    DeadlockReport,
    DecodeError,
    DecodeErrorCode,
    InProcessTransport,
    LossyTransport,
    TrajectoryMessage,
    UdpTransport,
    decode,
    encode,
)
from dmpc_manip.sim import builtin_scenario_path, load_scenario, run

DATA = Path(__file__).parent / "data"


def golden(name):
    return bytes.fromhex((DATA / name).read_text().strip())


GOLDEN = {
    "trajectory_n1_np2.hex": TrajectoryMessage(3, 7, np.zeros((3, 2))),
    "report_n1.hex": DeadlockReport(1, 258, True, [0.5, -1.0], [1.0, 0.0]),
    "command.hex": CoordinatorCommand(2, 9, False),
    "command_override.hex": CoordinatorCommand(2, 9, False, [0.25, 0.0]),
}


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_vectors(name):
    raw = golden(name)
    assert encode(GOLDEN[name]) == raw
    assert decode(raw) == GOLDEN[name]
    assert encode(decode(raw)) == raw


def test_trajectory_length_arithmetic():
    assert len(golden("trajectory_n1_np2.hex")) == 4 + 1 + 1 + 2 + 8 + 1 + 2 + 3 * 2 * 8 == 67


@pytest.mark.parametrize("mutate, code", [
    (lambda b: b"X" + b[1:], DecodeErrorCode.BAD_MAGIC),
    (lambda b: b[:4] + b"\x02" + b[5:], DecodeErrorCode.BAD_VERSION),
    (lambda b: b[:5] + b"\x09" + b[6:], DecodeErrorCode.BAD_TYPE),
    (lambda b: b[:-1], DecodeErrorCode.TRUNCATED),
    (lambda b: b[:10], DecodeErrorCode.TRUNCATED),
    (lambda b: b + b"\x00", DecodeErrorCode.TRAILING),
])
def test_decode_errors(mutate, code):
    with pytest.raises(DecodeError) as exc:
        decode(mutate(golden("trajectory_n1_np2.hex")))
    assert exc.value.code is code


def test_bad_magic_message():
    with pytest.raises(DecodeError, match="bad magic"):
        decode(b"DMPX" + golden("command.hex")[4:])


def test_invalid_flag_rejected():
    raw = bytearray(golden("command.hex"))
    raw[16] = 7
    with pytest.raises(DecodeError) as exc:
        decode(bytes(raw))
    assert exc.value.code is DecodeErrorCode.INVALID


reals = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def messages(draw):
    kind = draw(st.sampled_from(["traj", "report", "cmd"]))
    rid = draw(st.integers(0, 2**16 - 1))
    step = draw(st.integers(0, 2**64 - 1))
    n = draw(st.integers(1, 7))
    if kind == "traj":
        Np = draw(st.integers(0, 6))
        vals = draw(st.lists(reals, min_size=(Np + 1) * 2 * n, max_size=(Np + 1) * 2 * n))
        return TrajectoryMessage(rid, step, np.array(vals).reshape(Np + 1, 2 * n))
    if kind == "report":
        vals = draw(st.lists(reals, min_size=4 * n, max_size=4 * n))
        return DeadlockReport(rid, step, draw(st.booleans()), vals[:2 * n], vals[2 * n:])
    target = draw(st.none() | st.lists(reals, min_size=2 * n, max_size=2 * n))
    return CoordinatorCommand(rid, step, draw(st.booleans()), target)


@settings(max_examples=200, deadline=None)
@given(messages())
def test_round_trip(msg):
    assert decode(encode(msg)) == msg


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=80))
def test_decode_total(data):
    try:
        msg = decode(data)
    except DecodeError:
        return
    assert encode(msg) == data


def test_inprocess_transport_order():
    t = InProcessTransport()
    t.register("a")
    for i in range(3):
        t.send("a", bytes([i]))
    assert t.receive("a") == [b"\x00", b"\x01", b"\x02"]
    assert t.receive("a") == []


def test_udp_transport_loopback():
    t = UdpTransport()
    try:
        t.register("a")
        t.register("b")
        payload = encode(GOLDEN["report_n1.hex"])
        t.send("b", payload)
        assert t.receive("b", expected=1) == [payload]
    finally:
        t.close()


def test_udp_bind_error_names_address():
    t = UdpTransport()
    try:
        t.register("a")
        port = t.address("a")[1]
        with pytest.raises(OSError, match=f"127.0.0.1:{port}"):
            t.register("b", port)
    finally:
        t.close()


@pytest.fixture(scope="module")
def short_crossing():
    return load_scenario(builtin_scenario_path("crossing")).replace(steps=25)


def drop_trajectories(sender, dest, steps):
    def drop(to, payload):
        msg = decode(payload)
        return (isinstance(msg, TrajectoryMessage) and msg.robot_id == sender and to == dest
                and msg.step_index in steps)
    return drop


def test_single_loss_increments_staleness(short_crossing):
    net = LossyTransport(InProcessTransport(), drop_trajectories(0, "agent1", {5}))
    log = run(short_crossing, transport=net)
    assert net.dropped == 1
    assert log.staleness[1] == {0: 1}
    assert not log.safety_stop and log.steps_executed == 25


def test_consecutive_losses_stop(short_crossing):
    net = LossyTransport(InProcessTransport(), drop_trajectories(0, "agent1", {5, 6, 7}))
    log = run(short_crossing, transport=net)
    assert log.safety_stop
    assert log.steps_executed == 8


def test_udp_run_bit_identical(short_crossing):
    a = run(short_crossing)
    b = run(short_crossing.replace(transport="udp"))
    assert len(a.rows) == len(b.rows)
    for ra, rb in zip(a.rows, b.rows):
        assert np.array_equal(ra.x, rb.x) and np.array_equal(ra.u, rb.u)
        assert ra.cost == rb.cost or (np.isnan(ra.cost) and np.isnan(rb.cost))
