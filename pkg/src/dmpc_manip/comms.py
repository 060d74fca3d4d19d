"""Messages, binary codec and transports for agent/agent and agent/coordinator traffic.

Wire format (little-endian)::

    magic   4 bytes  b"DMPC"
    version u8       1
    type    u8       1 trajectory, 2 deadlock report, 3 coordinator command

    trajectory: robot_id u16, step_index u64, N u8, Np u16, states (Np+1)*2N f64
    report:     robot_id u16, step_index u64, gamma_D u8, N u8, x_s 2N f64, x_f 2N f64
    command:    robot_id u16, step_index u64, gamma_R u8, has_override u8,
                [N u8, override_target 2N f64]   (only when has_override)

``N`` in reports and commands is the length prefix for the state vectors.
"""

from __future__ import annotations

import enum
import select
import socket
import struct
import time
from collections import defaultdict, deque
from dataclasses import dataclass

import numpy as np

MAGIC = b"DMPC"
VERSION = 1
_HEADER = struct.Struct("<4sBB")
_TRAJ = struct.Struct("<HQBH")
_REPORT = struct.Struct("<HQBB")
_COMMAND = struct.Struct("<HQBB")


class MessageType(enum.IntEnum):
    TRAJECTORY = 1
    REPORT = 2
    COMMAND = 3


class DecodeErrorCode(enum.Enum):
    BAD_MAGIC = "bad magic"
    BAD_VERSION = "bad version"
    BAD_TYPE = "bad type"
    TRUNCATED = "truncated"
    TRAILING = "trailing bytes"
    INVALID = "invalid field"


class DecodeError(ValueError):
    def __init__(self, code: DecodeErrorCode, detail: str = ""):
        super().__init__(f"{code.value}{': ' + detail if detail else ''}")
        self.code = code


@dataclass(frozen=True, eq=False)
class TrajectoryMessage:
    robot_id: int
    step_index: int
    states: np.ndarray  # (Np+1, 2N)

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        if s.ndim != 2 or s.shape[1] % 2 or s.shape[0] < 1:
            raise ValueError("states must have shape (Np+1, 2N)")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def n_joints(self) -> int:
        return self.states.shape[1] // 2

    @property
    def Np(self) -> int:
        return self.states.shape[0] - 1

    def __eq__(self, other):
        return (isinstance(other, TrajectoryMessage) and self.robot_id == other.robot_id
                and self.step_index == other.step_index and np.array_equal(self.states, other.states))


@dataclass(frozen=True, eq=False)
class DeadlockReport:
    robot_id: int
    step_index: int
    gamma_D: bool
    x_s: np.ndarray
    x_f: np.ndarray

    def __post_init__(self):
        xs = np.array(self.x_s, dtype=float).ravel()
        xf = np.array(self.x_f, dtype=float).ravel()
        if xs.shape != xf.shape or xs.size % 2:
            raise ValueError("x_s and x_f must both have 2N entries")
        object.__setattr__(self, "x_s", xs)
        object.__setattr__(self, "x_f", xf)
        object.__setattr__(self, "gamma_D", bool(self.gamma_D))

    def __eq__(self, other):
        return (isinstance(other, DeadlockReport) and self.robot_id == other.robot_id
                and self.step_index == other.step_index and self.gamma_D == other.gamma_D
                and np.array_equal(self.x_s, other.x_s) and np.array_equal(self.x_f, other.x_f))


@dataclass(frozen=True, eq=False)
class CoordinatorCommand:
    robot_id: int
    step_index: int
    gamma_R: bool
    override_target: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "gamma_R", bool(self.gamma_R))
        if self.override_target is not None:
            t = np.array(self.override_target, dtype=float).ravel()
            if t.size == 0 or t.size % 2:
                raise ValueError("override_target must have 2N entries")
            object.__setattr__(self, "override_target", t)

    @property
    def has_override(self) -> bool:
        return self.override_target is not None

    def __eq__(self, other):
        if not isinstance(other, CoordinatorCommand):
            return False
        same_target = (self.override_target is None and other.override_target is None) or (
            self.override_target is not None and other.override_target is not None
            and np.array_equal(self.override_target, other.override_target))
        return (self.robot_id == other.robot_id and self.step_index == other.step_index
                and self.gamma_R == other.gamma_R and same_target)


Message = TrajectoryMessage | DeadlockReport | CoordinatorCommand


def _reals(values) -> bytes:
    return np.asarray(values, dtype="<f8").tobytes()


def encode(msg: Message) -> bytes:
    if isinstance(msg, TrajectoryMessage):
        if msg.n_joints > 255 or msg.Np > 65535:
            raise ValueError("trajectory too large for the wire format")
        head = _HEADER.pack(MAGIC, VERSION, MessageType.TRAJECTORY)
        return head + _TRAJ.pack(msg.robot_id, msg.step_index, msg.n_joints, msg.Np) + _reals(msg.states)
    if isinstance(msg, DeadlockReport):
        head = _HEADER.pack(MAGIC, VERSION, MessageType.REPORT)
        body = _REPORT.pack(msg.robot_id, msg.step_index, int(msg.gamma_D), msg.x_s.size // 2)
        return head + body + _reals(msg.x_s) + _reals(msg.x_f)
    if isinstance(msg, CoordinatorCommand):
        head = _HEADER.pack(MAGIC, VERSION, MessageType.COMMAND)
        body = _COMMAND.pack(msg.robot_id, msg.step_index, int(msg.gamma_R), int(msg.has_override))
        if msg.has_override:
            body += struct.pack("<B", msg.override_target.size // 2) + _reals(msg.override_target)
        return head + body
    raise TypeError(f"cannot encode {type(msg).__name__}")


def _take(data: bytes, pos: int, n: int) -> bytes:
    if pos + n > len(data):
        raise DecodeError(DecodeErrorCode.TRUNCATED, f"need {pos + n} bytes, have {len(data)}")
    return data[pos:pos + n]


def _take_reals(data, pos, count):
    raw = _take(data, pos, 8 * count)
    return np.frombuffer(raw, dtype="<f8").astype(float), pos + 8 * count


def decode(data: bytes) -> Message:
    data = bytes(data)
    magic, version, mtype = _HEADER.unpack(_take(data, 0, _HEADER.size))
    if magic != MAGIC:
        raise DecodeError(DecodeErrorCode.BAD_MAGIC, repr(magic))
    if version != VERSION:
        raise DecodeError(DecodeErrorCode.BAD_VERSION, str(version))
    pos = _HEADER.size
    if mtype == MessageType.TRAJECTORY:
        rid, step, n, Np = _TRAJ.unpack(_take(data, pos, _TRAJ.size))
        pos += _TRAJ.size
        if n == 0:
            raise DecodeError(DecodeErrorCode.INVALID, "N must be positive")
        states, pos = _take_reals(data, pos, (Np + 1) * 2 * n)
        msg = TrajectoryMessage(rid, step, states.reshape(Np + 1, 2 * n))
    elif mtype == MessageType.REPORT:
        rid, step, flag, n = _REPORT.unpack(_take(data, pos, _REPORT.size))
        pos += _REPORT.size
        if flag > 1 or n == 0:
            raise DecodeError(DecodeErrorCode.INVALID, "report flag or N")
        xs, pos = _take_reals(data, pos, 2 * n)
        xf, pos = _take_reals(data, pos, 2 * n)
        msg = DeadlockReport(rid, step, bool(flag), xs, xf)
    elif mtype == MessageType.COMMAND:
        rid, step, flag, has = _COMMAND.unpack(_take(data, pos, _COMMAND.size))
        pos += _COMMAND.size
        if flag > 1 or has > 1:
            raise DecodeError(DecodeErrorCode.INVALID, "command flags")
        target = None
        if has:
            (n,) = struct.unpack("<B", _take(data, pos, 1))
            pos += 1
            if n == 0:
                raise DecodeError(DecodeErrorCode.INVALID, "N must be positive")
            target, pos = _take_reals(data, pos, 2 * n)
        msg = CoordinatorCommand(rid, step, bool(flag), target)
    else:
        raise DecodeError(DecodeErrorCode.BAD_TYPE, str(mtype))
    if pos != len(data):
        raise DecodeError(DecodeErrorCode.TRAILING, f"{len(data) - pos} extra bytes")
    return msg


# ---------------------------------------------------------------------------
# transports
#
# Endpoints are named by strings ("agent0", "coordinator"). ``send`` never
# blocks; ``receive`` returns every datagram that arrived for the endpoint.


class InProcessTransport:
    """Lossless, ordered delivery through per-endpoint queues."""

    def __init__(self):
        self._queues: dict[str, deque] = defaultdict(deque)
        self.sent = 0

    def register(self, name: str) -> None:
        self._queues.setdefault(name, deque())

    def send(self, dest: str, payload: bytes) -> None:
        self._queues[dest].append(bytes(payload))
        self.sent += 1

    def receive(self, name: str, expected: int = 0) -> list[bytes]:
        q = self._queues[name]
        out = list(q)
        q.clear()
        return out

    def close(self) -> None:
        self._queues.clear()


class UdpTransport:
    """One datagram socket per endpoint on a host (loopback by default)."""

    def __init__(self, host: str = "127.0.0.1", timeout: float = 0.05):
        self.host = host
        self.timeout = timeout
        self._socks: dict[str, socket.socket] = {}
        self._addrs: dict[str, tuple[str, int]] = {}
        self.sent = 0

    def register(self, name: str, port: int = 0) -> None:
        if name in self._socks:
            return
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, 1 << 22)
        try:
            sock.bind((self.host, port))
        except OSError as exc:
            sock.close()
            raise OSError(f"cannot bind {name!r} to {self.host}:{port}: {exc}") from exc
        sock.setblocking(False)
        self._socks[name] = sock
        self._addrs[name] = sock.getsockname()

    def address(self, name: str) -> tuple[str, int]:
        return self._addrs[name]

    def send(self, dest: str, payload: bytes) -> None:
        addr = self._addrs[dest]
        sender = next(iter(self._socks.values()))
        try:
            sender.sendto(payload, addr)
        except OSError as exc:
            raise OSError(f"send to {dest!r} at {addr[0]}:{addr[1]} failed: {exc}") from exc
        self.sent += 1

    def receive(self, name: str, expected: int = 0) -> list[bytes]:
        """Drain the endpoint; wait up to ``timeout`` for ``expected`` datagrams."""
        sock = self._socks[name]
        out = []
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                while True:
                    data, _ = sock.recvfrom(1 << 16)
                    out.append(data)
            except BlockingIOError:
                pass
            remaining = deadline - time.monotonic()
            if len(out) >= expected or remaining <= 0:
                return out
            select.select([sock], [], [], remaining)

    def close(self) -> None:
        for s in self._socks.values():
            s.close()
        self._socks.clear()


class LossyTransport:
    """Wraps a transport and drops datagrams selected by ``drop(dest, payload)``."""

    def __init__(self, inner, drop):
        self.inner = inner
        self.drop = drop
        self.dropped = 0

    def register(self, name: str, *args) -> None:
        self.inner.register(name, *args)

    def send(self, dest: str, payload: bytes) -> None:
        if self.drop(dest, payload):
            self.dropped += 1
            return
        self.inner.send(dest, payload)

    def receive(self, name: str, expected: int = 0) -> list[bytes]:
        return self.inner.receive(name, expected)

    def close(self) -> None:
        self.inner.close()


def make_transport(kind: str):
    if kind == "inproc":
        return InProcessTransport()
    if kind == "udp":
        return UdpTransport()
    raise ValueError(f"unknown transport {kind!r}")
