"""Per-joint double integrator with exact zero-order-hold discretisation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class DiscreteDynamics:
    A: np.ndarray
    B: np.ndarray
    Ts: float

    @property
    def n_joints(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True, eq=False)
class Bounds:
    """Box sets for states x = [q, qd] and inputs u."""

    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def contains_state(self, x, tol=0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.x_min - tol) and np.all(x <= self.x_max + tol))

    def contains_input(self, u, tol=0.0) -> bool:
        u = np.asarray(u)
        return bool(np.all(u >= self.u_min - tol) and np.all(u <= self.u_max + tol))

    def state_violation(self, x) -> float:
        x = np.asarray(x)
        return float(max(0.0, np.max(self.x_min - x), np.max(x - self.x_max)))


def discretize(n_joints: int, Ts: float) -> DiscreteDynamics:
    """``A = [[I, Ts I], [0, I]]``, ``B = [Ts^2/2 I; Ts I]``."""
    if Ts < 0:
        raise ValueError("sampling time must be non-negative")
    eye = np.eye(n_joints)
    zero = np.zeros((n_joints, n_joints))
    A = np.block([[eye, Ts * eye], [zero, eye]])
    B = np.vstack([0.5 * Ts**2 * eye, Ts * eye])
    return DiscreteDynamics(A, B, float(Ts))


def step(dyn: DiscreteDynamics, x, u) -> np.ndarray:
    return dyn.A @ np.asarray(x, dtype=float) + dyn.B @ np.asarray(u, dtype=float)


def rollout(dyn: DiscreteDynamics, x0, u_seq) -> np.ndarray:
    """States (K+1, 2N) from x0 under inputs (K, N)."""
    u_seq = np.asarray(u_seq, dtype=float).reshape(-1, dyn.n_joints)
    xs = np.empty((len(u_seq) + 1, 2 * dyn.n_joints))
    xs[0] = x0
    for k, u in enumerate(u_seq):
        xs[k + 1] = dyn.A @ xs[k] + dyn.B @ u
    return xs


def bounds(model) -> Bounds:
    lo, hi = model.joint_limits.T
    v = model.velocity_limits
    a = model.acceleration_limits
    return Bounds(np.concatenate([lo, -v]), np.concatenate([hi, v]), -a.copy(), a.copy())


def input_from_states(dyn: DiscreteDynamics, x_prev, x_next) -> np.ndarray:
    """Recover the input that produced ``x_next`` from ``x_prev`` (velocity increment / Ts)."""
    n = dyn.n_joints
    if dyn.Ts == 0:
        return np.zeros(n)
    return (np.asarray(x_next)[..., n:] - np.asarray(x_prev)[..., n:]) / dyn.Ts


def brake_input(model_or_bounds, x, Ts: float) -> np.ndarray:
    """Largest admissible deceleration towards zero joint velocity."""
    b = model_or_bounds if isinstance(model_or_bounds, Bounds) else bounds(model_or_bounds)
    n = len(b.u_max)
    qd = np.asarray(x)[n:]
    return np.clip(-qd / Ts, b.u_min, b.u_max)
