"""Local deadlock detection and the supervisory coordinator that resolves deadlocks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .collision import min_link_distance
from .comms import CoordinatorCommand, DeadlockReport


@dataclass(frozen=True)
class DeadlockParams:
    eps_v: float = 1.5e-3
    delta_x: float = 1.2e-2
    d_min: float = 0.2
    eps_res: float = 4e-2

    def __post_init__(self):
        if min(self.eps_v, self.delta_x, self.d_min, self.eps_res) <= 0:
            raise ValueError("deadlock parameters must be positive")


def residuum(x_s, x_f) -> float:
    return float(np.linalg.norm(np.asarray(x_s, float) - np.asarray(x_f, float)))


def detect_deadlock(sol, x_s, x_f, params: DeadlockParams) -> bool:
    """Predicted velocity barely changes over the horizon while far from the goal."""
    states = np.asarray(getattr(sol, "states", sol))
    n = states.shape[1] // 2
    dv = np.linalg.norm(states[-1, n:] - states[0, n:])
    return bool(dv <= params.eps_v and residuum(x_s, x_f) >= params.delta_x)


def cluster(joint_positions, flags, models, params: DeadlockParams) -> list[list[int]]:
    """Partition robot ids; each flagged robot absorbs robots within ``d_min`` of its links."""
    m = len(models)
    parent = list(range(m))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(m):
        if not flags[i]:
            continue
        for j in range(m):
            if i != j and min_link_distance(models[i], joint_positions[i], models[j], joint_positions[j]) <= params.d_min:
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(m):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def resolve(clusters, residuals) -> dict[int, bool]:
    """Activation flag per robot: in every multi-robot cluster only the member
    with the smallest residuum (lowest id on ties) stays active."""
    active = {}
    for members in clusters:
        if not members:
            raise ValueError("empty cluster")
        if len(members) == 1:
            active[members[0]] = True
            continue
        best = min(members, key=lambda r: (residuals[r], r))
        for r in members:
            active[r] = r == best
    return active


@dataclass
class Resolution:
    members: list[int]
    active: int
    started: int


@dataclass
class Coordinator:
    """Tracks open deadlock resolutions across steps.

    A resolution opens when a flagged robot forms a multi-robot cluster. It
    closes when the active robot reaches its task target (residuum <= eps_res)
    or when the active robot itself reports a deadlock after every deactivated
    member has parked at its neutral pose. Members then get their stored task
    targets back.
    """

    models: list
    neutral_states: list[np.ndarray]
    params: DeadlockParams = field(default_factory=DeadlockParams)
    resolutions: list[Resolution] = field(default_factory=list)
    events: list[tuple[int, list[int], int]] = field(default_factory=list)
    reactivations: list[tuple[int, list[int]]] = field(default_factory=list)

    def deactivated(self) -> set[int]:
        return {r for res in self.resolutions for r in res.members if r != res.active}

    def update(self, step: int, reports: list[DeadlockReport]) -> list[CoordinatorCommand]:
        """Consume this step's reports (one per robot, carrying the measured
        state and the *task* target) and return commands for the next step."""
        rep = {r.robot_id: r for r in sorted(reports, key=lambda r: r.robot_id)}
        m = len(self.models)
        res_task = {i: residuum(rep[i].x_s, rep[i].x_f) for i in rep}
        n = {i: rep[i].x_s.size // 2 for i in rep}

        kept = []
        for res in self.resolutions:
            done = res_task[res.active] <= self.params.eps_res
            parked = all(
                residuum(rep[r].x_s, self.neutral_states[r]) <= self.params.eps_res
                for r in res.members if r != res.active
            )
            stalled = rep[res.active].gamma_D and parked
            if done or stalled:
                self.reactivations.append((step, list(res.members)))
            else:
                kept.append(res)
        self.resolutions = kept

        engaged = {r for res in self.resolutions for r in res.members}
        free = [i for i in range(m) if i not in engaged]
        if any(rep[i].gamma_D for i in free):
            q = [rep[i].x_s[:n[i]] for i in range(m)]
            flags = [rep[i].gamma_D and i in free for i in range(m)]
            for members in cluster(q, flags, self.models, self.params):
                members = [r for r in members if r in free]
                if len(members) < 2:
                    continue
                active = min(members, key=lambda r: (res_task[r], r))
                self.resolutions.append(Resolution(sorted(members), active, step))
                self.events.append((step, sorted(members), active))

        off = self.deactivated()
        return [
            CoordinatorCommand(i, step, i not in off, self.neutral_states[i] if i in off else None)
            for i in range(m)
        ]
