"""Non-cooperative game: one prediction exchange per step, Jacobi updates,
shift-and-extrapolate of neighbour predictions and the centralised baseline."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .comms import TrajectoryMessage
from .coordinator import DeadlockParams, detect_deadlock
from .dynamics import DiscreteDynamics, Bounds, brake_input, input_from_states, rollout
from .ocp import (
    AgentConfig,
    NumericalFailure,
    OcpSolution,
    build_central_problem,
    build_problem,
    solve,
)


class SafetyStop(RuntimeError):
    """Too many consecutive predictions from one neighbour were lost."""


@dataclass(frozen=True, eq=False)
class PredictedTrajectory:
    robot_id: int
    step_index: int
    states: np.ndarray  # (Np+1, 2N)

    def __post_init__(self):
        s = np.array(self.states, dtype=float)
        if s.ndim != 2 or s.shape[0] < 2 or s.shape[1] % 2:
            raise ValueError("prediction needs shape (Np+1, 2N) with Np >= 1")
        s.setflags(write=False)
        object.__setattr__(self, "states", s)

    @property
    def Np(self) -> int:
        return self.states.shape[0] - 1

    def check(self, dyn: DiscreteDynamics, bounds: Bounds, tol: float = 1e-6) -> None:
        """Raise unless consecutive states follow the dynamics under admissible inputs."""
        s = self.states
        u = input_from_states(dyn, s[:-1], s[1:])
        if np.any(u < bounds.u_min - tol) or np.any(u > bounds.u_max + tol):
            raise ValueError(f"prediction of robot {self.robot_id} needs an inadmissible input")
        nxt = s[:-1] @ dyn.A.T + u @ dyn.B.T
        if np.max(np.abs(nxt - s[1:]), initial=0.0) > tol:
            raise ValueError(f"prediction of robot {self.robot_id} violates the dynamics")

    def to_message(self) -> TrajectoryMessage:
        return TrajectoryMessage(self.robot_id, self.step_index, self.states)

    @classmethod
    def from_message(cls, msg: TrajectoryMessage) -> "PredictedTrajectory":
        return cls(msg.robot_id, msg.step_index, msg.states)

    def __eq__(self, other):
        return (isinstance(other, PredictedTrajectory) and self.robot_id == other.robot_id
                and self.step_index == other.step_index and np.array_equal(self.states, other.states))


def shift_extrapolate(prev: PredictedTrajectory, dyn: DiscreteDynamics, last_input=None) -> PredictedTrajectory:
    """Drop the first state and append one step under the last input.

    Without ``last_input`` the last input is recovered from the final two states.
    """
    s = prev.states
    if last_input is None:
        last_input = input_from_states(dyn, s[-2], s[-1])
    tail = dyn.A @ s[-1] + dyn.B @ np.asarray(last_input, dtype=float)
    return PredictedTrajectory(prev.robot_id, prev.step_index + 1, np.vstack([s[1:], tail]))


def hold_prediction(robot_id: int, step: int, x, dyn: DiscreteDynamics, Np: int) -> PredictedTrajectory:
    """Zero-input rollout of ``x``: the bootstrap prediction before any solve."""
    return PredictedTrajectory(robot_id, step, rollout(dyn, x, np.zeros((Np, dyn.n_joints))))


def brake_prediction(robot_id: int, step: int, x, dyn: DiscreteDynamics, bounds: Bounds, Np: int):
    """Rollout under the saturated braking law; returns (prediction, first input)."""
    xs = np.empty((Np + 1, 2 * dyn.n_joints))
    xs[0] = x
    first = None
    for k in range(Np):
        u = brake_input(bounds, xs[k], dyn.Ts)
        if first is None:
            first = u
        xs[k + 1] = dyn.A @ xs[k] + dyn.B @ u
    return PredictedTrajectory(robot_id, step, xs), first


# ---------------------------------------------------------------------------
# agents


@dataclass
class RoundResult:
    u0: np.ndarray
    prediction: PredictedTrajectory
    gamma_D: bool
    solution: OcpSolution | None
    fallback: bool = False
    message: str = ""

    @property
    def solve_time(self) -> float:
        return self.solution.solve_time if self.solution is not None else 0.0


@dataclass
class Agent:
    robot_id: int
    config: AgentConfig
    neighbor_models: dict
    params: DeadlockParams = field(default_factory=DeadlockParams)
    last: OcpSolution | None = None
    u_prev: np.ndarray | None = None

    @property
    def neighbours(self) -> list[int]:
        return sorted(self.config.neighbours)

    def reset_warm_start(self) -> None:
        self.last = None

    def round(self, step: int, x_s, x_f, neighbor_preds) -> RoundResult:
        return agent_round(self, step, x_s, x_f, neighbor_preds)


def agent_round(agent: Agent, step: int, x_s, x_f, neighbor_preds) -> RoundResult:
    """Solve the agent's OCP against frozen neighbour predictions.

    An infeasible or numerically failed solve falls back to braking for this step.
    """
    cfg = agent.config
    x_s = np.asarray(x_s, dtype=float)
    for j in cfg.neighbours:
        p = neighbor_preds.get(j)
        if p is not None and p.step_index != step:
            raise ValueError(f"prediction of robot {j} is for step {p.step_index}, expected {step}")
    problem = build_problem(cfg, x_s, x_f, neighbor_preds, agent.neighbor_models, agent.u_prev)
    warm = agent.last.shifted() if agent.last is not None else None
    try:
        sol = solve(problem, warm, cfg.options)
    except NumericalFailure as exc:
        sol, msg = None, str(exc)
    else:
        msg = sol.message
    if sol is not None and sol.max_violation <= cfg.options.feasibility_tol:
        agent.last = sol
        agent.u_prev = sol.inputs[0].copy()
        pred = PredictedTrajectory(agent.robot_id, step, sol.states)
        gamma = detect_deadlock(sol, x_s, x_f, agent.params)
        return RoundResult(sol.inputs[0].copy(), pred, gamma, sol, False, msg)
    pred, u0 = brake_prediction(agent.robot_id, step, x_s, cfg.dyn, cfg.bounds, cfg.Np)
    agent.last = None
    agent.u_prev = u0.copy()
    return RoundResult(u0, pred, False, sol, True, msg or "infeasible")


@dataclass
class StepResult:
    inputs: dict[int, np.ndarray]
    predictions: dict[int, PredictedTrajectory]
    rounds: dict[int, RoundResult]
    # instrumentation: reads of predictions produced in this very step
    fresh_reads: int = 0
    consumed: int = 0


def _target(i, targets, commands):
    cmd = commands.get(i) if commands else None
    if cmd is not None and cmd.has_override:
        return cmd.override_target
    return targets[i]


def game_step(agents: dict[int, Agent], step: int, measurements, targets, predictions,
              commands=None, views=None) -> StepResult:
    """One Jacobi round: every agent in ``agents`` solves against ``predictions``
    (neighbours' predictions already shifted to ``step``) and none sees another
    agent's output of this step. Evaluation order is irrelevant by construction.

    ``views`` optionally gives each agent its own prediction dict (per-receiver
    loss handling); otherwise all agents share ``predictions``.
    """
    fresh: dict[int, PredictedTrajectory] = {}
    rounds: dict[int, RoundResult] = {}
    fresh_reads = consumed = 0
    for i in sorted(agents):
        agent = agents[i]
        frozen = views[i] if views is not None else predictions
        neigh = {}
        for j in agent.neighbours:
            if j not in frozen:
                continue
            p = frozen[j]
            fresh_reads += any(p is f for f in fresh.values())
            consumed += 1
            neigh[j] = p
        r = agent_round(agent, step, measurements[i], _target(i, targets, commands), neigh)
        rounds[i] = r
        fresh[i] = r.prediction
    return StepResult({i: r.u0 for i, r in rounds.items()}, fresh, rounds, fresh_reads, consumed)


def solve_centralized(agents: list[Agent], measurements, targets, free=None, frozen_preds=None,
                      warm_start=None, commands=None):
    """One NLP over the ``free`` robots; returns {robot_id: OcpSolution}."""
    configs = [a.config for a in agents]
    ids = list(range(len(agents))) if free is None else sorted(free)
    x_s = {i: np.asarray(measurements[i], float) for i in ids}
    x_f = {i: _target(i, targets, commands) for i in ids}
    u_prev = {i: agents[i].u_prev for i in ids}
    problem = build_central_problem(configs, x_s, x_f, u_prev, ids, frozen_preds)
    if warm_start is None and all(agents[i].last is not None for i in ids):
        warm_start = np.concatenate([agents[i].last.shifted().ravel() for i in ids])
    sols = solve(problem, warm_start, configs[ids[0]].options)
    if not isinstance(sols, list):
        sols = [sols]
    return dict(zip(ids, sols))


# ---------------------------------------------------------------------------
# neighbour inbox with loss handling


@dataclass
class Inbox:
    """Latest usable prediction per neighbour.

    Each step a neighbour's message from the previous step is shifted to the
    current one. A missing message is replaced by shifting the stored
    prediction once more; ``loss_limit`` consecutive misses raise SafetyStop.
    """

    robot_id: int
    dyns: dict[int, DiscreteDynamics]
    loss_limit: int = 3
    current: dict[int, PredictedTrajectory] = field(default_factory=dict)
    received: dict[int, PredictedTrajectory] = field(default_factory=dict)
    losses: dict[int, int] = field(default_factory=dict)
    staleness: dict[int, int] = field(default_factory=dict)

    def deliver(self, msg: TrajectoryMessage) -> None:
        if msg.robot_id == self.robot_id:
            return
        prev = self.received.get(msg.robot_id)
        if prev is None or msg.step_index >= prev.step_index:
            self.received[msg.robot_id] = PredictedTrajectory.from_message(msg)

    def predictions(self, step: int) -> dict[int, PredictedTrajectory]:
        for j, dyn in sorted(self.dyns.items()):
            got = self.received.pop(j, None)
            if got is not None and got.step_index == step:
                self.current[j] = got
                self.losses[j] = 0
            elif got is not None and got.step_index == step - 1:
                self.current[j] = shift_extrapolate(got, dyn)
                self.losses[j] = 0
            elif j in self.current:
                self.losses[j] = self.losses.get(j, 0) + 1
                self.staleness[j] = self.staleness.get(j, 0) + 1
                if self.losses[j] >= self.loss_limit:
                    raise SafetyStop(f"robot {self.robot_id}: {self.losses[j]} consecutive losses from robot {j}")
                while self.current[j].step_index < step:
                    self.current[j] = shift_extrapolate(self.current[j], dyn)
        return dict(self.current)
