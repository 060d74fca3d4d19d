"""Deterministic scenario runner, logs, clearance audit, RSA placement and IK."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .collision import (
    PruningTable,
    SmoothProjection,
    StaticEnvironment,
    build_pair_set,
    els_terms,
    segment_distances,
    table_one,
)
from .comms import (
    CoordinatorCommand,
    DeadlockReport,
    TrajectoryMessage,
    decode,
    encode,
    make_transport,
)
from .coordinator import Coordinator, DeadlockParams, detect_deadlock, residuum
from .dynamics import bounds as model_bounds, discretize
from .game import (
    Agent,
    Inbox,
    PredictedTrajectory,
    SafetyStop,
    brake_prediction,
    game_step,
    hold_prediction,
    solve_centralized,
)
from .kinematics import (
    ManipulatorModel,
    builtin_model_path,
    PointRef,
    ellipsoid_arrays,
    fk_batch,
    load_model,
    planar_model,
    point_jacobians,
    rotation_jacobians,
    segment_arrays,
)
from .ocp import AgentConfig, CostWeights, SolverOptions


logger = logging.getLogger(__name__)


class ScenarioError(ValueError):
    pass


class IkFailure(ValueError):
    pass


# ---------------------------------------------------------------------------
# scenario description


@dataclass(frozen=True, eq=False)
class TaskSpec:
    q: np.ndarray
    dwell: int = 5

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.q, np.zeros_like(self.q)])


@dataclass(frozen=True, eq=False)
class RobotSpec:
    model: ManipulatorModel  # placed at its base
    start: np.ndarray  # 2N
    neutral: np.ndarray  # N
    tasks: tuple[TaskSpec, ...]
    model_ref: str = ""

    @property
    def neutral_state(self) -> np.ndarray:
        return np.concatenate([self.neutral, np.zeros_like(self.neutral)])


@dataclass(eq=False)
class ScenarioConfig:
    robots: list[RobotSpec]
    name: str = "scenario"
    Np: int = 15
    Ts: float = 0.2
    env: StaticEnvironment = field(default_factory=StaticEnvironment)
    c: float = 20.0
    deadlock: DeadlockParams = field(default_factory=DeadlockParams)
    weights: list[CostWeights] | None = None
    seed: int = 0
    transport: str = "inproc"
    steps: int = 300
    pruning: PruningTable | None = None
    neighbours: set | None = None
    collision_margin: float = 0.0
    intersample: int = 0
    solver: SolverOptions = field(default_factory=SolverOptions)
    loss_limit: int = 3
    stop_when_done: bool = True

    def validate(self) -> None:
        """Raise ScenarioError naming the first violated invariant."""
        if not self.robots:
            raise ScenarioError("scenario needs at least one robot")
        if self.steps <= 0:
            raise ScenarioError("step budget must be positive")
        if self.Np < 2:
            raise ScenarioError("horizon Np must be at least 2")
        if not self.Ts > 0:
            raise ScenarioError("sampling time must be positive")
        if self.intersample < 0:
            raise ScenarioError("intersample must be non-negative")
        if self.transport not in ("inproc", "udp"):
            raise ScenarioError(f"unknown transport {self.transport!r}")
        for i, r in enumerate(self.robots):
            n = r.model.n_joints
            lo, hi = r.model.joint_limits.T
            if r.start.shape != (2 * n,):
                raise ScenarioError(f"robot {i}: start state needs {2 * n} entries")
            if r.neutral.shape != (n,):
                raise ScenarioError(f"robot {i}: neutral pose needs {n} entries")
            named = [("start", r.start[:n]), ("neutral", r.neutral)]
            named += [(f"task {t}", task.q) for t, task in enumerate(r.tasks)]
            for label, q in named:
                if q.shape != (n,):
                    raise ScenarioError(f"robot {i} {label}: needs {n} joint values")
                for j in range(n):
                    if not lo[j] <= q[j] <= hi[j]:
                        raise ScenarioError(
                            f"robot {i} {label}: joint {j + 1} value {q[j]:.6g} outside [{lo[j]:.6g}, {hi[j]:.6g}]")
            if np.any(np.abs(r.start[n:]) > r.model.velocity_limits):
                raise ScenarioError(f"robot {i}: start velocity outside limits")
            for t, task in enumerate(r.tasks):
                if task.dwell < 0:
                    raise ScenarioError(f"robot {i} task {t}: dwell must be non-negative")
        if self.weights is not None and len(self.weights) != len(self.robots):
            raise ScenarioError("one weight set per robot required")
        self.pair_sets()  # unknown link names surface here

    @property
    def models(self) -> list[ManipulatorModel]:
        return [r.model for r in self.robots]

    def pair_sets(self):
        return build_pair_set(self.models, self.pruning, self.neighbours)

    def agent_configs(self) -> list[AgentConfig]:
        pairs = self.pair_sets()
        out = []
        for i, r in enumerate(self.robots):
            w = self.weights[i] if self.weights is not None else CostWeights.default(r.model.n_joints)
            out.append(AgentConfig(r.model, w, self.Np, self.Ts, pairs[i], self.env,
                                   SmoothProjection(self.c), self.solver, self.collision_margin,
                                   self.intersample))
        return out

    def replace(self, **changes) -> "ScenarioConfig":
        fields = dict(self.__dict__)
        fields.update(changes)
        return ScenarioConfig(**fields)


def _resolve_model(ref, base_dir: Path | None) -> ManipulatorModel:
    if isinstance(ref, dict) and "planar" in ref:
        spec = ref["planar"]
        return planar_model(int(spec.get("n_links", 2)), float(spec.get("length", 1.0)))
    ref = str(ref)
    if builtin_model_path(ref).exists():
        return load_model(builtin_model_path(ref))
    path = Path(ref)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    if not path.exists():
        raise ScenarioError(f"unknown robot model {ref!r}")
    return load_model(path)


def _weights(doc, n) -> CostWeights:
    if doc in (None, "default"):
        return CostWeights.default(n)
    return CostWeights(*(np.asarray(doc[k], float) for k in ("Qx", "Qf", "Ru", "Rd")))


def scenario_from_dict(doc: dict, base_dir: Path | None = None) -> ScenarioConfig:
    try:
        robots = []
        weights = []
        for r in doc["robots"]:
            model = _resolve_model(r["model"], base_dir)
            base = r.get("base", {})
            yaw = float(base.get("yaw", 0.0))
            if "yaw_deg" in base:
                yaw = math.radians(float(base["yaw_deg"]))
            c, s = math.cos(yaw), math.sin(yaw)
            rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
            model = model.with_base(base.get("position", (0.0, 0.0, 0.0)), rot)
            if "segments" in r:
                model = model.with_segments(r["segments"])
            n = model.n_joints
            neutral = np.asarray(r.get("neutral", model.neutral_pose), float)
            start = np.asarray(r.get("start", neutral), float)
            if start.size == n:
                start = np.concatenate([start, np.zeros(n)])
            tasks = tuple(TaskSpec(np.asarray(t["q"], float), int(t.get("dwell", 5))) for t in r.get("tasks", []))
            robots.append(RobotSpec(model, start, neutral, tasks, str(r["model"])))
            weights.append(_weights(r.get("weights", doc.get("weights")), n))
        pruning = doc.get("pruning", "full")
        if pruning == "full":
            table = None
        elif pruning == "table1":
            table = table_one()
        elif isinstance(pruning, list):
            table = PruningTable.from_rows(pruning)
        else:
            path = Path(pruning)
            table = PruningTable.load(path if path.is_absolute() or base_dir is None else base_dir / path)
        neigh = doc.get("neighbours", "all")
        neighbours = None if neigh == "all" else {tuple(p) for p in neigh}
        table_doc = doc.get("table", {})
        solver_doc = doc.get("solver", {})
        cfg = ScenarioConfig(
            robots=robots,
            name=str(doc.get("name", "scenario")),
            Np=int(doc.get("Np", 15)),
            Ts=float(doc.get("Ts", 0.2)),
            env=StaticEnvironment(float(table_doc.get("height", 1.107)), float(table_doc.get("z_min", 0.02))),
            c=float(doc.get("projection_c", 20.0)),
            deadlock=DeadlockParams(**doc.get("deadlock", {})),
            weights=weights,
            seed=int(doc.get("seed", 0)),
            transport=str(doc.get("transport", "inproc")),
            steps=int(doc.get("steps", 300)),
            pruning=table,
            neighbours=neighbours,
            collision_margin=float(doc.get("collision_margin", 0.0)),
            intersample=int(doc.get("intersample", 0)),
            solver=SolverOptions(**solver_doc),
            loss_limit=int(doc.get("loss_limit", 3)),
            stop_when_done=bool(doc.get("stop_when_done", True)),
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        data = Path(__file__).parent / "data" / "scenarios" / f"{path.stem}.yaml"
        if data.exists():
            path = data
        else:
            raise ScenarioError(f"scenario file not found: {path}")
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return scenario_from_dict(doc, path.parent)


def builtin_scenario_path(name: str) -> Path:
    return Path(__file__).parent / "data" / "scenarios" / f"{name}.yaml"


# ---------------------------------------------------------------------------
# logs


@dataclass
class LogRow:
    t: float
    robot_id: int
    x: np.ndarray
    u: np.ndarray
    cost: float
    solve_ms: float
    gamma_D: bool
    gamma_R: bool
    target_id: int
    min_els_margin: float
    min_link_dist: float
    fallback: bool = False
    pred_dv: float = math.nan  # |qd^Np - qd^0| of the fresh prediction
    task_residuum: float = math.nan


@dataclass
class SimLog:
    rows: list[LogRow] = field(default_factory=list)
    n_robots: int = 0
    Ts: float = 0.2
    mode: str = "dmpc"
    Np: int = 15
    completed: list[bool] = field(default_factory=list)
    steps_executed: int = 0
    deadlock_events: list = field(default_factory=list)
    reactivations: list = field(default_factory=list)
    task_targets: list = field(default_factory=list)  # per robot, reported x_f per step
    safety_stop: bool = False
    staleness: dict = field(default_factory=dict)
    fresh_reads: int = 0
    consumed_predictions: int = 0

    def robot_rows(self, i: int) -> list[LogRow]:
        return [r for r in self.rows if r.robot_id == i]

    def states(self, i: int) -> np.ndarray:
        return np.array([r.x for r in self.robot_rows(i)])

    def inputs(self, i: int) -> np.ndarray:
        return np.array([r.u for r in self.robot_rows(i)])

    def column(self, name: str, i: int | None = None) -> np.ndarray:
        rows = self.rows if i is None else self.robot_rows(i)
        return np.array([getattr(r, name) for r in rows])

    @property
    def all_completed(self) -> bool:
        return bool(self.completed) and all(self.completed)

    def to_csv(self, path) -> None:
        n_max = max((r.x.size // 2 for r in self.rows), default=0)
        header = (["t", "robot_id"] + [f"q{j + 1}" for j in range(n_max)] + [f"qd{j + 1}" for j in range(n_max)]
                  + [f"u{j + 1}" for j in range(n_max)]
                  + ["cost", "solve_ms", "gamma_D", "gamma_R", "target_id", "min_els_margin", "min_link_dist"])
        fmt = "{:.9g}".format
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.rows:
                n = r.x.size // 2
                pad = [""] * (n_max - n)
                w.writerow([fmt(r.t), r.robot_id]
                           + [fmt(v) for v in r.x[:n]] + pad + [fmt(v) for v in r.x[n:]] + pad
                           + [fmt(v) for v in r.u] + pad
                           + [fmt(r.cost), fmt(r.solve_ms), int(r.gamma_D), int(r.gamma_R), r.target_id,
                              fmt(r.min_els_margin), fmt(r.min_link_dist)])


# ---------------------------------------------------------------------------
# clearance


def _pair_groups(pair_sets):
    out = []
    for i, entries in sorted(pair_sets.items()):
        by_other = {}
        for p in entries:
            by_other.setdefault(p.other, []).append(p)
        for j, ps in sorted(by_other.items()):
            out.append((i, j, np.array([p.segment for p in ps]), np.array([p.ellipsoid for p in ps])))
    return out


def clearance(models, pair_sets, q_list, proj: SmoothProjection):
    """Minimum ELS margin over all pairs and minimum link distance over all robot
    pairs. ``q_list[i]`` may carry leading sample dimensions; returns arrays over them."""
    shape = np.shape(q_list[0])[:-1]
    margin = np.full(shape, np.inf)
    dist = np.full(shape, np.inf)
    segs = [segment_arrays(m, q) for m, q in zip(models, q_list)]
    ells = {}
    for i, j, seg_idx, ell_idx in _pair_groups(pair_sets):
        if j not in ells:
            ells[j] = ellipsoid_arrays(models[j], q_list[j])
        b, r = segs[i]
        e0, M = ells[j]
        g = els_terms(b[..., seg_idx, :], r[..., seg_idx, :], e0[..., ell_idx, :], M[..., ell_idx, :, :], proj)
        margin = np.minimum(margin, g.min(axis=-1))
    m = len(models)
    for i in range(m):
        for j in range(i + 1, m):
            bi, ri = segs[i]
            bj, rj = segs[j]
            d = segment_distances(bi[..., :, None, :], ri[..., :, None, :], bj[..., None, :, :], rj[..., None, :, :])
            dist = np.minimum(dist, d.min(axis=(-1, -2)))
    return margin, dist


@dataclass
class AuditResult:
    min_margin: float
    min_link_dist: float
    margins: np.ndarray  # (steps*substeps + 1,)
    link_dists: np.ndarray
    substeps: int = 10

    @property
    def step_min_margin(self) -> float:
        """Minimum over the sampling instants only."""
        return float(np.min(self.margins[::self.substeps]))


def audit_clearance(log: SimLog, scenario: ScenarioConfig, substeps: int = 10) -> AuditResult:
    """Re-evaluate clearance along the continuous plant trajectory between samples."""
    if substeps < 1:
        raise ValueError("substeps must be positive")
    Ts = log.Ts
    tau = np.arange(substeps) * Ts / substeps
    qs = []
    for i, r in enumerate(scenario.robots):
        n = r.model.n_joints
        X = log.states(i)
        U = log.inputs(i)
        q = (X[:, None, :n] + X[:, None, n:] * tau[None, :, None]
             + 0.5 * U[:, None, :] * tau[None, :, None] ** 2).reshape(-1, n)
        last = X[-1, :n] + X[-1, n:] * Ts + 0.5 * U[-1] * Ts**2
        qs.append(np.vstack([q, last]))
    margins, dists = clearance(scenario.models, scenario.pair_sets(), qs, SmoothProjection(scenario.c))
    return AuditResult(float(np.min(margins)), float(np.min(dists)), margins, dists, substeps)


# ---------------------------------------------------------------------------
# runner


def _agent_name(i):
    return f"agent{i}"


def run(scenario: ScenarioConfig, mode: str = "dmpc", transport=None) -> SimLog:
    """Closed-loop simulation; ``mode`` is ``"dmpc"`` or ``"cmpc"``.

    ``transport`` overrides the scenario's transport choice (e.g. a lossy wrapper).
    """
    if mode not in ("dmpc", "cmpc"):
        raise ValueError(f"unknown mode {mode!r}")
    scenario.validate()
    m = len(scenario.robots)
    configs = scenario.agent_configs()
    models = scenario.models
    pair_sets = scenario.pair_sets()
    proj = SmoothProjection(scenario.c)
    params = scenario.deadlock
    agents = {i: Agent(i, configs[i], {j: models[j] for j in range(m)}, params) for i in range(m)}
    dyns = {i: configs[i].dyn for i in range(m)}
    bnds = {i: model_bounds(models[i]) for i in range(m)}
    listeners = {i: [j for j in range(m) if i in configs[j].neighbours] for i in range(m)}
    Np = scenario.Np

    own_transport = transport is None
    net = make_transport(scenario.transport) if own_transport else transport
    for i in range(m):
        net.register(_agent_name(i))
    net.register("coordinator")
    inboxes = {i: Inbox(i, {j: dyns[j] for j in configs[i].neighbours}, scenario.loss_limit) for i in range(m)}

    x = [r.start.copy() for r in scenario.robots]
    neutral = [r.neutral_state for r in scenario.robots]
    task_idx = [0] * m
    dwell_left = [0] * m
    in_dwell = [False] * m
    finished = [len(r.tasks) == 0 for r in scenario.robots]
    coord = Coordinator(models, neutral, params)
    commands = {i: CoordinatorCommand(i, 0, True) for i in range(m)}
    log = SimLog(n_robots=m, Ts=scenario.Ts, mode=mode, Np=Np, task_targets=[[] for _ in range(m)])

    def task_target(i):
        if finished[i]:
            return neutral[i]
        return scenario.robots[i].tasks[task_idx[i]].state

    def publish(i, pred):
        payload = encode(TrajectoryMessage(i, pred.step_index, pred.states))
        for j in listeners[i]:
            net.send(_agent_name(j), payload)

    # bootstrap: zero-input hold of the initial states, valid for step 0
    for i in range(m):
        publish(i, hold_prediction(i, 0, x[i], dyns[i], Np))

    try:
        for k in range(scenario.steps):
            # receive last step's predictions and coordinator commands
            for i in range(m):
                for raw in net.receive(_agent_name(i), expected=len(configs[i].neighbours)):
                    msg = decode(raw)
                    if isinstance(msg, TrajectoryMessage):
                        inboxes[i].deliver(msg)
                    elif isinstance(msg, CoordinatorCommand):
                        commands[i] = msg
            active = {i: commands[i].gamma_R for i in range(m)}
            # task bookkeeping on the measurement
            for i in range(m):
                if in_dwell[i] or finished[i] or not active[i]:
                    continue
                if residuum(x[i], task_target(i)) <= params.eps_res:
                    in_dwell[i] = True
                    dwell_left[i] = scenario.robots[i].tasks[task_idx[i]].dwell
            for i in range(m):
                if in_dwell[i] and dwell_left[i] == 0:
                    in_dwell[i] = False
                    task_idx[i] += 1
                    finished[i] = task_idx[i] >= len(scenario.robots[i].tasks)
            if scenario.stop_when_done and all(finished):
                break
            targets = {i: task_target(i) for i in range(m)}
            solving = [i for i in range(m) if not in_dwell[i]]

            views = {i: inboxes[i].predictions(k) for i in range(m)}

            fixed = {}
            for i in range(m):
                if i not in solving:
                    pred, u = brake_prediction(i, k, x[i], dyns[i], bnds[i], Np)
                    fixed[i] = (pred, u)
                    agents[i].last = None
                    agents[i].u_prev = u.copy()

            inputs, preds, info = {}, {}, {}
            if mode == "dmpc":
                res = game_step({i: agents[i] for i in solving}, k, x, targets, None, commands, views)
                log.fresh_reads += res.fresh_reads
                log.consumed_predictions += res.consumed
                for i, r in res.rounds.items():
                    inputs[i], preds[i] = r.u0, r.prediction
                    sol = r.solution
                    info[i] = (sol.objective if sol is not None and not r.fallback else math.nan,
                               1e3 * r.solve_time, r.gamma_D, r.fallback,
                               _pred_dv(r.prediction.states))
            elif solving:
                frozen = {i: fixed[i][0] for i in fixed}
                sols = solve_centralized([agents[i] for i in range(m)], x, targets, solving, frozen,
                                         commands=commands)
                ok = all(s.max_violation <= scenario.solver.feasibility_tol for s in sols.values())
                for i, s in sols.items():
                    tgt = commands[i].override_target if commands[i].has_override else targets[i]
                    if ok:
                        agents[i].last = s
                        agents[i].u_prev = s.inputs[0].copy()
                        inputs[i] = s.inputs[0].copy()
                        preds[i] = PredictedTrajectory(i, k, s.states)
                        info[i] = (s.objective, 1e3 * s.solve_time, detect_deadlock(s, x[i], tgt, params),
                                   False, _pred_dv(s.states))
                    else:
                        pred, u = brake_prediction(i, k, x[i], dyns[i], bnds[i], Np)
                        agents[i].last = None
                        agents[i].u_prev = u.copy()
                        inputs[i], preds[i] = u, pred
                        info[i] = (math.nan, 1e3 * s.solve_time, False, True, math.nan)
            for i, (pred, u) in fixed.items():
                inputs[i], preds[i] = u, pred
                info[i] = (math.nan, math.nan, False, False, math.nan)

            # publish fresh predictions for the next step
            for i in range(m):
                publish(i, preds[i])

            # coordinator round trip
            for i in range(m):
                gamma = info[i][2]
                rep = DeadlockReport(i, k, gamma, x[i], targets[i])
                net.send("coordinator", encode(rep))
                log.task_targets[i].append(targets[i])
            reports = [decode(b) for b in net.receive("coordinator", expected=m)]
            for cmd in coord.update(k, reports):
                net.send(_agent_name(cmd.robot_id), encode(CoordinatorCommand(cmd.robot_id, k + 1, cmd.gamma_R,
                                                                               cmd.override_target)))

            margin, dist = clearance(models, pair_sets, [xi[:len(xi) // 2] for xi in x], proj)
            for i in range(m):
                cost, ms, gamma, fb, dv = info[i]
                tid = -1 if (finished[i] or not active[i]) else task_idx[i]
                log.rows.append(LogRow(k * scenario.Ts, i, x[i].copy(), np.asarray(inputs[i], float).copy(),
                                       float(cost), float(ms), bool(gamma), bool(active[i]), tid,
                                       float(margin), float(dist), fb, dv, residuum(x[i], targets[i])))
            logger.debug("step %d: margin %.4f dist %.4f solve_ms %s gammaD %s active %s fallback %s",
                          k, margin, dist, [round(info[i][1], 1) for i in range(m)],
                          [info[i][2] for i in range(m)], [active[i] for i in range(m)],
                          [info[i][3] for i in range(m)])
            # plant: exact ZOH
            for i in range(m):
                if in_dwell[i]:
                    dwell_left[i] -= 1
                x[i] = dyns[i].A @ x[i] + dyns[i].B @ inputs[i]
            log.steps_executed = k + 1
    except SafetyStop:
        log.safety_stop = True
    finally:
        if own_transport:
            net.close()
    for i in range(m):
        # a final dwell that ran out on the last budgeted step still completes
        if in_dwell[i] and dwell_left[i] == 0 and task_idx[i] == len(scenario.robots[i].tasks) - 1:
            finished[i] = True
    log.completed = list(finished)
    log.deadlock_events = list(coord.events)
    log.reactivations = list(coord.reactivations)
    log.staleness = {i: dict(inboxes[i].staleness) for i in range(m)}
    return log


def _pred_dv(states) -> float:
    n = states.shape[1] // 2
    return float(np.linalg.norm(states[-1, n:] - states[0, n:]))


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    execution_steps: int
    execution_time: float
    solve_mean_ms: dict[int, float]
    solve_std_ms: dict[int, float]
    mean_solve_ms: float
    completed: bool
    deadlock_events: int


def metrics(log: SimLog) -> Metrics:
    if not log.rows:
        raise ValueError("empty log")
    ids = sorted({r.robot_id for r in log.rows})
    mean, std = {}, {}
    for i in ids:
        ms = np.array([r.solve_ms for r in log.robot_rows(i)], float)
        ms = ms[np.isfinite(ms)]
        mean[i] = float(ms.mean()) if ms.size else math.nan
        std[i] = float(ms.std()) if ms.size else math.nan
    all_ms = np.array([r.solve_ms for r in log.rows], float)
    all_ms = all_ms[np.isfinite(all_ms)]
    steps = len({r.t for r in log.rows})
    return Metrics(steps, steps * log.Ts, mean, std, float(all_ms.mean()) if all_ms.size else math.nan,
                   log.all_completed, len(log.deadlock_events))


def rms_deviation(log_a: SimLog, log_b: SimLog, steps: int | None = None) -> float:
    """RMS difference of joint positions over the common prefix of two runs."""
    diffs = []
    for i in range(log_a.n_robots):
        qa, qb = log_a.states(i), log_b.states(i)
        n = qa.shape[1] // 2
        k = min(len(qa), len(qb)) if steps is None else steps
        diffs.append(qa[:k, :n] - qb[:k, :n])
    d = np.concatenate([x.ravel() for x in diffs])
    return float(np.sqrt(np.mean(d**2)))


# ---------------------------------------------------------------------------
# object placement and inverse kinematics


def place_objects_rsa(region, count: int, min_sep: float, seed: int = 0, max_rejections: int = 100_000):
    """Random sequential adsorption in an axis-aligned box ``region = (lo, hi)``."""
    lo, hi = (np.asarray(v, float) for v in region)
    if lo.shape != hi.shape or np.any(hi < lo):
        raise ValueError("region must be (lo, hi) with lo <= hi")
    if count < 0 or min_sep < 0:
        raise ValueError("count and min_sep must be non-negative")
    rng = np.random.default_rng(seed)
    points: list[np.ndarray] = []
    rejections = 0
    while len(points) < count:
        p = rng.uniform(lo, hi)
        if all(np.linalg.norm(p - o) >= min_sep for o in points):
            points.append(p)
            continue
        rejections += 1
        if rejections >= max_rejections:
            raise ValueError("region too crowded")
    return points


def ik_solve(model: ManipulatorModel, target, q0=None, tol: float = 1e-4, max_iters: int = 500,
             damping: float = 0.05, approach=None, approach_tol: float = 1e-3) -> np.ndarray:
    """Damped least-squares IK for the tool position; raises IkFailure.

    ``approach`` optionally also asks the tool z-axis to match a unit vector
    (e.g. ``(0, 0, -1)`` for a gripper pointing down).
    """
    target = np.asarray(target, float)
    q = np.array(model.neutral_pose if q0 is None else q0, dtype=float)
    lo, hi = model.joint_limits.T
    q = np.clip(q, lo, hi)
    tool = model.n_joints + 1
    axis = None if approach is None else np.asarray(approach, float) / np.linalg.norm(approach)

    def residual(q):
        origins, rotations = fk_batch(model, q)
        err = target - origins[tool]
        if axis is None:
            return err, None, origins, rotations
        return err, axis - rotations[tool][:, 2], origins, rotations

    for _ in range(max_iters + 1):
        err, aerr, origins, rotations = residual(q)
        done = np.linalg.norm(err) <= tol and (aerr is None or np.linalg.norm(aerr) <= approach_tol)
        if done:
            return q
        J = point_jacobians(model, origins, rotations, [PointRef(tool)])[0]
        e = err
        if aerr is not None:
            Jz = rotation_jacobians(model, rotations, [tool])[0][:, 2, :]
            J = np.vstack([J, Jz])
            e = np.concatenate([err, aerr])
        dq = J.T @ np.linalg.solve(J @ J.T + damping**2 * np.eye(len(e)), e)
        q = np.clip(q + dq, lo, hi)
    raise IkFailure(f"no IK solution within {tol} m for target {target.tolist()}")
