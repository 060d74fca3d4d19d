"""Transcription of the per-robot optimal control problem and the centralised variant.

The dynamics are linear, so the states are eliminated (condensing):
``X = Sx x_s + Su U`` with ``X`` the stacked states ``x^0 .. x^Np`` and ``U`` the
stacked inputs. The decision vector is ``U`` for every free robot; the
quadratic cost becomes ``1/2 U^T H U + h^T U + const``. Inequalities are kept
in the form ``c(U) >= 0``:

* state boxes for ``k = 1 .. Np`` (linear in U, rows that no admissible input
  sequence can violate are dropped),
* table margins of movable segment bases for ``k = 1 .. Np``,
* ELS margins for every pair in the robot's pair set for ``k = 1 .. Np``.

``x^0`` is fixed by the measurement, so constraints at ``k = 0`` are constants
and are not part of the NLP. With ``intersample = S > 0`` the table and ELS
constraints are also imposed at ``S`` equally spaced instants inside every
sampling interval; under zero-order hold the joint positions there are still
linear in U (``q + tau qd + tau^2/2 u``).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .collision import (
    PairEntry,
    SmoothProjection,
    StaticEnvironment,
    els_terms,
    movable_static_rows,
    static_point_arrays,
)
from .dynamics import Bounds, DiscreteDynamics, bounds as model_bounds, discretize
from .kinematics import ManipulatorModel, ellipsoid_arrays, segment_arrays


class NumericalFailure(RuntimeError):
    pass


class StaleNeighbor(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class CostWeights:
    """Diagonals of Qx (2N), Qf (2N), Ru (N), Rd (N)."""

    Qx: np.ndarray
    Qf: np.ndarray
    Ru: np.ndarray
    Rd: np.ndarray

    def __post_init__(self):
        for name in ("Qx", "Qf", "Ru", "Rd"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.ndim == 2:
                if np.any(v != np.diag(np.diag(v))):
                    raise ValueError(f"{name} must be diagonal")
                v = np.diag(v).copy()
            if np.any(v < 0):
                raise ValueError(f"{name} entries must be non-negative")
            object.__setattr__(self, name, v)

    @classmethod
    def default(cls, n_joints: int) -> "CostWeights":
        if n_joints == 6:
            qx = np.array([1, 1, 1, 0.2, 0.2, 1, 1, 1, 1, 0.1, 0.1, 0.1], dtype=float)
        else:
            qx = np.ones(2 * n_joints)
        return cls(qx, 10.0 * qx, np.ones(n_joints), np.ones(n_joints))


@dataclass(frozen=True)
class SolverOptions:
    """``method``: "sqp" (default), "auglag" or "slsqp"."""

    method: str = "sqp"
    stationarity_tol: float = 1e-6
    feasibility_tol: float = 1e-6
    max_iters: int = 200
    max_outer: int = 30

    def __post_init__(self):
        if self.method not in ("sqp", "slsqp", "auglag"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not (self.stationarity_tol > 0 and self.feasibility_tol > 0 and self.max_iters > 0):
            raise ValueError("solver tolerances and iteration limits must be positive")


@dataclass(frozen=True, eq=False)
class AgentConfig:
    model: ManipulatorModel
    weights: CostWeights
    Np: int = 15
    Ts: float = 0.2
    pair_set: tuple[PairEntry, ...] = ()
    env: StaticEnvironment | None = field(default_factory=StaticEnvironment)
    proj: SmoothProjection = field(default_factory=SmoothProjection)
    options: SolverOptions = field(default_factory=SolverOptions)
    # required ELS margin H - 1 >= collision_margin
    collision_margin: float = 0.0
    # extra constraint instants per sampling interval (0: samples only)
    intersample: int = 0

    def __post_init__(self):
        if self.Np < 2:
            raise ValueError("horizon Np must be at least 2")
        if self.intersample < 0:
            raise ValueError("intersample must be non-negative")
        if not self.Ts > 0:
            raise ValueError("sampling time must be positive")
        object.__setattr__(self, "pair_set", tuple(self.pair_set))

    @property
    def dyn(self) -> DiscreteDynamics:
        return discretize(self.model.n_joints, self.Ts)

    @property
    def bounds(self) -> Bounds:
        return model_bounds(self.model)

    @property
    def neighbours(self) -> set[int]:
        return {p.other for p in self.pair_set}


@dataclass
class OcpSolution:
    states: np.ndarray  # (Np+1, 2N)
    inputs: np.ndarray  # (Np, N)
    objective: float
    iterations: int = 0
    solve_time: float = 0.0
    converged: bool = False
    max_violation: float = 0.0
    message: str = ""

    def shifted(self) -> np.ndarray:
        """Warm-start inputs: drop the first, repeat the last."""
        return np.vstack([self.inputs[1:], self.inputs[-1:]])


# ---------------------------------------------------------------------------
# costs


def stage_cost(x, u, u_next, x_f, weights: CostWeights, Ts: float) -> float:
    e = np.asarray(x) - np.asarray(x_f)
    du = (np.asarray(u_next) - np.asarray(u)) / Ts
    return float(e @ (weights.Qx * e) + u @ (weights.Ru * u) + du @ (weights.Rd * du))


def terminal_cost(x, x_f, weights: CostWeights) -> float:
    e = np.asarray(x) - np.asarray(x_f)
    return float(e @ (weights.Qf * e))


def trajectory_cost(states, inputs, x_f, weights: CostWeights, Ts: float, u_prev=None) -> float:
    """Objective of a full state/input trajectory.

    Smoothness terms link consecutive inputs for k = 0 .. Np-2 plus the first
    input to the previously applied one.
    """
    states = np.asarray(states)
    inputs = np.asarray(inputs)
    Np = len(inputs)
    total = 0.0
    for k in range(Np):
        u_next = inputs[k + 1] if k + 1 < Np else inputs[k]
        total += stage_cost(states[k], inputs[k], u_next, x_f, weights, Ts)
    total += terminal_cost(states[Np], x_f, weights)
    if u_prev is not None:
        du = (inputs[0] - np.asarray(u_prev)) / Ts
        total += float(du @ (weights.Rd * du))
    return total


# ---------------------------------------------------------------------------
# problem assembly


def prediction_matrices(dyn: DiscreteDynamics, Np: int):
    """``Sx`` ((Np+1)*2N, 2N) and ``Su`` ((Np+1)*2N, Np*N) with X = Sx x0 + Su U."""
    nx, nu = dyn.A.shape[0], dyn.B.shape[1]
    Sx = np.zeros(((Np + 1) * nx, nx))
    Su = np.zeros(((Np + 1) * nx, Np * nu))
    Ak = np.eye(nx)
    powers = [Ak]
    for _ in range(Np):
        powers.append(dyn.A @ powers[-1])
    for k in range(Np + 1):
        Sx[k * nx:(k + 1) * nx] = powers[k]
        for j in range(k):
            Su[k * nx:(k + 1) * nx, j * nu:(j + 1) * nu] = powers[k - 1 - j] @ dyn.B
    return Sx, Su


class _RobotBlock:
    """One free robot: condensed dynamics and quadratic cost."""

    def __init__(self, rid, model, weights, dyn, Np, x_s, x_f, u_prev, offset, intersample=0):
        self.rid = rid
        self.model = model
        self.n = model.n_joints
        self.Np = Np
        self.dyn = dyn
        self.bounds = model_bounds(model)
        self.x_s = np.asarray(x_s, dtype=float)
        self.x_f = np.asarray(x_f, dtype=float)
        self.u_prev = np.zeros(self.n) if u_prev is None else np.asarray(u_prev, dtype=float)
        self.weights = weights
        self.sl = slice(offset, offset + Np * self.n)
        n, nx = self.n, 2 * self.n
        Sx, Su = prediction_matrices(dyn, Np)
        self.c = Sx @ self.x_s
        self.Su = Su
        # joint positions at the constraint instants, linear in U: (T, N, Np*N)
        Su3 = Su.reshape(Np + 1, nx, Np * n)
        c3 = self.c.reshape(Np + 1, nx)
        Sq, cq = [Su3[1:, :n, :]], [c3[1:, :n]]
        for tau in _intersample_times(dyn.Ts, intersample):
            E = np.zeros((Np, n, Np * n))
            for k in range(Np):
                E[k, :, k * n:(k + 1) * n] = np.eye(n)
            Sq.append(Su3[:-1, :n, :] + tau * Su3[:-1, n:, :] + 0.5 * tau**2 * E)
            cq.append(c3[:-1, :n] + tau * c3[:-1, n:])
        self.Sq = np.concatenate(Sq)
        self.cq = np.concatenate(cq)
        self.T = len(self.cq)

        Wdiag = np.concatenate([np.tile(weights.Qx, Np), weights.Qf])
        Xf = np.tile(self.x_f, Np + 1)
        H = 2.0 * Su.T @ (Wdiag[:, None] * Su)
        h = 2.0 * Su.T @ (Wdiag * (self.c - Xf))
        const = float((self.c - Xf) @ (Wdiag * (self.c - Xf)))
        H += 2.0 * np.diag(np.tile(weights.Ru, Np))
        # smoothness: rows (u_{k+1} - u_k)/Ts for k=0..Np-2 and (u_0 - u_prev)/Ts
        D = np.zeros((Np * n, Np * n))
        D[:n, :n] = np.eye(n)
        for k in range(1, Np):
            D[k * n:(k + 1) * n, k * n:(k + 1) * n] = np.eye(n)
            D[k * n:(k + 1) * n, (k - 1) * n:k * n] = -np.eye(n)
        D /= dyn.Ts
        d0 = np.zeros(Np * n)
        d0[:n] = -self.u_prev / dyn.Ts
        Rdd = np.tile(weights.Rd, Np)
        H += 2.0 * D.T @ (Rdd[:, None] * D)
        h += 2.0 * D.T @ (Rdd * d0)
        const += float(d0 @ (Rdd * d0))
        self.H, self.h, self.const = H, h, const

        # state boxes on x^1..x^Np, keeping only rows reachable under input bounds
        lo, hi = np.tile(self.bounds.x_min, Np), np.tile(self.bounds.x_max, Np)
        A = Su[nx:]
        c = self.c[nx:]
        umin, umax = np.tile(self.bounds.u_min, Np), np.tile(self.bounds.u_max, Np)
        reach_hi = c + np.clip(A, 0, None) @ umax + np.clip(A, None, 0) @ umin
        reach_lo = c + np.clip(A, 0, None) @ umin + np.clip(A, None, 0) @ umax
        up = reach_hi > hi
        dn = reach_lo < lo
        self.lin_A = np.vstack([-A[up], A[dn]])
        self.lin_b = np.concatenate([hi[up] - c[up], -lo[dn] + c[dn]])  # lin_A U + lin_b >= 0
        self.u_lo, self.u_hi = umin, umax

    def states(self, U):
        return (self.c + self.Su @ U).reshape(self.Np + 1, 2 * self.n)

    def joints(self, U):
        """q at the constraint instants, shape (T, N): k = 1..Np, then intersample points."""
        return self.cq + np.einsum("kjv,v->kj", self.Sq, U)


@dataclass
class ConstraintCounts:
    state_bounds: int
    static: int
    dynamic: int

    @property
    def total(self) -> int:
        return self.state_bounds + self.static + self.dynamic


class OcpProblem:
    """Smooth NLP ``min f(z) s.t. c(z) >= 0, lo <= z <= hi`` over stacked inputs."""

    def __init__(self, blocks, env, proj, frozen, coupled, Ts, margin=0.0):
        self.margin = float(margin)
        self.blocks = blocks
        self.env = env
        self.proj = proj
        self.Ts = Ts
        self.frozen = frozen    # list of (block index, seg_idx, e0 (T,P,3), M (T,P,3,3))
        self.coupled = coupled  # list of (block i, block j, seg_idx, ell_idx)
        self.nz = sum(b.Np * b.n for b in blocks)
        self.lo = np.concatenate([b.u_lo for b in blocks])
        self.hi = np.concatenate([b.u_hi for b in blocks])
        self.static_rows = [movable_static_rows(b.model) if env is not None else np.array([], int)
                            for b in blocks]
        n_lin = sum(len(b.lin_b) for b in blocks)
        n_static = sum(len(r) * b.T for r, b in zip(self.static_rows, blocks))
        n_dyn = sum(len(f[1]) * blocks[f[0]].T for f in frozen)
        n_dyn += sum(len(c[2]) * blocks[c[0]].T for c in coupled)
        self.counts = ConstraintCounts(n_lin, n_static, n_dyn)
        self._cache_key = None
        self._cache = None
        self.n_evals = 0

    # -- cost
    def objective(self, z) -> float:
        return float(sum(0.5 * z[b.sl] @ b.H @ z[b.sl] + b.h @ z[b.sl] + b.const for b in self.blocks))

    def objective_grad(self, z) -> np.ndarray:
        g = np.empty(self.nz)
        for b in self.blocks:
            g[b.sl] = b.H @ z[b.sl] + b.h
        return g

    # -- constraints
    def _evaluate(self, z):
        key = z.tobytes()
        if key == self._cache_key:
            return self._cache
        self.n_evals += 1
        vals, jacs = [], []
        seg = {}
        for bi, b in enumerate(self.blocks):
            zi = z[b.sl]
            vals.append(b.lin_A @ zi + b.lin_b)
            J = np.zeros((len(b.lin_b), self.nz))
            J[:, b.sl] = b.lin_A
            jacs.append(J)
            q = b.joints(zi)
            seg[bi] = (q,) + segment_arrays(b.model, q, jacobian=True)
            rows = self.static_rows[bi]
            if len(rows):
                m, dm = static_point_arrays(b.model, q, self.env, jacobian=True)
                m, dm = m[:, rows], dm[:, rows]  # (T, S), (T, S, N)
                vals.append(m.ravel())
                Jq = np.einsum("ksn,knv->ksv", dm, b.Sq).reshape(-1, b.Np * b.n)
                J = np.zeros((Jq.shape[0], self.nz))
                J[:, b.sl] = Jq
                jacs.append(J)
        for bi, seg_idx, e0, M in self.frozen:
            b = self.blocks[bi]
            _, bb, rr, dbb, drr = seg[bi]
            g, gb, gr, _, _ = els_terms(bb[:, seg_idx], rr[:, seg_idx], e0, M, self.proj, gradient=True)
            dq = (np.einsum("kpi,kpin->kpn", gb, dbb[:, seg_idx])
                  + np.einsum("kpi,kpin->kpn", gr, drr[:, seg_idx]))
            vals.append(g.ravel() - self.margin)
            Jq = np.einsum("kpn,knv->kpv", dq, b.Sq).reshape(-1, b.Np * b.n)
            J = np.zeros((Jq.shape[0], self.nz))
            J[:, b.sl] = Jq
            jacs.append(J)
        for bi, bj, seg_idx, ell_idx in self.coupled:
            b, c = self.blocks[bi], self.blocks[bj]
            _, bb, rr, dbb, drr = seg[bi]
            qj = seg[bj][0]
            e0, M, de0, dM = ellipsoid_arrays(c.model, qj, jacobian=True)
            g, gb, gr, ge, gM = els_terms(bb[:, seg_idx], rr[:, seg_idx], e0[:, ell_idx], M[:, ell_idx],
                                          self.proj, gradient=True)
            dqi = (np.einsum("kpi,kpin->kpn", gb, dbb[:, seg_idx])
                   + np.einsum("kpi,kpin->kpn", gr, drr[:, seg_idx]))
            dqj = (np.einsum("kpi,kpin->kpn", ge, de0[:, ell_idx])
                   + np.einsum("kpil,kpiln->kpn", gM, dM[:, ell_idx]))
            vals.append(g.ravel() - self.margin)
            J = np.zeros((g.size, self.nz))
            J[:, b.sl] = np.einsum("kpn,knv->kpv", dqi, b.Sq).reshape(-1, b.Np * b.n)
            J[:, c.sl] += np.einsum("kpn,knv->kpv", dqj, c.Sq).reshape(-1, c.Np * c.n)
            jacs.append(J)
        v = np.concatenate(vals) if vals else np.zeros(0)
        J = np.vstack(jacs) if jacs else np.zeros((0, self.nz))
        self._cache_key, self._cache = key, (v, J)
        return v, J

    def constraints(self, z) -> np.ndarray:
        return self._evaluate(np.asarray(z, dtype=float))[0].copy()

    def constraints_jac(self, z) -> np.ndarray:
        return self._evaluate(np.asarray(z, dtype=float))[1].copy()

    def max_violation(self, z) -> float:
        c = self.constraints(z)
        box = max(0.0, float(np.max(self.lo - z, initial=0.0)), float(np.max(z - self.hi, initial=0.0)))
        return max(box, float(np.max(-c, initial=0.0)))

    def split(self, z):
        """Per-block (states, inputs)."""
        return [(b.states(z[b.sl]), z[b.sl].reshape(b.Np, b.n)) for b in self.blocks]


def _intersample_times(Ts, count):
    return [Ts * s / (count + 1) for s in range(1, count + 1)]


def instant_joints(states, Ts, intersample=0):
    """Joint positions of a state trajectory at the constraint instants (same
    order as the free robot's rows), assuming zero-order-hold inputs."""
    states = np.asarray(states, dtype=float)
    n = states.shape[1] // 2
    q, qd = states[:, :n], states[:, n:]
    out = [q[1:]]
    u = (qd[1:] - qd[:-1]) / Ts
    for tau in _intersample_times(Ts, intersample):
        out.append(q[:-1] + tau * qd[:-1] + 0.5 * tau**2 * u)
    return np.concatenate(out)


def _frozen_ellipsoids(model, states, Ts, intersample):
    return ellipsoid_arrays(model, instant_joints(states, Ts, intersample))


def _group_pairs(pair_set):
    by_other: dict[int, list[PairEntry]] = {}
    for p in pair_set:
        by_other.setdefault(p.other, []).append(p)
    return sorted(by_other.items())


def _prediction_states(pred, Np, other):
    states = np.asarray(getattr(pred, "states", pred))
    if len(states) != Np + 1:
        raise ValueError(f"neighbor {other} prediction has {len(states)} states, expected Np+1 = {Np + 1}")
    return states


def build_problem(agent: AgentConfig, x_s, x_f, neighbor_preds=None, neighbor_models=None,
                  u_prev=None) -> OcpProblem:
    """Single-agent problem with neighbours frozen at their communicated predictions."""
    neighbor_preds = neighbor_preds or {}
    neighbor_models = neighbor_models or {}
    block = _RobotBlock(0, agent.model, agent.weights, agent.dyn, agent.Np, x_s, x_f, u_prev, 0,
                        agent.intersample)
    frozen = []
    for other, entries in _group_pairs(agent.pair_set):
        if other not in neighbor_preds:
            raise StaleNeighbor(f"stale neighbor: no prediction for robot {other}")
        states = _prediction_states(neighbor_preds[other], agent.Np, other)
        e0, M = _frozen_ellipsoids(neighbor_models[other], states, agent.Ts, agent.intersample)
        seg_idx = np.array([p.segment for p in entries])
        ell_idx = np.array([p.ellipsoid for p in entries])
        frozen.append((0, seg_idx, e0[:, ell_idx], M[:, ell_idx]))
    return OcpProblem([block], agent.env, agent.proj, frozen, [], agent.Ts, agent.collision_margin)


def build_central_problem(agents, x_s, x_f, u_prev=None, free=None, frozen_preds=None) -> OcpProblem:
    """One NLP over the ``free`` robots (default: all); both sides of every
    collision pair between free robots are decision variables. Robots outside
    ``free`` enter through their fixed predictions in ``frozen_preds``."""
    ids = list(range(len(agents))) if free is None else list(free)
    frozen_preds = frozen_preds or {}
    blocks = []
    index = {}
    offset = 0
    for i in ids:
        a = agents[i]
        up = None if u_prev is None else u_prev[i]
        index[i] = len(blocks)
        blocks.append(_RobotBlock(i, a.model, a.weights, a.dyn, a.Np, x_s[i], x_f[i], up, offset,
                                  a.intersample))
        offset += a.Np * a.model.n_joints
    coupled, frozen = [], []
    for i in ids:
        a = agents[i]
        for j, entries in _group_pairs(a.pair_set):
            seg_idx = np.array([p.segment for p in entries])
            ell_idx = np.array([p.ellipsoid for p in entries])
            if j in index:
                coupled.append((index[i], index[j], seg_idx, ell_idx))
            else:
                if j not in frozen_preds:
                    raise StaleNeighbor(f"stale neighbor: no prediction for robot {j}")
                states = _prediction_states(frozen_preds[j], a.Np, j)
                e0, M = _frozen_ellipsoids(agents[j].model, states, a.Ts, a.intersample)
                frozen.append((index[i], seg_idx, e0[:, ell_idx], M[:, ell_idx]))
    a0 = agents[ids[0]]
    return OcpProblem(blocks, a0.env, a0.proj, frozen, coupled, a0.Ts, a0.collision_margin)


def gradients(problem: OcpProblem, z):
    return problem.objective_grad(z), problem.constraints_jac(z)


# ---------------------------------------------------------------------------
# solvers


def _check_finite(problem, z, f, c):
    if not (np.isfinite(f) and np.all(np.isfinite(c))):
        raise NumericalFailure(f"numerical failure at iterate {np.array2string(z, precision=6)}")


def _solve_slsqp(problem: OcpProblem, z0, opts: SolverOptions):
    from scipy.optimize import minimize

    def fun(z):
        f = problem.objective(z)
        g = problem.objective_grad(z)
        if not np.isfinite(f):
            raise NumericalFailure(f"numerical failure at iterate {np.array2string(z, precision=6)}")
        return f, g

    def cons(z):
        c = problem.constraints(z)
        if not np.all(np.isfinite(c)):
            raise NumericalFailure(f"numerical failure at iterate {np.array2string(z, precision=6)}")
        return c

    constraints = []
    if problem.counts.total:
        constraints = [{"type": "ineq", "fun": cons, "jac": problem.constraints_jac}]
    res = minimize(fun, z0, jac=True, method="SLSQP", bounds=list(zip(problem.lo, problem.hi)),
                   constraints=constraints,
                   options={"maxiter": opts.max_iters, "ftol": opts.stationarity_tol})
    z = np.clip(res.x, problem.lo, problem.hi)
    return z, int(res.nit), bool(res.success), str(res.message)


def _solve_sqp(problem: OcpProblem, z0, opts: SolverOptions):
    """SQP with the exact cost Hessian and linearised constraints.

    The cost is quadratic in U, so the QP model of the objective is exact and
    only the constraint curvature is dropped. Subproblems go to a dense dual
    active-set QP solver; an inconsistent linearisation is retried with one
    elastic slack shared by all nonlinear rows. Steps are globalised with an
    l1 merit function and Armijo backtracking.
    """
    import quadprog
    from scipy.linalg import block_diag

    n = problem.nz
    H = block_diag(*[b.H for b in problem.blocks]) + 1e-9 * np.eye(n)
    eye = np.eye(n)
    z = np.clip(z0, problem.lo, problem.hi)
    nu = 10.0

    def merit(zz):
        f = problem.objective(zz)
        c = problem.constraints(zz)
        _check_finite(problem, zz, f, c)
        return f + nu * float(np.sum(np.maximum(0.0, -c)))

    message = "max iterations"
    for it in range(1, opts.max_iters + 1):
        g = problem.objective_grad(z)
        c, J = problem._evaluate(z)
        _check_finite(problem, z, problem.objective(z), c)
        m = len(c)
        C = np.vstack([J, eye, -eye]).T
        b = np.concatenate([-c, problem.lo - z, z - problem.hi])
        try:
            sol = quadprog.solve_qp(H, -g, C, b, 0)
            d, lam = sol[0], sol[4][:m]
        except ValueError as exc:
            if "inconsistent" not in str(exc):
                raise NumericalFailure(f"QP failure: {exc}") from exc
            He = np.zeros((n + 1, n + 1))
            He[:n, :n] = H
            He[n, n] = 1e-6
            Ce = np.zeros((n + 1, C.shape[1] + 1))
            Ce[:n, :-1] = C
            Ce[n, :m] = 1.0
            Ce[n, -1] = 1.0
            sol = quadprog.solve_qp(He, -np.concatenate([g, [1e4]]), Ce, np.concatenate([b, [0.0]]), 0)
            d, lam = sol[0][:n], sol[4][:m]
        viol = float(np.max(-c, initial=0.0))
        if np.max(np.abs(d), initial=0.0) <= opts.stationarity_tol and viol <= opts.feasibility_tol:
            return z, it, True, "converged"
        nu = max(nu, 1.5 * float(np.max(np.abs(lam), initial=0.0)))
        l1 = float(np.sum(np.maximum(0.0, -c)))
        phi0 = problem.objective(z) + nu * l1
        slope = min(float(g @ d) - nu * l1, 0.0)
        a = 1.0
        while a > 1e-10 and merit(z + a * d) > phi0 + 1e-4 * a * slope:
            a *= 0.5
        if a <= 1e-10:
            message = "line search failed"
            break
        z = np.clip(z + a * d, problem.lo, problem.hi)
    return z, it, False, message


def _solve_auglag(problem: OcpProblem, z0, opts: SolverOptions):
    """Augmented Lagrangian outer loop, projected quasi-Newton (L-BFGS-B) inner solves."""
    from scipy.optimize import minimize

    m = problem.counts.total
    lam = np.zeros(m)
    rho = 10.0
    z = np.clip(z0, problem.lo, problem.hi)
    bounds = list(zip(problem.lo, problem.hi))
    iters = 0
    viol_prev = np.inf

    def lagrangian(zz):
        f = problem.objective(zz)
        g = problem.objective_grad(zz)
        if m == 0:
            return f, g
        c, J = problem._evaluate(zz)
        _check_finite(problem, zz, f, c)
        # PHR term for c >= 0
        t = lam - rho * c
        act = t > 0
        val = f + (np.sum(t[act] ** 2) - np.sum(lam ** 2)) / (2 * rho)
        grad = g - J[act].T @ t[act]
        return val, grad

    converged = False
    message = "max outer iterations"
    for _ in range(opts.max_outer):
        res = minimize(lagrangian, z, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.max_iters, "gtol": opts.stationarity_tol, "ftol": 1e-15})
        z = res.x
        iters += int(res.nit)
        if m == 0:
            converged = bool(res.success)
            message = str(res.message)
            break
        c = problem.constraints(z)
        viol = float(np.max(-c, initial=0.0))
        lam = np.maximum(0.0, lam - rho * c)
        if viol <= opts.feasibility_tol and res.success:
            converged = True
            message = "converged"
            break
        if viol > 0.25 * viol_prev:
            rho = min(rho * 10.0, 1e8)
        viol_prev = viol
    return z, iters, converged, message


def solve(problem: OcpProblem, warm_start=None, options: SolverOptions = SolverOptions()) -> list[OcpSolution] | OcpSolution:
    """Solve the NLP; one solution per robot block (a single solution for one block).

    ``warm_start`` is an input array matching the decision vector (or an
    ``OcpSolution`` / list of them, shifted by the caller if desired).
    """
    if warm_start is None:
        z0 = np.zeros(problem.nz)
    elif isinstance(warm_start, OcpSolution):
        z0 = warm_start.inputs.ravel()
    elif isinstance(warm_start, (list, tuple)) and warm_start and isinstance(warm_start[0], OcpSolution):
        z0 = np.concatenate([w.inputs.ravel() for w in warm_start])
    else:
        z0 = np.asarray(warm_start, dtype=float).ravel()
    z0 = np.clip(z0, problem.lo, problem.hi)
    t0 = time.perf_counter()
    if options.method == "sqp":
        z, iters, ok, msg = _solve_sqp(problem, z0, options)
    elif options.method == "slsqp":
        z, iters, ok, msg = _solve_slsqp(problem, z0, options)
    else:
        z, iters, ok, msg = _solve_auglag(problem, z0, options)
    elapsed = time.perf_counter() - t0
    viol = problem.max_violation(z)
    f = problem.objective(z)
    converged = ok and viol <= options.feasibility_tol
    sols = []
    for states, inputs in problem.split(z):
        sols.append(OcpSolution(states, inputs, f, iters, elapsed, converged, viol, msg))
    if len(sols) > 1:
        # per-robot objective for the centralised problem
        for b, s in zip(problem.blocks, sols):
            zi = z[b.sl]
            s.objective = float(0.5 * zi @ b.H @ zi + b.h @ zi + b.const)
    return sols[0] if len(sols) == 1 else sols
