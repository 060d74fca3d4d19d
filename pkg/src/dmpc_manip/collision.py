"""Ellipsoid / line-segment (ELS) separation margins and related geometry.

Robot ``i`` is modelled by line segments, its neighbours by ellipsoids. For a
segment ``b + alpha r`` and an ellipsoid with center ``e0`` and shape matrix
``M = R E R^T`` the quadratic ``H(e) = (e - e0)^T M (e - e0)`` is minimised over
``alpha`` in closed form, the minimiser is pushed through a smooth clamp to
[0, 1] and the margin is ``g = H(s(alpha*)) - 1``. ``g >= 0`` means separated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import yaml

from .kinematics import LineSegment, Ellipsoid, ManipulatorModel, segment_arrays

EXP_CLAMP = 40.0


@dataclass(frozen=True)
class SmoothProjection:
    c: float = 20.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("projection scale c must be positive")


@dataclass(frozen=True)
class StaticEnvironment:
    table_height: float = 1.107
    z_min: float = 0.02

    def __post_init__(self):
        if self.table_height < 0 or self.z_min < 0:
            raise ValueError("table_height and z_min must be non-negative")


def _sigmoid(x, c):
    t = np.clip(c * np.asarray(x, dtype=float), -EXP_CLAMP, EXP_CLAMP)
    return 1.0 / (1.0 + np.exp(-t))


def _project(alpha, c):
    return alpha * _sigmoid(alpha, c) - (alpha - 1.0) * _sigmoid(alpha - 1.0, c)


def _project_derivative(alpha, c):
    s0 = _sigmoid(alpha, c)
    s1 = _sigmoid(alpha - 1.0, c)
    return s0 + alpha * c * s0 * (1 - s0) - s1 - (alpha - 1.0) * c * s1 * (1 - s1)


def smooth_project(alpha, proj: SmoothProjection = SmoothProjection()):
    """Smooth surrogate of clamping ``alpha`` to [0, 1]."""
    out = _project(np.asarray(alpha, dtype=float), proj.c)
    return out if out.ndim else float(out)


def smooth_project_derivative(alpha, proj: SmoothProjection = SmoothProjection()):
    out = _project_derivative(np.asarray(alpha, dtype=float), proj.c)
    return out if out.ndim else float(out)


def exact_project(alpha):
    return np.clip(alpha, 0.0, 1.0)


def unconstrained_alpha(seg: LineSegment, ell: Ellipsoid) -> float:
    """Minimiser of H along the infinite line through the segment."""
    r = np.asarray(seg.direction, dtype=float)
    if not np.linalg.norm(r) > 0:
        raise ValueError("segment direction has zero length")
    M = ell.shape_matrix
    Mr = M @ r
    return float(-(seg.base - ell.center) @ Mr / (r @ Mr))


def els_terms(b, r, e0, M, proj: SmoothProjection = SmoothProjection(), gradient=False):
    """Vectorised ELS margin over leading batch dimensions.

    Returns ``g`` and, with ``gradient``, the partials ``(dg/db, dg/dr, dg/de0, dg/dM)``.
    ``dg/dM`` is the unsymmetrised matrix derivative; contract it with a
    symmetric perturbation of ``M``.
    """
    w = b - e0
    Mr = np.einsum("...ij,...j->...i", M, r)
    Mw = np.einsum("...ij,...j->...i", M, w)
    den = np.einsum("...i,...i->...", r, Mr)
    alpha_hat = -np.einsum("...i,...i->...", w, Mr) / den
    a = _project(alpha_hat, proj.c)
    d = w + a[..., None] * r
    Md = Mw + a[..., None] * Mr
    g = np.einsum("...i,...i->...", d, Md) - 1.0
    if not gradient:
        return g
    h = 2.0 * np.einsum("...i,...i->...", d, Mr) * _project_derivative(alpha_hat, proj.c) / den
    h = h[..., None]
    dg_db = 2.0 * Md - h * Mr
    dg_dr = 2.0 * a[..., None] * Md - h * (Mw + 2.0 * alpha_hat[..., None] * Mr)
    dg_dM = (d[..., :, None] * d[..., None, :]
             - h[..., None] * (w[..., :, None] + alpha_hat[..., None, None] * r[..., :, None]) * r[..., None, :])
    return g, dg_db, dg_dr, -dg_db, dg_dM


def els_margin(seg: LineSegment, ell: Ellipsoid, proj: SmoothProjection = SmoothProjection()) -> float:
    g = els_terms(np.asarray(seg.base, float), np.asarray(seg.direction, float),
                  np.asarray(ell.center, float), ell.shape_matrix, proj)
    return float(g)


def els_margin_gradient_q(model_i, q_i, model_j, q_j, seg_index, ell_index,
                          proj: SmoothProjection = SmoothProjection()):
    """Margin between segment ``seg_index`` of robot i and ellipsoid ``ell_index`` of robot j,
    with its gradient with respect to both joint vectors."""
    from .kinematics import ellipsoid_arrays

    b, r, db, dr = segment_arrays(model_i, q_i, jacobian=True)
    e0, M, de0, dM = ellipsoid_arrays(model_j, q_j, jacobian=True)
    m, n = seg_index, ell_index
    g, gb, gr, ge, gM = els_terms(b[m], r[m], e0[n], M[n], proj, gradient=True)
    grad_i = gb @ db[m] + gr @ dr[m]
    grad_j = ge @ de0[n] + np.einsum("ij,ijk->k", gM, dM[n])
    return float(g), grad_i, grad_j


# ---------------------------------------------------------------------------
# static table constraint


def static_point_arrays(model: ManipulatorModel, q, env: StaticEnvironment, jacobian=False):
    """Table margins of every segment base, (..., N_L) and optionally d/dq (..., N_L, N).

    The base of a segment that ends at the tool point is lowered by the
    gripper length so a downward-pointing gripper stays clear.
    """
    lowering = np.array([
        model.gripper_offset if s.end.frame == model.n_joints + 1 else 0.0 for s in model.segments
    ])
    limit = env.table_height + env.z_min
    if jacobian:
        b, _, db, _ = segment_arrays(model, q, jacobian=True)
        return b[..., 2] - lowering - limit, db[..., 2, :]
    b, _ = segment_arrays(model, q)
    return b[..., 2] - lowering - limit


def static_margins(model: ManipulatorModel, q, env: StaticEnvironment) -> np.ndarray:
    return static_point_arrays(model, q, env)


def movable_static_rows(model: ManipulatorModel) -> np.ndarray:
    """Indices of segment bases whose height depends on q; the rest are constants."""
    return np.array([i for i, s in enumerate(model.segments) if s.start.frame >= 1], dtype=int)


# ---------------------------------------------------------------------------
# segment-segment distance


def _closest_params(p1, d1, p2, d2, eps=1e-24):
    """Clamped closest-point parameters for two segments, vectorised."""
    r = p1 - p2
    a = np.einsum("...i,...i->...", d1, d1)
    e = np.einsum("...i,...i->...", d2, d2)
    f = np.einsum("...i,...i->...", d2, r)
    c = np.einsum("...i,...i->...", d1, r)
    b = np.einsum("...i,...i->...", d1, d2)
    denom = a * e - b * b
    a_deg = a <= eps
    e_deg = e <= eps
    a_safe = np.where(a_deg, 1.0, a)
    e_safe = np.where(e_deg, 1.0, e)
    parallel = denom <= 1e-12 * a * e
    s = np.where(parallel, 0.0, np.clip((b * f - c * e) / np.where(parallel, 1.0, denom), 0.0, 1.0))
    t = (b * s + f) / e_safe
    # clamp t and recompute s for the clamped endpoint
    s = np.where(t < 0.0, np.clip(-c / a_safe, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / a_safe, 0.0, 1.0), s)
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments (points)
    s = np.where(e_deg, np.clip(-c / a_safe, 0.0, 1.0), s)
    t = np.where(e_deg, 0.0, t)
    t = np.where(a_deg, np.clip(f / e_safe, 0.0, 1.0), t)
    s = np.where(a_deg, 0.0, s)
    t = np.where(a_deg & e_deg, 0.0, t)
    return s, t


def segment_distances(p1, d1, p2, d2) -> np.ndarray:
    s, t = _closest_params(p1, d1, p2, d2)
    c1 = p1 + s[..., None] * d1
    c2 = p2 + t[..., None] * d2
    return np.linalg.norm(c1 - c2, axis=-1)


def segment_segment_distance(a: LineSegment, b: LineSegment) -> float:
    return float(segment_distances(np.asarray(a.base, float), np.asarray(a.direction, float),
                                   np.asarray(b.base, float), np.asarray(b.direction, float)))


def min_link_distance(model_i, q_i, model_j, q_j) -> float:
    """Smallest distance between any segment of robot i and any segment of robot j."""
    bi, ri = segment_arrays(model_i, q_i)
    bj, rj = segment_arrays(model_j, q_j)
    d = segment_distances(bi[:, None, :], ri[:, None, :], bj[None, :, :], rj[None, :, :])
    return float(d.min())


# ---------------------------------------------------------------------------
# pair sets


@dataclass(frozen=True)
class PairEntry:
    other: int
    ellipsoid: int
    segment: int


class PruningError(ValueError):
    pass


@dataclass(frozen=True)
class PruningTable:
    """Rows of (robot_pair, ellipsoid_link_name, segment_link_name).

    ``robot_pair`` is ``"*"`` (every neighbouring pair) or ``"i-j"``; rows are
    unordered in the pair and apply in both directions. ``"none"`` in the
    ellipsoid column marks a pair that needs no constraints at all.
    """

    rows: tuple[tuple[str, str, str], ...] = ()

    @classmethod
    def from_rows(cls, rows) -> "PruningTable":
        return cls(tuple((str(p), str(e), str(s)) for p, e, s in rows))

    @classmethod
    def load(cls, path) -> "PruningTable":
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        return cls.from_rows(doc["pairs"])

    def rows_for(self, i: int, j: int):
        key = {f"{i}-{j}", f"{j}-{i}"}
        specific = [r for r in self.rows if r[0] in key]
        return specific if specific else [r for r in self.rows if r[0] == "*"]


def table_one() -> PruningTable:
    """Reachable pairs for two UR3-like arms on adjacent modules."""
    rows = [
        ("shoulder", ["wrist2", "wrist3"]),
        ("elbow", ["elbow", "wrist2", "wrist3"]),
        ("wrist2", ["elbow", "wrist2", "wrist3"]),
        ("wrist3", ["shoulder", "elbow", "wrist2", "wrist3"]),
    ]
    return PruningTable.from_rows([("*", e, s) for e, segs in rows for s in segs])


def build_pair_set(models, table: PruningTable | None = None, neighbours=None) -> dict[int, tuple[PairEntry, ...]]:
    """Constraint pairs per robot.

    ``models`` is a list of placed models. ``neighbours`` is an optional set of
    unordered robot-id pairs that interact; by default every pair does.
    Without a table the full cross product segments x ellipsoids is used.
    """
    m = len(models)
    if neighbours is None:
        neighbours = {(i, j) for i in range(m) for j in range(i + 1, m)}
    neighbours = {tuple(sorted(p)) for p in neighbours}
    out = {}
    for i in range(m):
        entries = []
        for j in range(m):
            if i == j or (min(i, j), max(i, j)) not in neighbours:
                continue
            seg_names = models[i].segment_names
            ell_names = models[j].ellipsoid_names
            if table is None:
                entries += [PairEntry(j, n, k) for n in range(len(ell_names)) for k in range(len(seg_names))]
                continue
            for _, ell, seg in table.rows_for(i, j):
                if ell == "none":
                    continue
                if ell not in ell_names:
                    raise PruningError(f"unknown ellipsoid link {ell!r}")
                if seg not in seg_names:
                    raise PruningError(f"unknown segment link {seg!r}")
                entry = PairEntry(j, ell_names.index(ell), seg_names.index(seg))
                if entry not in entries:
                    entries.append(entry)
        out[i] = tuple(entries)
    return out
