"""Serial-chain forward kinematics with standard (distal) Denavit-Hartenberg rows.

Frame indexing used throughout the package::

    0        robot base (``base_pose`` in the world frame)
    1 .. N   frame attached to the distal end of link ``j``; joint ``j``
             rotates about the z-axis of frame ``j - 1``
    N + 1    tool point: frame N translated by ``gripper_offset`` along its z-axis

Collision geometry is defined on *points* fixed in one of these frames, so a
segment endpoint may be a frame origin or a point offset from it (needed for
the lateral shoulder/elbow offsets of UR-style arms that DH folds away).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class PointRef:
    frame: int
    offset: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class SegmentSpec:
    name: str
    start: PointRef
    end: PointRef


@dataclass(frozen=True)
class EllipsoidSpec:
    name: str
    start: PointRef
    end: PointRef
    semi_axes: tuple[float, float, float]
    # frame whose axes carry (l1, l2, l3); defaults to the start point's frame
    rotation_frame: int | None = None

    @property
    def frame(self) -> int:
        return self.start.frame if self.rotation_frame is None else self.rotation_frame


@dataclass(frozen=True, eq=False)
class ManipulatorModel:
    """Geometry and limits of one serial manipulator.

    ``dh_rows`` holds ``(a, alpha, d, theta_offset)`` per joint. All joints are
    revolute. ``link_radius`` is the physical half-width of the links and is
    only used to validate ellipsoid sizing.
    """

    name: str
    dh_rows: np.ndarray
    joint_limits: np.ndarray
    velocity_limits: np.ndarray
    acceleration_limits: np.ndarray
    segments: tuple[SegmentSpec, ...] = ()
    ellipsoids: tuple[EllipsoidSpec, ...] = ()
    neutral_pose: np.ndarray | None = None
    gripper_offset: float = 0.0
    base_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    link_radius: float = 0.0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        set_("dh_rows", np.atleast_2d(np.asarray(self.dh_rows, dtype=float)))
        if self.dh_rows.size == 0:
            raise ModelError("empty chain")
        n = self.dh_rows.shape[0]
        if self.dh_rows.shape != (n, 4):
            raise ModelError("dh_rows must have shape (N, 4)")
        set_("joint_limits", np.asarray(self.joint_limits, dtype=float).reshape(n, 2))
        set_("velocity_limits", np.asarray(self.velocity_limits, dtype=float).reshape(n))
        set_("acceleration_limits", np.asarray(self.acceleration_limits, dtype=float).reshape(n))
        neutral = np.zeros(n) if self.neutral_pose is None else self.neutral_pose
        set_("neutral_pose", np.asarray(neutral, dtype=float).reshape(n))
        set_("base_position", np.asarray(self.base_position, dtype=float).reshape(3))
        set_("base_rotation", np.asarray(self.base_rotation, dtype=float).reshape(3, 3))
        set_("segments", tuple(self.segments))
        set_("ellipsoids", tuple(self.ellipsoids))
        self.validate()

    @property
    def n_joints(self) -> int:
        return self.dh_rows.shape[0]

    @property
    def segment_names(self) -> list[str]:
        return [s.name for s in self.segments]

    @property
    def ellipsoid_names(self) -> list[str]:
        return [e.name for e in self.ellipsoids]

    def validate(self) -> None:
        n = self.n_joints
        arrays = (self.dh_rows, self.joint_limits, self.velocity_limits,
                  self.acceleration_limits, self.neutral_pose,
                  self.base_position, self.base_rotation)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ModelError("non-finite entry in model")
        for j, (lo, hi) in enumerate(self.joint_limits):
            if not lo < hi:
                raise ModelError(f"joint {j + 1}: limit min {lo} >= max {hi}")
        if np.any(self.velocity_limits <= 0) or np.any(self.acceleration_limits <= 0):
            raise ModelError("velocity and acceleration limits must be positive")
        if self.gripper_offset < 0 or self.link_radius < 0:
            raise ModelError("gripper_offset and link_radius must be non-negative")
        R = self.base_rotation
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or not np.isclose(np.linalg.det(R), 1.0, atol=1e-9):
            raise ModelError("base_rotation is not a rotation matrix")
        refs = [p for s in self.segments for p in (s.start, s.end)]
        refs += [p for e in self.ellipsoids for p in (e.start, e.end)]
        frames = [p.frame for p in refs] + [e.frame for e in self.ellipsoids]
        for f in frames:
            if not 0 <= f <= n + 1:
                raise ModelError(f"frame index {f} outside [0, {n + 1}]")
        names = self.segment_names
        if len(set(names)) != len(names) or len(set(self.ellipsoid_names)) != len(self.ellipsoids):
            raise ModelError("duplicate segment or ellipsoid name")
        for e in self.ellipsoids:
            axes = np.asarray(e.semi_axes, dtype=float)
            if axes.shape != (3,) or np.any(axes <= 0):
                raise ModelError(f"ellipsoid {e.name!r}: semi-axes must be 3 positive values")
            if np.sort(axes)[:2].min() < 2.0 * self.link_radius:
                raise ModelError(
                    f"ellipsoid {e.name!r}: minor semi-axes must be at least twice the link radius"
                )

    def with_base(self, position, rotation=None) -> "ManipulatorModel":
        """Copy of the model mounted at another base pose."""
        rot = self.base_rotation if rotation is None else rotation
        return ManipulatorModel(
            name=self.name, dh_rows=self.dh_rows, joint_limits=self.joint_limits,
            velocity_limits=self.velocity_limits, acceleration_limits=self.acceleration_limits,
            segments=self.segments, ellipsoids=self.ellipsoids, neutral_pose=self.neutral_pose,
            gripper_offset=self.gripper_offset, base_position=position, base_rotation=rot,
            link_radius=self.link_radius,
        )

    def with_segments(self, names) -> "ManipulatorModel":
        keep = [s for s in self.segments if s.name in set(names)]
        return ManipulatorModel(
            name=self.name, dh_rows=self.dh_rows, joint_limits=self.joint_limits,
            velocity_limits=self.velocity_limits, acceleration_limits=self.acceleration_limits,
            segments=keep, ellipsoids=self.ellipsoids, neutral_pose=self.neutral_pose,
            gripper_offset=self.gripper_offset, base_position=self.base_position,
            base_rotation=self.base_rotation, link_radius=self.link_radius,
        )


@dataclass(frozen=True)
class LinkFrame:
    origin: np.ndarray
    rotation: np.ndarray


@dataclass(frozen=True)
class LineSegment:
    """Points ``base + alpha * direction`` for ``alpha`` in [0, 1]."""

    base: np.ndarray
    direction: np.ndarray

    @property
    def end(self) -> np.ndarray:
        return self.base + self.direction


@dataclass(frozen=True)
class Ellipsoid:
    center: np.ndarray
    rotation: np.ndarray
    inv_sq_semi_axes: np.ndarray  # diagonal 3x3

    @property
    def shape_matrix(self) -> np.ndarray:
        """``R E R^T``; the level set ``(e - c)^T M (e - c) = 1`` is the surface."""
        return self.rotation @ self.inv_sq_semi_axes @ self.rotation.T


# ---------------------------------------------------------------------------
# batched core


def _dh_transforms(model: ManipulatorModel, q: np.ndarray):
    """Per-joint rotation (..., N, 3, 3) and translation (..., N, 3)."""
    a, alpha, d, offset = model.dh_rows.T
    th = q + offset
    ct, st = np.cos(th), np.sin(th)
    ca, sa = np.cos(alpha), np.sin(alpha)
    ca = np.broadcast_to(ca, th.shape)
    sa = np.broadcast_to(sa, th.shape)
    zero = np.zeros_like(th)
    rot = np.stack([
        np.stack([ct, -st * ca, st * sa], axis=-1),
        np.stack([st, ct * ca, -ct * sa], axis=-1),
        np.stack([zero, sa, ca], axis=-1),
    ], axis=-2)
    trans = np.stack([a * ct, a * st, np.broadcast_to(d, th.shape)], axis=-1)
    return rot, trans


def fk_batch(model: ManipulatorModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Frame origins (..., N+2, 3) and rotations (..., N+2, 3, 3) for q of shape (..., N)."""
    q = np.asarray(q, dtype=float)
    n = model.n_joints
    if q.shape[-1] != n:
        raise ValueError(f"expected {n} joint values, got {q.shape[-1]}")
    batch = q.shape[:-1]
    rot, trans = _dh_transforms(model, q)
    origins = np.empty(batch + (n + 2, 3))
    rotations = np.empty(batch + (n + 2, 3, 3))
    R = np.broadcast_to(model.base_rotation, batch + (3, 3))
    p = np.broadcast_to(model.base_position, batch + (3,))
    origins[..., 0, :] = p
    rotations[..., 0, :, :] = R
    for j in range(n):
        p = p + np.einsum("...ij,...j->...i", R, trans[..., j, :])
        R = R @ rot[..., j, :, :]
        origins[..., j + 1, :] = p
        rotations[..., j + 1, :, :] = R
    origins[..., n + 1, :] = p + model.gripper_offset * R[..., :, 2]
    rotations[..., n + 1, :, :] = R
    return origins, rotations


def _affected(model: ManipulatorModel, frame: int) -> np.ndarray:
    """Mask over joints 1..N that move the given frame."""
    return np.arange(1, model.n_joints + 1) <= frame


def point_positions(origins, rotations, refs) -> np.ndarray:
    """World positions (..., len(refs), 3) of frame-fixed points."""
    frames = np.array([r.frame for r in refs], dtype=int)
    offsets = np.array([r.offset for r in refs], dtype=float).reshape(len(refs), 3)
    return origins[..., frames, :] + np.einsum("...kij,kj->...ki", rotations[..., frames, :, :], offsets)


def point_jacobians(model, origins, rotations, refs, points=None) -> np.ndarray:
    """d(point)/dq with shape (..., len(refs), 3, N).

    Joint j rotates about axis z_{j-1} through origin o_{j-1}, so a point p
    carried by a later frame moves with z_{j-1} x (p - o_{j-1}).
    """
    if points is None:
        points = point_positions(origins, rotations, refs)
    n = model.n_joints
    axes = rotations[..., :n, :, 2]  # (..., N, 3)
    pivots = origins[..., :n, :]
    lever = points[..., :, None, :] - pivots[..., None, :, :]  # (..., K, N, 3)
    jac = np.cross(np.broadcast_to(axes[..., None, :, :], lever.shape), lever)
    mask = np.array([_affected(model, r.frame) for r in refs], dtype=float)  # (K, N)
    jac = jac * mask[..., None]
    return np.swapaxes(jac, -1, -2)


def rotation_jacobians(model, rotations, frames) -> np.ndarray:
    """dR_f/dq_j = [z_{j-1}]x R_f, shape (..., len(frames), 3, 3, N)."""
    n = model.n_joints
    frames = list(frames)
    axes = rotations[..., :n, :, 2]
    R = rotations[..., frames, :, :]  # (..., K, 3, 3)
    # cross of axis with each column of R
    cols = np.swapaxes(R, -1, -2)  # (..., K, 3 cols, 3)
    dcols = np.cross(axes[..., None, :, None, :], cols[..., :, None, :, :])  # (..., K, N, 3, 3)
    dR = np.swapaxes(dcols, -1, -2)  # (..., K, N, 3, 3)
    mask = np.array([_affected(model, f) for f in frames], dtype=float)
    dR = dR * mask[..., None, None]
    return np.moveaxis(dR, -3, -1)


# ---------------------------------------------------------------------------
# single-configuration API


def forward_kinematics(model: ManipulatorModel, q) -> list[LinkFrame]:
    origins, rotations = fk_batch(model, q)
    return [LinkFrame(origins[i], rotations[i]) for i in range(model.n_joints + 2)]


def fk_jacobians(model: ManipulatorModel, q) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of all frame origins (N+2, 3, N) and rotations (N+2, 3, 3, N)."""
    origins, rotations = fk_batch(model, q)
    refs = [PointRef(f) for f in range(model.n_joints + 2)]
    d_orig = point_jacobians(model, origins, rotations, refs)
    d_rot = rotation_jacobians(model, rotations, range(model.n_joints + 2))
    return d_orig, d_rot


def segment_arrays(model, q, jacobian=False):
    """Segment bases and directions (..., N_L, 3), optionally with d/dq (..., N_L, 3, N)."""
    origins, rotations = fk_batch(model, q)
    starts = [s.start for s in model.segments]
    ends = [s.end for s in model.segments]
    b = point_positions(origins, rotations, starts)
    e = point_positions(origins, rotations, ends)
    if not jacobian:
        return b, e - b
    db = point_jacobians(model, origins, rotations, starts, b)
    de = point_jacobians(model, origins, rotations, ends, e)
    return b, e - b, db, de - db


def ellipsoid_arrays(model, q, jacobian=False):
    """Centers (..., N_E, 3) and shape matrices R E R^T (..., N_E, 3, 3).

    With ``jacobian`` also returns d(center)/dq (..., N_E, 3, N) and
    d(shape)/dq (..., N_E, 3, 3, N).
    """
    origins, rotations = fk_batch(model, q)
    starts = [e.start for e in model.ellipsoids]
    ends = [e.end for e in model.ellipsoids]
    frames = [e.frame for e in model.ellipsoids]
    inv_sq = np.array([1.0 / np.square(e.semi_axes) for e in model.ellipsoids]).reshape(-1, 3)
    p0 = point_positions(origins, rotations, starts)
    p1 = point_positions(origins, rotations, ends)
    centers = 0.5 * (p0 + p1)
    R = rotations[..., frames, :, :]
    M = np.einsum("...kij,kj,...klj->...kil", R, inv_sq, R)
    if not jacobian:
        return centers, M
    dc = 0.5 * (point_jacobians(model, origins, rotations, starts, p0)
                + point_jacobians(model, origins, rotations, ends, p1))
    dR = rotation_jacobians(model, rotations, frames)  # (..., K, 3, 3, N)
    half = np.einsum("...kijn,kj,...klj->...kiln", dR, inv_sq, R)
    dM = half + np.swapaxes(half, -3, -2)
    return centers, M, dc, dM


def line_segments(model: ManipulatorModel, q) -> list[LineSegment]:
    b, r = segment_arrays(model, q)
    norms = np.linalg.norm(r, axis=-1)
    for spec, length in zip(model.segments, norms):
        if length <= 1e-12:
            raise ModelError(f"zero-length segment {spec.name!r}")
    return [LineSegment(b[k], r[k]) for k in range(len(model.segments))]


def ellipsoids(model: ManipulatorModel, q) -> list[Ellipsoid]:
    origins, rotations = fk_batch(model, q)
    out = []
    for e in model.ellipsoids:
        p0, p1 = point_positions(origins, rotations, [e.start, e.end])
        out.append(Ellipsoid(
            center=0.5 * (p0 + p1),
            rotation=rotations[e.frame],
            inv_sq_semi_axes=np.diag(1.0 / np.square(e.semi_axes)),
        ))
    return out


def tool_position(model: ManipulatorModel, q) -> np.ndarray:
    origins, _ = fk_batch(model, q)
    return origins[..., model.n_joints + 1, :]


def tool_jacobian(model: ManipulatorModel, q) -> np.ndarray:
    origins, rotations = fk_batch(model, q)
    return point_jacobians(model, origins, rotations, [PointRef(model.n_joints + 1)])[..., 0, :, :]


# ---------------------------------------------------------------------------
# model files


def _point(raw) -> PointRef:
    if isinstance(raw, int):
        return PointRef(raw)
    if isinstance(raw, dict):
        return PointRef(int(raw["frame"]), tuple(float(v) for v in raw.get("offset", (0, 0, 0))))
    frame, offset = raw
    return PointRef(int(frame), tuple(float(v) for v in offset))


def _rotation_from_yaw(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def model_from_dict(doc: dict) -> ManipulatorModel:
    try:
        base = doc.get("base_pose", {})
        if "rotation" in base:
            rotation = np.array(base["rotation"], dtype=float)
        else:
            rotation = _rotation_from_yaw(float(base.get("yaw", 0.0)))
        return ManipulatorModel(
            name=str(doc["name"]),
            dh_rows=[[r["a"], r["alpha"], r["d"], r.get("theta_offset", 0.0)] for r in doc["dh"]],
            joint_limits=doc["joint_limits"],
            velocity_limits=doc["velocity_limits"],
            acceleration_limits=doc["acceleration_limits"],
            segments=tuple(
                SegmentSpec(s["name"], _point(s["start"]), _point(s["end"])) for s in doc.get("segments", [])
            ),
            ellipsoids=tuple(
                EllipsoidSpec(
                    e["name"], _point(e["start"]), _point(e["end"]),
                    tuple(float(v) for v in e["semi_axes"]), e.get("rotation_frame"),
                )
                for e in doc.get("ellipsoids", [])
            ),
            neutral_pose=doc.get("neutral_pose"),
            gripper_offset=float(doc.get("gripper_offset", 0.0)),
            base_position=base.get("position", (0.0, 0.0, 0.0)),
            base_rotation=rotation,
            link_radius=float(doc.get("link_radius", 0.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ModelError(f"malformed model document: {exc!r}") from exc


def load_model(path) -> ManipulatorModel:
    with open(path) as fh:
        return model_from_dict(yaml.safe_load(fh))


def builtin_model_path(name: str) -> Path:
    return Path(__file__).parent / "data" / f"{name}.yaml"


def planar_model(n_links: int = 2, length: float = 1.0, **kwargs) -> ManipulatorModel:
    """Planar chain of equal links, used for analytically tractable tests."""
    limits = kwargs.pop("joint_limits", [[-np.pi, np.pi]] * n_links)
    segments = kwargs.pop("segments", tuple(
        SegmentSpec(f"link{j + 1}", PointRef(j), PointRef(j + 1)) for j in range(n_links)
    ))
    ells = kwargs.pop("ellipsoids", tuple(
        EllipsoidSpec(f"link{j + 1}", PointRef(j), PointRef(j + 1), (0.6 * length, 0.2, 0.2),
                      rotation_frame=j + 1)
        for j in range(n_links)
    ))
    return ManipulatorModel(
        name=f"planar{n_links}",
        dh_rows=[[length, 0.0, 0.0, 0.0]] * n_links,
        joint_limits=limits,
        velocity_limits=kwargs.pop("velocity_limits", [np.pi] * n_links),
        acceleration_limits=kwargs.pop("acceleration_limits", [np.pi] * n_links),
        segments=segments,
        ellipsoids=ells,
        **kwargs,
    )
