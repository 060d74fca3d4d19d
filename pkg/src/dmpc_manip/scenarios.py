"""Module layouts and pick-and-place scenario generation.

Robots stand on modules of height ``z_T`` in a row with spacing ``spacing``;
neighbouring robots face each other across a shared workspace. Cartesian
object and tray positions are turned into joint targets by IK with the
gripper pointing down.
"""

from __future__ import annotations

import math

import numpy as np

from .kinematics import builtin_model_path, load_model
from .sim import IkFailure, ik_solve, place_objects_rsa

TABLE_HEIGHT = 1.107
SPACING = 0.6
HOVER = 0.15  # tool height above the module top at pick / place poses


def row_layout(m: int, spacing: float = SPACING, z: float = TABLE_HEIGHT):
    """Base positions and yaws of ``m`` robots in a row along x."""
    return [((i * spacing, 0.0, z), 0.0 if i % 2 == 0 else math.pi) for i in range(m)]


def ring_layout(m: int, side: float = SPACING, z: float = TABLE_HEIGHT):
    """``m`` robots on a circle, neighbouring bases ``side`` apart, all facing the center."""
    if m == 1:
        return [((0.0, 0.0, z), 0.0)]
    radius = side / (2 * math.sin(math.pi / m))
    out = []
    for i in range(m):
        a = 2 * math.pi * i / m
        out.append(((radius * math.cos(a), radius * math.sin(a), z), a + math.pi))
    return out


def placed_model(position, yaw, name: str = "ur3_like"):
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return load_model(builtin_model_path(name)).with_base(position, rot)


def joint_target(model, yaw: float, point) -> list[float]:
    """IK for a tool position with the gripper pointing down, seeded towards the point."""
    rel = np.asarray(point, float) - model.base_position
    phi = math.atan2(rel[1], rel[0]) - yaw + math.pi
    seed = np.array([(phi + math.pi) % (2 * math.pi) - math.pi, -2.0, 1.8, -1.37, -1.57, 0.0])
    q = ik_solve(model, point, seed, approach=(0.0, 0.0, -1.0))
    return [round(float(v), 6) for v in q]


def robot_entry(position, yaw, points, dwell: int = 5) -> dict:
    model = placed_model(position, yaw)
    return {
        "model": "ur3_like",
        "base": {"position": [float(v) for v in position], "yaw": float(yaw)},
        "tasks": [{"q": joint_target(model, yaw, p), "dwell": dwell} for p in points],
    }


def scenario_doc(name: str, robots: list[dict], **fields) -> dict:
    doc = {
        "name": name,
        "Np": 15,
        "Ts": 0.2,
        "steps": 400,
        "seed": 0,
        "transport": "inproc",
        "pruning": "table1",
        "collision_margin": 0.05,
        "table": {"height": TABLE_HEIGHT, "z_min": 0.02},
        "robots": robots,
    }
    doc.update(fields)
    return doc


def generate_pick_place(m: int, n_objects: int, seed: int = 0, spacing: float = SPACING,
                        min_sep: float = 0.08) -> dict:
    """Random pick-and-place scenario: objects by RSA in the shared workspaces,
    one tray between each neighbouring pair, tasks alternating pick and place."""
    if m < 1:
        raise ValueError("need at least one robot")
    if n_objects < 0:
        raise ValueError("object count must be non-negative")
    layout = row_layout(m, spacing)
    models = [placed_model(p, y) for p, y in layout]
    z = TABLE_HEIGHT + HOVER
    if m == 1:
        regions = [((-0.35, -0.2, z), (-0.15, 0.2, z))]
        owners = [[0]]
    else:
        regions = [((i * spacing + 0.15, -0.2, z), ((i + 1) * spacing - 0.15, 0.2, z)) for i in range(m - 1)]
        owners = [[i, i + 1] for i in range(m - 1)]
    per_region = [n_objects // len(regions) + (r < n_objects % len(regions)) for r in range(len(regions))]
    points = {i: [] for i in range(m)}
    turn = 0
    for r, (region, count) in enumerate(zip(regions, per_region)):
        objs = place_objects_rsa(region, count, min_sep, seed + r)
        lo, hi = region
        tray = ((lo[0] + hi[0]) / 2, 0.28, z)
        for k, obj in enumerate(objs):
            robot = owners[r][turn % len(owners[r])]
            turn += 1
            slot = (tray[0] + 0.05 * (k % 3 - 1), tray[1], z)
            points[robot] += [tuple(obj), slot]
    robots = []
    for i, ((pos, yaw), model) in enumerate(zip(layout, models)):
        try:
            robots.append(robot_entry(pos, yaw, points[i]))
        except IkFailure as exc:
            raise ValueError(f"robot {i}: target not reachable ({exc})") from exc
    return scenario_doc(f"pick_place_m{m}_seed{seed}", robots, seed=seed)
