"""Regenerate the shipped scenario files under src/dmpc_manip/data/scenarios."""

import math
from pathlib import Path

import numpy as np
import yaml

from dmpc_manip.scenarios import HOVER, SPACING, TABLE_HEIGHT, ring_layout, robot_entry, scenario_doc

OUT = Path(__file__).resolve().parents[1] / "src" / "dmpc_manip" / "data" / "scenarios"
Z = TABLE_HEIGHT + HOVER


def crossing():
    # each arm reaches over to the other's half, then back to its own side
    d = SPACING
    robots = [
        robot_entry((0.0, 0.0, TABLE_HEIGHT), 0.0, [(d - 0.2, 0.15, Z), (-0.25, 0.1, Z)]),
        robot_entry((d, 0.0, TABLE_HEIGHT), math.pi, [(0.2, -0.15, Z), (d + 0.25, -0.1, Z)]),
    ]
    return scenario_doc("crossing", robots, steps=250)


def shared_tray():
    # both arms drop into the same tray slot between them, then return
    d = SPACING
    slot = (d / 2, 0.25, Z)
    robots = [
        robot_entry((0.0, 0.0, TABLE_HEIGHT), 0.0, [slot, (-0.25, 0.1, Z)]),
        robot_entry((d, 0.0, TABLE_HEIGHT), math.pi, [slot, (d + 0.25, -0.1, Z)]),
    ]
    # the predicted velocity change of a blocked arm stays near 1e-2 rad/s here
    return scenario_doc("shared_tray", robots, steps=400, deadlock={"eps_v": 0.03})


def benchmark():
    # interacting but deadlock-free motions for the DMPC / CMPC comparison
    d = SPACING
    robots = [
        robot_entry((0.0, 0.0, TABLE_HEIGHT), 0.0, [(d - 0.25, 0.12, Z)], dwell=0),
        robot_entry((d, 0.0, TABLE_HEIGHT), math.pi, [(0.25, -0.12, Z)], dwell=0),
    ]
    return scenario_doc("benchmark_2r", robots, steps=60, stop_when_done=False)


def ring(m):
    layout = ring_layout(m)
    robots = []
    for i, (pos, yaw) in enumerate(layout):
        # a point ahead and to the left of the center, then one in front of the base
        ahead = np.array([math.cos(yaw), math.sin(yaw)])
        left = np.array([-ahead[1], ahead[0]])
        p = np.array(pos[:2])
        first = p + 0.4 * ahead + 0.1 * left
        second = p + 0.25 * ahead - 0.15 * left
        robots.append(robot_entry(pos, yaw, [(*first, Z), (*second, Z)], dwell=2))
    return scenario_doc(f"ring_m{m}", robots, steps=300, collision_margin=0.1, intersample=2, deadlock={"eps_v": 0.03})


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    docs = {"crossing": crossing(), "shared_tray": shared_tray(), "benchmark_2r": benchmark()}
    for m in (2, 3, 4):
        docs[f"ring_m{m}"] = ring(m)
    for name, doc in docs.items():
        with open(OUT / f"{name}.yaml", "w") as fh:
            fh.write(f"# generated by scripts/make_scenarios.py\n")
            yaml.safe_dump(doc, fh, sort_keys=False, default_flow_style=None)
        print("wrote", OUT / f"{name}.yaml")


if __name__ == "__main__":
    main()
