"""Command line: run, benchmark, gen and check subcommands.

Flags given on the command line override the corresponding scenario-file
fields (horizon, transport, seed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .sim import (
    ScenarioError,
    audit_clearance,
    load_scenario,
    metrics,
    rms_deviation,
    run,
)

log = logging.getLogger("dmpc_manip")


def _apply_overrides(scenario, args):
    changes = {}
    if getattr(args, "horizon", None) is not None:
        changes["Np"] = args.horizon
    if getattr(args, "transport", None) is not None:
        changes["transport"] = args.transport
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return scenario.replace(**changes) if changes else scenario


def _summary(lg, audit) -> dict:
    m = metrics(lg)
    return {
        "mode": lg.mode,
        "Np": lg.Np,
        "steps": m.execution_steps,
        "execution_time_s": m.execution_time,
        "completed": lg.completed,
        "all_completed": lg.all_completed,
        "safety_stop": lg.safety_stop,
        "solve_ms_mean": {str(k): v for k, v in m.solve_mean_ms.items()},
        "solve_ms_std": {str(k): v for k, v in m.solve_std_ms.items()},
        "deadlock_events": [{"step": s, "members": mem, "active": a} for s, mem, a in lg.deadlock_events],
        "reactivations": [{"step": s, "members": mem} for s, mem in lg.reactivations],
        "audit_min_els_margin": audit.min_margin,
        "audit_min_link_dist": audit.min_link_dist,
        "staleness": {str(k): v for k, v in lg.staleness.items()},
    }


def cmd_run(args) -> int:
    scenario = _apply_overrides(load_scenario(args.scenario), args)
    lg = run(scenario, args.mode)
    audit = audit_clearance(lg, scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lg.to_csv(out / "log.csv")
    summary = _summary(lg, audit)
    safe = audit.min_margin >= -1e-6 and audit.min_link_dist > 0 and not lg.safety_stop
    summary["safe"] = safe
    with open(out / "summary.yaml", "w") as fh:
        yaml.safe_dump(summary, fh, sort_keys=False)
    print(f"{scenario.name}: completed={lg.all_completed} safe={safe} steps={lg.steps_executed} "
          f"mean solve {metrics(lg).mean_solve_ms:.1f} ms")
    return 0 if (lg.all_completed and safe) else 1


def cmd_benchmark(args) -> int:
    base = _apply_overrides(load_scenario(args.scenario), args)
    horizons = [int(h) for h in args.horizons.split(",")]
    modes = ["dmpc", "cmpc"] if args.mode == "both" else [args.mode]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    logs = {}
    for Np in horizons:
        for mode in modes:
            lg = run(base.replace(Np=Np), mode)
            logs[(mode, Np)] = lg
            lg.to_csv(out / f"{mode}_Np{Np}.csv")
            ms = np.array([r.solve_ms for r in lg.rows], float)
            ms = ms[np.isfinite(ms)]
            rows.append({"mode": mode, "Np": Np, "mean_ms": float(ms.mean()), "std_ms": float(ms.std()),
                         "steps": lg.steps_executed, "completed": lg.all_completed})
    for r in rows:
        if r["mode"] == "dmpc" and ("cmpc", r["Np"]) in logs:
            r["rms_vs_cmpc"] = rms_deviation(logs[("dmpc", r["Np"])], logs[("cmpc", r["Np"])])
    lines = ["| mode | Np | mean ± std solve [ms] | steps | completed | RMS vs CMPC [rad] |",
             "|---|---|---|---|---|---|"]
    for r in rows:
        rms = f"{r['rms_vs_cmpc']:.4g}" if "rms_vs_cmpc" in r else "-"
        lines.append(f"| {r['mode']} | {r['Np']} | {r['mean_ms']:.1f} ± {r['std_ms']:.1f} | {r['steps']} "
                     f"| {r['completed']} | {rms} |")
    table = "\n".join(lines)
    (out / "benchmark.md").write_text(table + "\n")
    (out / "benchmark.json").write_text(json.dumps(rows, indent=2))
    print(table)
    return 0


def cmd_gen(args) -> int:
    from .scenarios import generate_pick_place

    try:
        doc = generate_pick_place(args.robots, args.objects, args.seed)
    except ValueError as exc:
        print(f"gen: {exc}", file=sys.stderr)
        return 2
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)
    print(f"wrote {args.out}")
    return 0


def cmd_check(args) -> int:
    try:
        load_scenario(args.scenario).validate()
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"invalid: {exc}")
        return 1
    print("ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmpc-manip", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--horizon", type=int)
    r.add_argument("--transport", choices=["inproc", "udp"])
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["dmpc", "cmpc"], default="dmpc")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("benchmark", help="compare modes and horizons")
    b.add_argument("--scenario", required=True)
    b.add_argument("--mode", choices=["dmpc", "cmpc", "both"], default="both")
    b.add_argument("--horizons", default="10,15,20")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_benchmark)

    g = sub.add_parser("gen", help="generate a random pick-and-place scenario")
    g.add_argument("--robots", type=int, required=True)
    g.add_argument("--objects", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("check", help="validate a scenario file")
    c.add_argument("--scenario", required=True)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("DMPC_LOG", "WARNING").upper())
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
