"""Command-line entry point: ``simulate``, ``evaluate`` and ``compare``."""
from __future__ import annotations

import argparse
import dataclasses
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, load_json
from .mesh import MeshFormatError, read_ply, write_ply

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_COLLISION = 4


def _versions() -> dict:
    import matplotlib
    import numba
    import scipy
    return {"canopynav": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "matplotlib": matplotlib.__version__}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def load_mission_config(path, seed=None, mode=None, pattern=None):
    """Read a JSON config and apply command-line overrides."""
    from .sim import MissionConfig

    cfg = MissionConfig.from_dict(load_json(path))
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    if mode is not None:
        cfg = dataclasses.replace(cfg, estimator=dataclasses.replace(cfg.estimator, loop_closure=(mode == "slam")))
    if pattern is not None:
        cfg = dataclasses.replace(cfg, pattern=dataclasses.replace(cfg.pattern, kind=pattern))
    return cfg


class Manifest:
    """Run manifest written at start and finalized at the end of every run."""

    def __init__(self, out: Path, command: str, cfg):
        self.path = out / "manifest.json"
        self.t0 = time.perf_counter()
        self.data = {"command": command, "status": "running", "seed": cfg.seed,
                     "config": cfg.to_dict(), "versions": _versions(), "outputs": [], "durations_s": {}}
        _write_json(self.path, self.data)

    def finish(self, status: str, outputs: list[Path], **durations) -> None:
        self.data["status"] = status
        self.data["outputs"] = sorted(str(p.name) for p in outputs)
        self.data["durations_s"] = {"total": time.perf_counter() - self.t0, **durations}
        _write_json(self.path, self.data)


def _status_code(status: str) -> int:
    return {"completed": EXIT_OK, "collision": EXIT_COLLISION}.get(status, EXIT_ABORT)


def write_mission_outputs(log, out: Path) -> list[Path]:
    from .evaluation import trajectory_stats
    from .plotting import overhead_plot, velocity_histogram

    log.write(out)
    outputs = [out / n for n in ("ticks.csv", "planning_events.csv", "deformation_events.csv",
                                 "deformation_displacements.csv", "keyframes.csv", "loop_closures.csv",
                                 "goals.csv", "world.json", "summary.json")]
    write_ply(log.collection.extract_mesh(), out / "mesh.ply")
    outputs.append(out / "mesh.ply")
    if log.gt_collection is not None:
        write_ply(log.gt_collection.extract_mesh(), out / "mesh_gt_pose.ply")
        outputs.append(out / "mesh_gt_pose.ply")
    if len(log.ticks):
        outputs.append(overhead_plot(log.ticks, log.world, log.goals, out / "trajectory_overhead.png",
                                     title=f"{log.status}, {log.distance_travelled_m:.0f} m"))
        v_max = log.config.get("navigation", {}).get("v_max")
        outputs.append(velocity_histogram(trajectory_speeds(log.ticks), out / "velocity_histogram.png", v_max))
        _write_json(out / "trajectory_stats.json", trajectory_stats(log))
        outputs.append(out / "trajectory_stats.json")
    return outputs


def trajectory_speeds(ticks: np.ndarray) -> np.ndarray:
    return np.linalg.norm(ticks[:, 5:8], axis=1)


def cmd_simulate(args) -> int:
    from .sim import run_mission

    cfg = load_mission_config(args.config, args.seed, args.mode, args.pattern)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    manifest = Manifest(out, "simulate", cfg)
    t = time.perf_counter()
    log = run_mission(cfg)
    sim_s = time.perf_counter() - t
    outputs = [out / "config.json"] + write_mission_outputs(log, out)
    manifest.finish(log.status, outputs, simulate=sim_s)
    print(f"{log.status}: {log.distance_travelled_m:.1f} m in {log.summary()['duration_s']:.1f} s simulated, "
          f"outputs in {out}")
    return _status_code(log.status)


def cmd_evaluate(args) -> int:
    from .evaluation import EvalParams, evaluate_reconstruction, evaluation_gt_mesh, trajectory_stats
    from .sim import read_ticks
    from .world import ForestWorld

    d = Path(args.log)
    need = ["config.json", "world.json", "ticks.csv", "goals.csv", "mesh.ply"]
    missing = [n for n in need if not (d / n).exists()]
    if missing:
        print(f"error: {d} is missing {', '.join(missing)}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        mesh = read_ply(d / "mesh.ply")
        gt_pose_mesh = read_ply(d / "mesh_gt_pose.ply") if (d / "mesh_gt_pose.ply").exists() else None
    except MeshFormatError as e:
        print(f"error: corrupted mesh: {e}", file=sys.stderr)
        return EXIT_CONFIG
    cfg = json.loads((d / "config.json").read_text())
    world = ForestWorld.load(d / "world.json")
    goals = np.loadtxt(d / "goals.csv", delimiter=",", skiprows=1, ndmin=2)
    ticks = read_ticks(d / "ticks.csv")
    closures = []
    lc = d / "loop_closures.csv"
    if lc.exists() and lc.read_text().strip():
        closures = list(np.atleast_1d(np.genfromtxt(lc, delimiter=",", names=True)["t"]))
    params = EvalParams(tau_m=args.tau)
    gt = evaluation_gt_mesh(world, goals, cfg["mapping"]["resolution"], params)
    if mesh.n_vertices == 0:
        print("error: reconstructed mesh is empty", file=sys.stderr)
        return EXIT_CONFIG
    m = evaluate_reconstruction(mesh, world, gt, params.tau_m)
    stats = trajectory_stats(ticks, closures)
    metrics = {
        "accuracy_rmse_m": m.accuracy_rmse_m,
        "completeness_pct": m.completeness_pct,
        "n_reconstructed_vertices": m.n_reconstructed_vertices,
        "n_gt_vertices": m.n_gt_vertices,
        "trajectory": {k: v for k, v in stats.items() if not k.endswith("drift_m") and "drift" not in k},
        "drift": {k: v for k, v in stats.items() if "drift" in k},
    }
    if gt_pose_mesh is not None and gt_pose_mesh.n_vertices:
        g = evaluate_reconstruction(gt_pose_mesh, world, gt, params.tau_m)
        metrics["gt_pose"] = {"accuracy_rmse_m": g.accuracy_rmse_m, "completeness_pct": g.completeness_pct}
    out = Path(args.out) if args.out else d / "metrics.json"
    _write_json(out, metrics)
    print(f"accuracy {m.accuracy_rmse_m:.3f} m, completeness {m.completeness_pct:.1f} %, written to {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .evaluation import compare_slam_vio
    from .plotting import comparison_bars

    cfg = load_mission_config(args.config, args.seed, None, args.pattern)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    manifest = Manifest(out, "compare", cfg)
    t = time.perf_counter()
    report = compare_slam_vio(cfg)
    rows = report.rows
    _write_json(out / "report.json", {"rows": rows, "divergence_tick": report.divergence_tick})
    cols = ["mode", "accuracy_rmse_m", "completeness_pct", "n_reconstructed_vertices", "n_gt_vertices",
            "status", "n_loop_closures", "final_drift_m"]
    lines = [",".join(cols)] + [",".join(str(r[c]) for c in cols) for r in rows]
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    table = ["| mode | accuracy [m] | completeness [%] |", "|---|---|---|"]
    table += [f"| {r['mode']} | {r['accuracy_rmse_m']:.3f} | {r['completeness_pct']:.2f} |" for r in rows]
    (out / "report.md").write_text("\n".join(table) + "\n")
    outputs = [out / n for n in ("config.json", "report.json", "report.csv", "report.md")]
    outputs.append(comparison_bars(rows, out / "comparison.png"))
    statuses = {r["status"] for r in rows}
    status = "completed" if statuses == {"completed"} else ("collision" if "collision" in statuses else "aborted")
    manifest.finish(status, outputs, compare=time.perf_counter() - t)
    print("\n".join(table))
    return _status_code(status)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="canopynav", description="Under-canopy navigation simulation and evaluation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="fly one mission and write logs, meshes and figures")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--mode", choices=["slam", "vio"])
    s.add_argument("--pattern", choices=["lawnmower", "modified"])
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("evaluate", help="compute metrics for a simulate output directory")
    e.add_argument("--log", required=True, help="directory written by simulate")
    e.add_argument("--out", help="metrics JSON path (default: <log>/metrics.json)")
    e.add_argument("--tau", type=float, default=0.5, help="completeness match distance [m]")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("compare", help="SLAM versus VIO reconstruction table")
    c.add_argument("--config", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int)
    c.add_argument("--pattern", choices=["lawnmower", "modified"])
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
