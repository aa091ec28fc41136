"""Command-line surface: simulate -> run-vins -> run-fgo -> evaluate -> sweep.

Exit codes: 0 success, 1 validation error (bad inputs/config), 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import io as gio
from .fgo import FgoResult
from .metrics import min_corner_sweep, robustness_ablation, trajectory_error
from .pipeline import (
    Scenario,
    make_scenario,
    run_filter,
    run_smoother,
    truth_trajectory,
)
from .sim import gates_along_trajectory
from .state import NominalState, NonMonotonicTimestamp, Trajectory


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gatenav",
        description="Gate-relative visual-inertial estimation toolkit")
    ap.add_argument("--config", help="run configuration JSON")
    ap.add_argument("--seed", type=int, default=None,
                    help="override the config seed")
    ap.add_argument("--output-dir", default=".", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate",
                         help="generate ground truth, IMU, and detection logs")
    sim.add_argument("--map", help="gate map JSON (generated when omitted)")

    vins = sub.add_parser("run-vins", help="run the real-time filter on logs")
    vins.add_argument("--imu", required=True)
    vins.add_argument("--detections", required=True)
    vins.add_argument("--map", required=True)
    vins.add_argument("--init-from", help="trajectory CSV whose first row "
                                          "initializes the filter")

    fgo = sub.add_parser("run-fgo", help="run the offline smoother")
    fgo.add_argument("--imu", required=True)
    fgo.add_argument("--detections", required=True)
    fgo.add_argument("--map", required=True)
    fgo.add_argument("--vins", required=True, help="filter trajectory CSV")
    fgo.add_argument("--vins-bias", help="filter bias JSONL (optional)")

    ev = sub.add_parser("evaluate", help="compare two trajectories")
    ev.add_argument("--estimate", required=True)
    ev.add_argument("--reference", required=True)

    sw = sub.add_parser("sweep", help="minimum-corner / robustness ablations")
    sw.add_argument("--kind", choices=("min-corners", "robustness"),
                    required=True)
    sw.add_argument("--seeds", type=int, default=5)
    return ap


def _load_config(args) -> gio.RunConfig:
    if args.config:
        cfg = gio.RunConfig.load(args.config)
    else:
        cfg = gio.RunConfig({})
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _out(args, name: str) -> str:
    os.makedirs(args.output_dir, exist_ok=True)
    return os.path.join(args.output_dir, name)


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise gio.ValidationError(f"missing input file: {path}")
    return path


def _cmd_simulate(args, cfg: gio.RunConfig) -> int:
    if cfg.trajectory is None:
        raise gio.ValidationError(
            "config needs a simulate.trajectory section for 'simulate'")
    if args.map:
        gate_map = gio.load_gate_map(_require(args.map))
    else:
        gate_map = gates_along_trajectory(
            cfg.trajectory, int(cfg.gates.get("count", 8)),
            width=float(cfg.gates.get("width", 1.5)),
            height=float(cfg.gates.get("height", 1.5)))
        gio.save_gate_map(gate_map, _out(args, "map.json"))
    scn = make_scenario(cfg.trajectory, cfg.corruption, cfg.seed,
                        gate_map=gate_map, cam=cfg.camera, ext=cfg.extrinsics,
                        noise=cfg.noise, eskf_cfg=cfg.eskf, vision_cfg=cfg.vision)
    gio.save_imu_log(scn.imu, _out(args, "imu.jsonl"))
    gio.save_detection_log(scn.detections, _out(args, "detections.jsonl"))
    gio.save_trajectory(truth_trajectory(scn.truth), _out(args, "truth.csv"))
    print(f"simulate: {len(scn.imu)} imu samples, "
          f"{len(scn.detections)} detections, {len(gate_map)} gates")
    return 0


def _initial_state(args, imu) -> NominalState:
    t0 = imu[0].t - (imu[1].t - imu[0].t if len(imu) > 1 else 0.002)
    if args.init_from:
        ref = gio.load_trajectory(_require(args.init_from))
        st = NominalState(p=ref.p[0], v=ref.v[0], q=ref.q[0],
                          b_a=np.zeros(3), b_w=np.zeros(3), t=float(ref.t[0]))
        return st
    return NominalState.at_pose(np.zeros(3), np.array([1.0, 0, 0, 0]), t=t0)


def _cmd_run_vins(args, cfg: gio.RunConfig) -> int:
    imu, dets = gio.load_sensor_logs(_require(args.imu),
                                     _require(args.detections))
    gate_map = gio.load_gate_map(_require(args.map))
    init = _initial_state(args, imu)
    run = run_filter(imu, dets, gate_map, cfg.camera, cfg.extrinsics,
                     cfg.eskf, cfg.vision, init)
    gio.save_trajectory(run.trajectory, _out(args, "vins.csv"))
    gio.save_bias_log(run.bias_t, run.bias_a, run.bias_w,
                      _out(args, "vins_bias.jsonl"))
    gio.save_reports(run.reports, _out(args, "vins_report.jsonl"))
    n_upd = sum(r.applied for r in run.reports)
    print(f"run-vins: {len(run.trajectory)} states, {n_upd} corner updates")
    return 0


def _cmd_run_fgo(args, cfg: gio.RunConfig) -> int:
    from .fgo import build_graph, optimize
    from .frontend import build_measurements
    from .pipeline import group_detections

    imu, dets = gio.load_sensor_logs(_require(args.imu),
                                     _require(args.detections))
    gate_map = gio.load_gate_map(_require(args.map))
    vins = gio.load_trajectory(_require(args.vins))
    biases = None
    if args.vins_bias:
        biases = gio.load_bias_log(_require(args.vins_bias))

    frames = []
    for t, frame_dets in sorted(group_detections(dets).items()):
        interp = vins.interpolate(t)
        if interp is None:
            continue
        p, v, q = interp
        st = NominalState(p=p, v=v, q=q, b_a=np.zeros(3), b_w=np.zeros(3), t=t)
        meas = build_measurements(frame_dets, gate_map, st, cfg.extrinsics,
                                  cfg.camera, cfg.vision)
        if meas:
            frames.append((t, meas))

    graph = build_graph(imu, frames, vins, cfg.extrinsics, cfg.fgo, cfg.noise,
                        vins_biases=biases)
    result = optimize(graph)
    gio.save_trajectory(result.trajectory, _out(args, "fgo.csv"))
    rot_err = math.degrees(np.linalg.norm(
        np.asarray(result.ext_rotation[1:]) * 2.0))
    with open(_out(args, "fgo_extrinsics.json"), "w") as f:
        json.dump({"q_bc": [float(x) for x in result.ext_rotation],
                   "converged": result.converged,
                   "final_cost": result.final_cost}, f, indent=1)
    with open(_out(args, "fgo_iterations.jsonl"), "w") as f:
        for entry in result.iterations:
            f.write(json.dumps(entry) + "\n")
    print(f"run-fgo: {len(result.trajectory)} keyframes, "
          f"cost {result.final_cost:.6g}, converged={result.converged}")
    return 0


def _cmd_evaluate(args, cfg: gio.RunConfig) -> int:
    est = gio.load_trajectory(_require(args.estimate))
    ref = gio.load_trajectory(_require(args.reference))
    err = trajectory_error(est, ref)
    gio.save_metrics({"e_t": err.e_t, "e_r_deg": err.e_r, "e_v": err.e_v,
                      "samples": int(len(err.t))},
                     _out(args, "metrics.json"))
    gio.save_error_series(err, _out(args, "error_series.csv"))
    print(f"evaluate: e_t={err.e_t:.4f} m  e_r={err.e_r:.3f} deg  "
          f"e_v={err.e_v:.4f} m/s")
    return 0


def _cmd_sweep(args, cfg: gio.RunConfig) -> int:
    if cfg.trajectory is None:
        raise gio.ValidationError(
            "config needs a simulate.trajectory section for 'sweep'")
    results = {}
    for s in range(args.seeds):
        seed = cfg.seed + s
        scn = make_scenario(cfg.trajectory, cfg.corruption, seed,
                            cam=cfg.camera, ext=cfg.extrinsics,
                            noise=cfg.noise, eskf_cfg=cfg.eskf,
                            vision_cfg=cfg.vision,
                            n_gates=int(cfg.gates.get("count", 8)))
        if args.kind == "min-corners":
            results[seed] = {str(k): v for k, v in
                             min_corner_sweep(scn).items()}
        else:
            results[seed] = robustness_ablation(scn)
    gio.save_metrics(results, _out(args, f"sweep_{args.kind}.json"))
    print(json.dumps(results, indent=1, sort_keys=True))
    return 0


def cli_main(argv=None) -> int:
    ap = _build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = _load_config(args)
        handler = {
            "simulate": _cmd_simulate,
            "run-vins": _cmd_run_vins,
            "run-fgo": _cmd_run_fgo,
            "evaluate": _cmd_evaluate,
            "sweep": _cmd_sweep,
        }[args.command]
        return handler(args, cfg)
    except (gio.ParseError, gio.ValidationError, NonMonotonicTimestamp,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
