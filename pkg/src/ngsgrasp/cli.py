"""Command-line entry point: ``ngsgrasp <command> [options]``."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .closed_loop import LoopConfig, RobotProxy, loop_scene, run
from .codec import build_anchors
from .dataset import generate_patches, write_dataset
from .errors import ConfigurationError, DomainError, NonCanonicalRotation
from .evaluator import DEFAULT_MUS, coverage, evaluate_topk, report_csv
from .geometry import CameraIntrinsics, CameraPose, RGBDFrame, deproject
from .invariance import run_suite
from .patch import foreground_mask
from .pipeline import DetectConfig, detect
from .predictor import GatedNet, PredictorParams
from .scene import annotate_grasps, load_scene, render, step


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out")
    p.add_argument("--w-ref", type=float, default=0.2)
    p.add_argument("--gripper-width", type=float, default=0.1)
    p.add_argument("--patch-size", type=int, default=64)
    p.add_argument("--anchors", type=int, default=7)
    p.add_argument("--predictor", choices=("antipodal", "gated"), default="antipodal")
    p.add_argument("--friction", type=float, default=0.8)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ngsgrasp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect grasps in a scene file or a PFM depth map")
    _common(p)
    p.add_argument("--scene")
    p.add_argument("--depth", help="PFM depth map (meters)")
    p.add_argument("--rgb", help="PPM colour image matching --depth")
    p.add_argument("--intrinsics", help="JSON with fx, fy, cx, cy, width, height")
    p.add_argument("--camera-pose", help="JSON camera pose (rotation/position or eye/target)")
    p.add_argument("--num-patches", type=int, default=48)
    p.add_argument("--table-height", type=float, default=0.0)
    p.add_argument("--score-thresh", type=float, default=0.05)
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--weights", help="gated network weight file")
    p.add_argument("--estimated-normals", action="store_true",
                   help="fit normals from the depth data even when a scene is given")

    p = sub.add_parser("simulate", help="render frames of a scene")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--dt", type=float, default=0.1)

    p = sub.add_parser("eval", help="force-closure report for a grasp file")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--grasps", required=True)
    p.add_argument("--mus", default=",".join(f"{m:g}" for m in DEFAULT_MUS))
    p.add_argument("--top-k", type=int, default=50)
    p.add_argument("--dist-thresh", type=float, default=0.02)

    p = sub.add_parser("closed-loop", help="simulate tracking-then-grasping")
    _common(p)
    p.add_argument("--scene")
    p.add_argument("--profile", choices=("static", "conveyor", "handover", "receding"),
                   default="static")
    p.add_argument("--speed", type=float, default=0.05)
    p.add_argument("--max-speed", type=float, default=0.2)
    p.add_argument("--min-dis", type=float, default=0.01)
    p.add_argument("--control-dt", type=float, default=0.02)
    p.add_argument("--patches-per-step", type=int, default=6)
    p.add_argument("--timeout-steps", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.0)

    p = sub.add_parser("dataset-gen", help="write normalized training patches")
    _common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--depth-jitter", type=float, default=0.01)
    p.add_argument("--sigma", type=float, default=4.0)
    p.add_argument("--thresh", type=float, default=0.1)
    p.add_argument("--no-scale-randomization", action="store_true")

    p = sub.add_parser("anchors", help="print an anchor set as JSON")
    _common(p)
    p.add_argument("--mode", choices=("uniform", "shifted"), default="uniform")
    p.add_argument("--gt", help="JSON list of angles, or of [theta, gamma, beta] rows")

    p = sub.add_parser("invariance-suite", help="run the normalization invariance batteries")
    _common(p)
    p.add_argument("--cases", type=int, default=500)
    return ap


def read_config(path) -> dict:
    out = {}
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip().lstrip("-").replace("-", "_")] = v.strip()
    return out


def parse_args(argv) -> argparse.Namespace:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sub = ap._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
        known = {a.dest: a for a in sub._actions}  # noqa: SLF001
        unknown = sorted(set(cfg) - set(known))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        defaults = {}
        for k, v in cfg.items():
            act = known[k]
            if act.type is not None:
                defaults[k] = act.type(v)
            elif act.const is True:  # store_true flags
                defaults[k] = v.lower() in ("1", "true", "yes", "on")
            else:
                defaults[k] = v
        sub.set_defaults(**defaults)
        args = ap.parse_args(argv)
    return args


def _params(args, net=None) -> PredictorParams:
    return PredictorParams(friction_mu=args.friction, seed=args.seed, w_gripper=args.gripper_width,
                           anchors=build_anchors(args.anchors), net=net)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(io.dumps(obj) + "\n", encoding="utf-8")


def cmd_detect(args) -> int:
    out = Path(args.out)
    normals = None
    pose = None
    if args.scene:
        scene = load_scene(args.scene)
        frame = render(scene, seed=args.seed)
        camera, pose = scene.camera, scene.pose
        if not args.estimated_normals:
            normals = scene.normal_provider()
        table = scene.table_z
    else:
        if not (args.depth and args.intrinsics):
            raise ConfigurationError("detect needs --scene or --depth with --intrinsics")
        camera = CameraIntrinsics.from_dict(json.loads(Path(args.intrinsics).read_text()))
        depth = io.read_pfm(args.depth)
        rgb = io.read_ppm(args.rgb) if args.rgb else None
        frame = RGBDFrame.from_depth(depth, rgb)
        if args.camera_pose:
            pose = CameraPose.from_dict(json.loads(Path(args.camera_pose).read_text()))
        table = args.table_height
    net = None
    if args.predictor == "gated":
        anchors = build_anchors(args.anchors)
        net = GatedNet.load(args.weights) if args.weights else GatedNet.random(seed=args.seed,
                                                                                anchors=anchors)
    params = _params(args, net)
    cfg = DetectConfig(w_ref=args.w_ref, patch_size=args.patch_size, num_patches=args.num_patches,
                       table_height=table, seed=args.seed, predictor=args.predictor,
                       score_thresh=args.score_thresh, top_k=args.top_k)
    res = detect(frame, camera, params, cfg, pose=pose, normals=normals, jobs=max(1, args.jobs))
    out.mkdir(parents=True, exist_ok=True)
    io.write_grasps(out / "grasps.jsonl", res.grasps)
    hm_dir = out / "heatmaps"
    hm_dir.mkdir(exist_ok=True)
    for i, r in enumerate(res.patches):
        io.write_pfm_stack(hm_dir / f"patch_{i:03d}.pfm", r.heatmap.to_planes())
    _write_json(out / "detect.json", {"n_grasps": len(res.grasps), "n_patches": len(res.patches),
                                      "centers": np.asarray(res.centers).tolist(),
                                      "shortfall": res.shortfall,
                                      "anchors": params.anchors.to_dict()})
    print(f"{len(res.grasps)} grasps from {len(res.patches)} patches -> {out / 'grasps.jsonl'}")
    return 0


def cmd_simulate(args) -> int:
    scene = load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in range(args.steps):
        frame = render(scene, seed=args.seed + k)
        io.write_pfm(out / f"depth_{k:04d}.pfm", frame.depth)
        io.write_ppm(out / f"rgb_{k:04d}.ppm", frame.rgb)
        io.write_grasps(out / f"gt_{k:04d}.jsonl", annotate_grasps(scene, args.gripper_width))
        scene = step(scene, args.dt)
    _write_json(out / "camera.json", {"intrinsics": scene.camera.to_dict(),
                                      "pose": scene.pose.to_dict()})
    print(f"rendered {args.steps} frame(s) -> {out}")
    return 0


def cmd_eval(args) -> int:
    scene = load_scene(args.scene)
    grasps = io.read_grasps(args.grasps)
    mus = [float(m) for m in args.mus.split(",") if m.strip()]
    rep = evaluate_topk(grasps, scene, mus, args.top_k, args.gripper_width)
    cov, empty = coverage(grasps, annotate_grasps(scene, args.gripper_width), args.dist_thresh)
    rep["coverage"] = cov
    rep["coverage_empty_gt"] = empty
    out = Path(args.out)
    _write_json(out / "report.json", rep)
    (out / "report.csv").write_text(report_csv(rep), encoding="utf-8")
    print(f"overall AP {rep['overall']:.4f}, coverage {cov:.4f}")
    return 0


def cmd_closed_loop(args) -> int:
    if args.scene:
        scene = load_scene(args.scene)
        start = scene.pose.world_to_camera(np.array([0.0, 0.0, scene.table_z + 0.17]))
    else:
        scene, start = loop_scene(args.profile, args.seed, args.speed, args.noise)
    cfg = LoopConfig(min_dis=args.min_dis, control_dt=args.control_dt,
                     patches_per_step=args.patches_per_step, timeout_steps=args.timeout_steps,
                     w_ref=args.w_ref, patch_size=args.patch_size, seed=args.seed)
    robot = RobotProxy(start, max_speed=args.max_speed)
    outcome = run(scene, robot, cfg, _params(args))
    out = Path(args.out)
    d = outcome.to_dict()
    _write_json(out / "trajectory.json", d.pop("trajectory"))
    _write_json(out / "outcome.json", d)
    print(f"{outcome.reason} after {outcome.steps} steps (success={outcome.success})")
    return 0


def cmd_dataset(args) -> int:
    scene = load_scene(args.scene)
    frame = render(scene, seed=args.seed)
    pm = deproject(frame, scene.camera)
    mask = foreground_mask(pm, scene.table_z, camera_pose=scene.pose)
    gt = annotate_grasps(scene, args.gripper_width)
    ds = generate_patches(frame, pm, mask, args.n, args.w_ref, gt, args.depth_jitter, args.seed,
                          scene.camera, build_anchors(args.anchors), args.patch_size,
                          not args.no_scale_randomization, args.sigma, args.thresh,
                          args.gripper_width)
    if ds.empty_mask:
        print("warning: empty foreground mask, no records written", file=sys.stderr)
    files = write_dataset(ds, args.out, Path(args.scene).stem)
    print(f"{len(ds.records)} records ({len(files)} files) -> {args.out}")
    return 0


def cmd_anchors(args) -> int:
    gt = json.loads(Path(args.gt).read_text()) if args.gt else None
    print(io.dumps(build_anchors(args.anchors, args.mode, gt).to_dict()))
    return 0


def cmd_invariance(args) -> int:
    rep = run_suite(args.seed, args.cases)
    for k, ok in rep["passed"].items():
        print(f"{'PASS' if ok else 'FAIL'} {k}: max error {rep['max_error'][k]:.3e} "
              f"(tol {rep['tolerance']:g}, {rep['cases']} cases)")
    _write_json(Path(args.out) / "invariance.json", rep)
    return 0 if rep["ok"] else 1


COMMANDS = {"detect": cmd_detect, "simulate": cmd_simulate, "eval": cmd_eval,
            "closed-loop": cmd_closed_loop, "dataset-gen": cmd_dataset, "anchors": cmd_anchors,
            "invariance-suite": cmd_invariance}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except (ConfigurationError, DomainError, NonCanonicalRotation, OSError, ValueError) as exc:
        print(f"ngsgrasp: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
