"""Closed-loop grasping: track the best predicted grasp, then execute it.

The robot is a kinematic point proxy living in the (static) camera frame.
Each control step renders the scene, samples patch centers inside the
workspace, predicts grasps, steers toward the selected one at bounded speed
and finally snaps to the grasp once within ``min_dis``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .geometry import Grasp, deproject
from .patch import foreground_mask
from .pipeline import DetectConfig, predict_at
from .predictor import PredictorParams
from .scene import (CameraPose, MotionProfile, Primitive, Scene, annotate_grasps, default_camera,
                    render, step)


@dataclass
class RobotProxy:
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    max_speed: float = 0.2
    state: str = "tracking"

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not self.max_speed > 0:
            raise DomainError("max_speed must be positive")


@dataclass
class LoopConfig:
    min_dis: float = 0.01
    control_dt: float = 0.02
    workspace: np.ndarray | None = None   # H x W mask; None = whole image
    patches_per_step: int = 6
    timeout_steps: int = 200
    w_ref: float = 0.2
    patch_size: int = 64
    score_thresh: float = 0.05
    switch_ratio: float = 1.05
    match_trans: float = 0.02
    success_trans: float = 0.01
    success_rot: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not self.min_dis > 0:
            raise DomainError("min_dis must be positive")
        if not self.control_dt > 0:
            raise DomainError("control_dt must be positive")

    def detect_config(self) -> DetectConfig:
        return DetectConfig(w_ref=self.w_ref, patch_size=self.patch_size,
                            score_thresh=self.score_thresh, seed=self.seed)


@dataclass
class StepInfo:
    velocity: np.ndarray
    best: Grasp | None
    patch_center: np.ndarray | None = None


@dataclass
class Outcome:
    success: bool
    steps: int
    trajectory: list
    final_grasp: Grasp | None
    reason: str

    def to_dict(self) -> dict:
        return {"success": self.success, "steps": self.steps, "reason": self.reason,
                "final_grasp": None if self.final_grasp is None else self.final_grasp.to_dict(),
                "trajectory": self.trajectory}


def _pursuit(robot: RobotProxy, target: np.ndarray, dt: float) -> np.ndarray:
    d = target - robot.position
    n = float(np.linalg.norm(d))
    if n == 0.0:
        return np.zeros(3)
    return d / n * min(robot.max_speed, n / dt)


def track_step(scene: Scene, robot: RobotProxy, cfg: LoopConfig, params: PredictorParams,
               previous: Grasp | None = None, step_index: int = 0) -> StepInfo:
    """One sense-predict-steer cycle.  ``previous`` is the target being tracked."""
    frame = render(scene, seed=cfg.seed * 100003 + step_index)
    pm = deproject(frame, scene.camera)
    mask = foreground_mask(pm, scene.table_z, camera_pose=scene.pose)
    if cfg.workspace is not None:
        mask &= cfg.workspace
    cand = np.flatnonzero(mask.ravel())
    if len(cand) == 0:
        return StepInfo(np.zeros(3), None)
    rng = np.random.default_rng([cfg.seed, step_index])
    pick = rng.choice(cand, size=min(cfg.patches_per_step, len(cand)), replace=False)
    w = mask.shape[1]
    pixels = np.stack([pick % w, pick // w], axis=1)
    results = predict_at(frame, pm, scene.camera, pixels, cfg.detect_config(), params,
                         scene.normal_provider())
    pooled = [(g, r.patch.ctx.center) for r in results for g in r.grasps]
    if not pooled:
        return StepInfo(np.zeros(3), None)
    order = np.argsort(-np.array([g.score for g, _ in pooled]), kind="stable")
    best, center = pooled[order[0]]
    if previous is not None:
        # hysteresis: stay on the grasp matching the current target unless clearly beaten
        d = [np.linalg.norm(g.t - previous.t) for g, _ in pooled]
        j = int(np.argmin(d))
        if d[j] < cfg.match_trans and pooled[j][0].score * cfg.switch_ratio >= best.score:
            best, center = pooled[j]
    return StepInfo(_pursuit(robot, best.t, cfg.control_dt), best, center)


def axis_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Angle between two closing axes, ignoring their sign."""
    c = abs(float(a @ b)) / (np.linalg.norm(a) * np.linalg.norm(b))
    return math.acos(min(1.0, c))


def grasp_matches(g: Grasp, gt, trans: float, rot: float, w_gripper: float) -> bool:
    for h in gt:
        if (np.linalg.norm(g.t - h.t) <= trans and axis_angle(g.axis, h.axis) <= rot
                and h.width <= w_gripper):
            return True
    return False


def run(scene: Scene, robot: RobotProxy, cfg: LoopConfig, params: PredictorParams) -> Outcome:
    traj = []
    target = None
    for k in range(cfg.timeout_steps + 1):
        info = track_step(scene, robot, cfg, params, target, k)
        if info.best is not None:
            target = info.best
        rec = {"step": k, "time": round(scene.time, 12), "robot": robot.position.tolist(),
               "target": None if info.best is None else info.best.t.tolist(),
               "score": None if info.best is None else info.best.score}
        traj.append(rec)
        if info.best is not None and np.linalg.norm(info.best.t - robot.position) <= cfg.min_dis:
            robot.state = "grasping"
            robot.position = info.best.t.copy()
            robot.rotation = info.best.matrix.copy()
            gt = annotate_grasps(scene, params.w_gripper)
            ok = grasp_matches(info.best, gt, cfg.success_trans, cfg.success_rot, params.w_gripper)
            robot.state = "done"
            return Outcome(ok, k, traj, info.best, "grasped" if ok else "missed")
        if k == cfg.timeout_steps:
            break
        rec["velocity"] = info.velocity.tolist()
        robot.position = robot.position + info.velocity * cfg.control_dt
        scene = step(scene, cfg.control_dt)
    robot.state = "done"
    return Outcome(False, cfg.timeout_steps, traj, None, "timeout")


# ------------------------------------------------------------------------------
# trial scenes

def loop_scene(profile: str, seed: int, speed: float = 0.0, noise_sigma: float = 0.0,
               camera_height: float = 0.5) -> tuple[Scene, np.ndarray]:
    """A single small sphere under a top-down camera, plus the robot start (camera frame).

    Profiles: ``static``; ``conveyor`` (constant velocity along world +x);
    ``handover`` (sinusoidal sway); ``receding`` (moving straight away from the
    robot start at ``speed``).
    """
    rng = np.random.default_rng(seed)
    cam = default_camera(160, 120, 150.0)
    pose = CameraPose.top_down(camera_height)
    r = float(rng.uniform(0.010, 0.018))
    xy = rng.uniform(-0.04, 0.04, 2)
    start_w = np.array([0.0, 0.0, 0.17])
    motion = MotionProfile()
    if profile == "conveyor":
        xy[0] -= 0.08
        motion = MotionProfile("constant", velocity=(speed, 0.0, 0.0))
    elif profile == "handover":
        motion = MotionProfile("sinusoidal", amplitude=(0.03, 0.02, 0.0), period=2.0,
                               phase=float(rng.uniform(0, 2 * math.pi)))
    elif profile == "receding":
        start_w = np.array([-0.08, 0.0, 0.15])
        xy = np.array([-0.02, 0.0]) + rng.uniform(-0.01, 0.01, 2)
        motion = MotionProfile("constant", velocity=(speed, 0.0, 0.0))
    elif profile != "static":
        raise DomainError(f"unknown motion profile {profile!r}")
    sphere = Primitive("sphere", np.eye(3), (xy[0], xy[1], r), (r,), (0.85, 0.3, 0.2))
    scene = Scene(cam, pose, (sphere,), (motion,), 0.0, noise_sigma)
    return scene, pose.world_to_camera(start_w)
