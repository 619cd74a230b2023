"""Force-closure scoring of grasps against analytic scenes, top-k AP and coverage."""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError
from .geometry import Grasp
from .scene import Scene

DEFAULT_MUS = (0.2, 0.4, 0.6, 0.8, 1.0, 1.2)


def contact_angles(g: Grasp, scene: Scene, w_gripper: float = 0.1) -> float:
    """Largest angle between a contact normal and the closing axis, or ``inf``
    when the jaws miss, the object is too wide, or a contact is out of reach.

    The grasp center must lie inside a primitive; the contacts are where the
    closing line leaves that primitive on either side of the center.
    """
    pose = scene.pose
    t = pose.camera_to_world(g.t)[None, :]
    a = pose.rotation @ g.axis
    a = (a / np.linalg.norm(a))[None, :]
    prims = scene.current()
    inside = [(float(p.sdf(t)[0]), i) for i, p in enumerate(prims)]
    inside = [x for x in inside if x[0] <= 0.0]
    if not inside:
        return math.inf
    p = prims[min(inside)[1]]
    t_in, t_out, hit = p.interval(t, a)
    if not hit[0]:
        return math.inf
    lo, hi = float(t_in[0]), float(t_out[0])
    half = 0.5 * w_gripper
    if not (-half <= lo <= 0.0 <= hi <= half) or hi - lo > w_gripper:
        return math.inf
    c = np.concatenate([t + lo * a, t + hi * a])
    n = p.normals(c)
    cos_lo = float(-n[0] @ a[0])
    cos_hi = float(n[1] @ a[0])
    return math.acos(max(-1.0, min(1.0, min(cos_lo, cos_hi))))


def force_closure(g: Grasp, scene: Scene, mu: float, w_gripper: float = 0.1) -> bool:
    """Two-contact friction-cone test: both normals within atan(mu) of the axis."""
    if not mu > 0:
        raise DomainError(f"friction coefficient must be positive, got {mu}")
    return contact_angles(g, scene, w_gripper) <= math.atan(mu) + 1e-12


def evaluate_topk(grasps, scene: Scene, mus=DEFAULT_MUS, k: int = 50,
                  w_gripper: float = 0.1) -> dict:
    """Mean prefix precision over the first min(k, n) grasps, per friction coefficient."""
    grasps = list(grasps)[:k]
    mus = [float(m) for m in mus]
    if not grasps:
        return {"ap_per_mu": {_key(m): 0.0 for m in mus}, "overall": 0.0, "n": 0}
    ang = np.array([contact_angles(g, scene, w_gripper) for g in grasps])
    j = np.arange(1, len(grasps) + 1)
    ap = {}
    for m in mus:
        ok = (ang <= math.atan(m) + 1e-12).astype(np.float64)
        ap[_key(m)] = float(np.mean(np.cumsum(ok) / j))
    return {"ap_per_mu": ap, "overall": float(np.mean(list(ap.values()))), "n": len(grasps)}


def _key(mu: float) -> str:
    return f"{mu:g}"


def coverage(pred, gt, dist_thresh: float = 0.02) -> tuple[float, bool]:
    """Fraction of ground-truth grasps with a prediction closer than ``dist_thresh``.

    Returns (fraction, empty_gt); an empty ground truth counts as full coverage.
    """
    gt = list(gt)
    pred = list(pred)
    if not gt:
        return 1.0, True
    if not pred:
        return 0.0, False
    g = np.array([x.t for x in gt])
    p = np.array([x.t for x in pred])
    d = np.linalg.norm(g[:, None, :] - p[None, :, :], axis=-1).min(axis=1)
    return float(np.mean(d < dist_thresh)), False


def report_csv(report: dict) -> str:
    lines = ["mu,ap"]
    for k, v in report["ap_per_mu"].items():
        lines.append(f"{k},{v:.12g}")
    return "\n".join(lines) + "\n"
