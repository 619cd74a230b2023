"""Executable invariance batteries for the regional normalization.

Each check builds a random raw patch with nearby grasps, applies a rigid or
scaling transform to the camera-frame data, and measures how far the
normalized results drift from the expected ones.  Shared by the CLI
``invariance-suite`` command and the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import EulerRotation, Grasp, euler_to_matrix, matrix_to_euler, rot_z
from .ngs import NGSContext, normalize_grasps, normalize_patch
from .patch import PatchSpec, RawPatch

SCALES = (0.25, 0.5, 2.0, 4.0)
HALF_PI = math.pi / 2


@dataclass
class Case:
    raw: RawPatch
    ctx: NGSContext
    grasps: list


def random_case(rng: np.random.Generator, size: int = 16, w_ref: float = 0.2,
                n_grasps: int = 12) -> Case:
    """Random camera-frame patch (smooth surface + holes) with grasps around its center."""
    center = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.2, 0.2), rng.uniform(0.3, 1.2)])
    g = (np.arange(size) - size // 2) / size * w_ref
    xx, yy = np.meshgrid(g, g)
    zz = rng.normal(0.0, 0.02, (size, size)) + 0.3 * (xx * rng.normal() + yy * rng.normal())
    xyz = center + np.stack([xx, yy, zz - zz[size // 2, size // 2]], axis=-1)
    valid = rng.random((size, size)) > 0.15
    valid[size // 2, size // 2] = True
    xyz[~valid] = 0.0
    rgb = rng.random((size, size, 3)) * valid[..., None]
    spec = PatchSpec((size // 2, size // 2), center, float(size), size)
    raw = RawPatch(np.concatenate([rgb, xyz], axis=-1), valid, spec)
    grasps = []
    for _ in range(n_grasps):
        r = rng.uniform(0.0, 0.15) * w_ref  # some fall outside the 0.1 ball on purpose
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        # keep theta away from the range ends so in-range rotations exist
        rot = EulerRotation(rng.uniform(-1.2, 1.2), rng.uniform(-1.4, 1.4), rng.uniform(-1.4, 1.4))
        grasps.append(Grasp(center + r * d, rot, rng.uniform(0.0, 0.1), rng.uniform(0.0, 1.0)))
    return Case(raw, NGSContext(center, w_ref), grasps)


def _transform_raw(raw: RawPatch, fn) -> RawPatch:
    out = raw.rgbxyz.copy()
    out[..., 3:][raw.valid] = fn(raw.rgbxyz[..., 3:][raw.valid])
    return RawPatch(out, raw.valid.copy(), raw.spec)


def _grasp_error(a, b) -> float:
    if len(a) != len(b):
        return math.inf
    err = 0.0
    for x, y in zip(a, b):
        err = max(err, float(np.max(np.abs(x.t_star - y.t_star))), abs(x.w_star - y.w_star),
                  float(np.max(np.abs(x.matrix - y.matrix))))
    return err


def translation_error(case: Case, dt: np.ndarray) -> float:
    """Normalizing translated data about the translated center changes nothing."""
    p0 = normalize_patch(case.raw, case.ctx)
    ctx = NGSContext(case.ctx.center + dt, case.ctx.w_ref)
    p1 = normalize_patch(_transform_raw(case.raw, lambda x: x + dt), ctx)
    g0 = normalize_grasps(case.grasps, case.ctx)
    g1 = normalize_grasps([g.replace(t=g.t + dt) for g in case.grasps], ctx)
    return max(float(np.max(np.abs(p0.rgbxyz - p1.rgbxyz))), _grasp_error(g0, g1))


def scale_error(case: Case, a: float) -> float:
    """Scaling coordinates, widths and w_ref by ``a`` changes nothing."""
    p0 = normalize_patch(case.raw, case.ctx)
    ctx = NGSContext(case.ctx.center * a, case.ctx.w_ref * a)
    p1 = normalize_patch(_transform_raw(case.raw, lambda x: x * a), ctx)
    g0 = normalize_grasps(case.grasps, case.ctx)
    g1 = normalize_grasps([g.replace(t=g.t * a, width=g.width * a) for g in case.grasps], ctx)
    return max(float(np.max(np.abs(p0.rgbxyz - p1.rgbxyz))), _grasp_error(g0, g1))


def rotation_error(case: Case, dtheta: float) -> tuple[float, float]:
    """Rotate about the patch center by Rz(dtheta).

    Returns (matrix error, euler error): the first compares the normalized
    rotated data against Rz applied to the original normalized data; the second
    checks that in-range grasps keep gamma, beta and shift theta by dtheta.
    """
    c = case.ctx.center
    Rz = rot_z(dtheta)
    p0 = normalize_patch(case.raw, case.ctx)
    p1 = normalize_patch(_transform_raw(case.raw, lambda x: (x - c) @ Rz.T + c), case.ctx)
    expect = p0.rgbxyz.copy()
    expect[..., 3:] = p0.rgbxyz[..., 3:] @ Rz.T
    err = float(np.max(np.abs(expect - p1.rgbxyz)))
    eul = 0.0
    rotated = []
    for g in case.grasps:
        th = g.rot.theta + dtheta
        if abs(th) <= HALF_PI:
            r1 = EulerRotation(th, g.rot.gamma, g.rot.beta)
            m1 = euler_to_matrix(r1)
            back = matrix_to_euler(Rz @ g.matrix)
            eul = max(eul, abs(back.theta - th), abs(back.gamma - g.rot.gamma),
                      abs(back.beta - g.rot.beta))
        else:
            m1 = Rz @ g.matrix
            r1 = g.rot  # out of range: only the matrix form is compared
        rotated.append(Grasp(c + Rz @ (g.t - c), r1, g.width, g.score, _matrix=m1))
    g0 = normalize_grasps(case.grasps, case.ctx)
    g1 = normalize_grasps(rotated, case.ctx)
    if len(g0) != len(g1):
        return math.inf, eul
    for a, b in zip(g0, g1):
        err = max(err, float(np.max(np.abs(Rz @ a.t_star - b.t_star))),
                  float(np.max(np.abs(Rz @ a.matrix - b.matrix))), abs(a.w_star - b.w_star))
    return err, eul


def run_suite(seed: int = 0, n_cases: int = 500, tol: float = 1e-9) -> dict:
    """All three batteries over ``n_cases`` random patches; returns a JSON-able report."""
    rng = np.random.default_rng(seed)
    worst = {"translation": 0.0, "scale": 0.0, "rotation_matrix": 0.0, "rotation_euler": 0.0}
    for _ in range(n_cases):
        case = random_case(rng)
        dt = rng.uniform(-1.0, 1.0, 3)
        worst["translation"] = max(worst["translation"], translation_error(case, dt))
        for a in SCALES:
            worst["scale"] = max(worst["scale"], scale_error(case, a))
        m, e = rotation_error(case, rng.uniform(-HALF_PI, HALF_PI))
        worst["rotation_matrix"] = max(worst["rotation_matrix"], m)
        worst["rotation_euler"] = max(worst["rotation_euler"], e)
    checks = {k: v <= tol for k, v in worst.items()}
    return {"seed": seed, "cases": n_cases, "tolerance": tol, "max_error": worst,
            "passed": checks, "ok": all(checks.values())}
