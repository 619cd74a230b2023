"""Analytic table-top scenes: ray-cast rendering, antipodal annotation, motion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, NonCanonicalRotation
from .geometry import (CameraIntrinsics, CameraPose, Grasp, RGBDFrame, canonical_frame,
                       matrix_to_euler, rot_x, rot_y, rot_z)

KINDS = ("box", "cylinder", "sphere")
TABLE_RGB = (0.55, 0.5, 0.45)


@dataclass(frozen=True, eq=False)
class Primitive:
    """Solid in world coordinates.

    dims: box (lx, ly, lz) full extents; cylinder (radius, height) about local z;
    sphere (radius,).
    """

    kind: str
    rotation: np.ndarray
    center: np.ndarray
    dims: tuple
    color: tuple = (0.8, 0.2, 0.2)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown primitive kind {self.kind!r}")
        need = {"box": 3, "cylinder": 2, "sphere": 1}[self.kind]
        dims = tuple(float(d) for d in np.atleast_1d(self.dims))
        if len(dims) != need or min(dims) <= 0:
            raise DomainError(f"{self.kind} needs {need} positive dims, got {self.dims}")
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ConfigurationError("primitive rotation must be a proper rotation")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "color", tuple(float(c) for c in self.color))

    def moved(self, offset) -> "Primitive":
        return replace(self, center=self.center + np.asarray(offset, dtype=np.float64))

    def lowest_z(self) -> float:
        R, c = self.rotation, self.center
        if self.kind == "sphere":
            return c[2] - self.dims[0]
        if self.kind == "box":
            return c[2] - 0.5 * float(np.abs(R[2]) @ np.array(self.dims))
        r, h = self.dims
        az = abs(R[2, 2])
        return c[2] - 0.5 * h * az - r * math.sqrt(max(0.0, 1.0 - az * az))

    # --- ray intervals ---------------------------------------------------------
    def interval(self, origins: np.ndarray, dirs: np.ndarray):
        """Entry/exit parameters of lines ``o + t d`` through the solid.

        Returns (t_in, t_out, hit); ``t`` is in units of ``d`` (not normalized).
        """
        o = (np.atleast_2d(origins) - self.center) @ self.rotation
        d = np.atleast_2d(dirs) @ self.rotation
        if self.kind == "sphere":
            return _sphere_interval(o, d, self.dims[0])
        if self.kind == "box":
            return _slab_interval(o, d, 0.5 * np.array(self.dims))
        r, h = self.dims
        t0, t1, hit = _disc_interval(o[:, :2], d[:, :2], r)
        z0, z1, zhit = _slab_interval(o[:, 2:], d[:, 2:], np.array([0.5 * h]))
        lo, hi = np.maximum(t0, z0), np.minimum(t1, z1)
        return lo, hi, hit & zhit & (lo <= hi)

    # --- implicit surface ------------------------------------------------------
    def sdf(self, pts: np.ndarray) -> np.ndarray:
        p = (np.atleast_2d(pts) - self.center) @ self.rotation
        if self.kind == "sphere":
            return np.linalg.norm(p, axis=1) - self.dims[0]
        if self.kind == "box":
            q = np.abs(p) - 0.5 * np.array(self.dims)
        else:
            r, h = self.dims
            q = np.stack([np.hypot(p[:, 0], p[:, 1]) - r, np.abs(p[:, 2]) - 0.5 * h], axis=1)
        out = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return out + np.minimum(q.max(axis=1), 0.0)

    def normals(self, pts: np.ndarray) -> np.ndarray:
        """Outward unit normals (gradient of the distance field), world frame."""
        p = (np.atleast_2d(pts) - self.center) @ self.rotation
        if self.kind == "sphere":
            n = p
        elif self.kind == "box":
            q = np.abs(p) - 0.5 * np.array(self.dims)
            n = _box_like_grad(q) * np.where(p < 0, -1.0, 1.0)
        else:
            r, h = self.dims
            rho = np.hypot(p[:, 0], p[:, 1])
            q = np.stack([rho - r, np.abs(p[:, 2]) - 0.5 * h], axis=1)
            g = _box_like_grad(q)
            radial = p[:, :2] / np.where(rho > 0, rho, 1.0)[:, None]
            n = np.concatenate([g[:, :1] * radial, g[:, 1:] * np.where(p[:, 2:] < 0, -1.0, 1.0)], axis=1)
        n = n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)
        return n @ self.rotation.T

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rotation": self.rotation.tolist(), "center": self.center.tolist(),
                "dims": list(self.dims), "color": list(self.color)}

    @classmethod
    def from_dict(cls, d: dict) -> "Primitive":
        if "rotation" in d:
            R = np.array(d["rotation"], dtype=np.float64)
        else:
            rx, ry, rz = d.get("euler_xyz", (0.0, 0.0, 0.0))
            R = rot_z(rz) @ rot_y(ry) @ rot_x(rx)
        return cls(d["kind"], R, np.array(d["center"]), tuple(d["dims"]),
                   tuple(d.get("color", (0.8, 0.2, 0.2))))


def _box_like_grad(q: np.ndarray) -> np.ndarray:
    """Gradient of the box distance in the positive octant (|p| coordinates)."""
    outside = np.maximum(q, 0.0)
    out_any = (q > 0).any(axis=1)
    inside = np.zeros_like(q)
    inside[np.arange(len(q)), q.argmax(axis=1)] = 1.0
    return np.where(out_any[:, None], outside, inside)


def _sphere_interval(o, d, r):
    a = np.einsum("ij,ij->i", d, d)
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r * r
    disc = b * b - a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    # numerically stable roots
    q = -(b + np.where(b >= 0, sq, -sq))
    qs = np.where(q == 0, 1e-300, q)
    t1 = q / a
    t2 = np.where(q == 0, 0.0, c / qs)
    return np.minimum(t1, t2), np.maximum(t1, t2), hit


def _disc_interval(o, d, r):
    """Infinite cylinder about the z axis, given xy components."""
    a = np.einsum("ij,ij->i", d, d)
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r * r
    par = a < 1e-300
    disc = b * b - a * c
    hit = np.where(par, c <= 0, disc >= 0)
    sq = np.sqrt(np.where(disc >= 0, disc, 0.0))
    q = -(b + np.where(b >= 0, sq, -sq))
    qs = np.where(q == 0, 1e-300, q)
    a_s = np.where(par, 1.0, a)
    t1 = q / a_s
    t2 = np.where(q == 0, 0.0, c / qs)
    lo = np.where(par, -np.inf, np.minimum(t1, t2))
    hi = np.where(par, np.inf, np.maximum(t1, t2))
    return lo, hi, hit


def _slab_interval(o, d, half):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (-half - o) * inv
        tb = (half - o) * inv
    par = d == 0
    inside = np.abs(o) <= half
    lo_k = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(ta, tb))
    hi_k = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(ta, tb))
    lo, hi = lo_k.max(axis=1), hi_k.min(axis=1)
    return lo, hi, lo <= hi


# ------------------------------------------------------------------------------
# motion

@dataclass(frozen=True, eq=False)
class MotionProfile:
    """Translation-only motion: static, constant velocity, or sinusoid."""

    kind: str = "static"
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    amplitude: np.ndarray = field(default_factory=lambda: np.zeros(3))
    period: float = 1.0
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("static", "constant", "sinusoidal"):
            raise ConfigurationError(f"unknown motion kind {self.kind!r}")
        if self.kind == "sinusoidal" and not self.period > 0:
            raise DomainError("sinusoidal motion needs a positive period")
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=np.float64).reshape(3))
        object.__setattr__(self, "amplitude", np.asarray(self.amplitude, dtype=np.float64).reshape(3))

    def offset(self, t: float) -> np.ndarray:
        """Displacement at time ``t`` relative to time 0."""
        if self.kind == "constant":
            return self.velocity * t
        if self.kind == "sinusoidal":
            w = 2.0 * math.pi / self.period
            return self.amplitude * (math.sin(w * t + self.phase) - math.sin(self.phase))
        return np.zeros(3)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "velocity": self.velocity.tolist(),
                "amplitude": self.amplitude.tolist(), "period": self.period, "phase": self.phase}

    @classmethod
    def from_dict(cls, d: dict | None) -> "MotionProfile":
        if not d:
            return cls()
        return cls(d.get("kind", "static"), np.array(d.get("velocity", (0, 0, 0)), dtype=float),
                   np.array(d.get("amplitude", (0, 0, 0)), dtype=float),
                   float(d.get("period", 1.0)), float(d.get("phase", 0.0)))


@dataclass(frozen=True, eq=False)
class Scene:
    camera: CameraIntrinsics
    pose: CameraPose
    primitives: tuple = ()
    motions: tuple = ()
    table_z: float = 0.0
    noise_sigma: float = 0.0
    time: float = 0.0

    def __post_init__(self):
        prims = tuple(self.primitives)
        motions = tuple(self.motions) or tuple(MotionProfile() for _ in prims)
        if len(motions) != len(prims):
            raise ConfigurationError("one motion profile per primitive is required")
        for p in prims:
            if p.lowest_z() < self.table_z - 1e-9:
                raise ConfigurationError(f"{p.kind} at {p.center.tolist()} sinks below the table")
        if self.noise_sigma < 0:
            raise DomainError("noise_sigma must be non-negative")
        object.__setattr__(self, "primitives", prims)
        object.__setattr__(self, "motions", motions)

    def current(self) -> list[Primitive]:
        """Primitives posed at the scene's current time."""
        return [p.moved(m.offset(self.time)) for p, m in zip(self.primitives, self.motions)]

    def scaled(self, a: float) -> "Scene":
        """Uniformly scale the world about the origin (camera included)."""
        prims = [replace(p, center=p.center * a, dims=tuple(d * a for d in p.dims))
                 for p in self.primitives]
        motions = [replace(m, velocity=m.velocity * a, amplitude=m.amplitude * a) for m in self.motions]
        return replace(self, pose=CameraPose(self.pose.rotation, self.pose.position * a),
                       primitives=tuple(prims), motions=tuple(motions), table_z=self.table_z * a,
                       noise_sigma=self.noise_sigma * a)

    def normal_provider(self):
        """Callable mapping camera-frame points to outward normals (camera frame)
        of the nearest surface, for the antipodal predictor."""
        prims = self.current()
        pose, table_z = self.pose, self.table_z

        def provider(pts_cam):
            pw = pose.camera_to_world(np.atleast_2d(pts_cam))
            dist = [np.abs(pw[:, 2] - table_z)] + [np.abs(p.sdf(pw)) for p in prims]
            which = np.argmin(np.stack(dist), axis=0)
            n = np.tile([0.0, 0.0, 1.0], (len(pw), 1))
            for i, p in enumerate(prims):
                sel = which == i + 1
                if sel.any():
                    n[sel] = p.normals(pw[sel])
            return n @ pose.rotation

        return provider

    def to_dict(self) -> dict:
        return {"camera": {"intrinsics": self.camera.to_dict(), "pose": self.pose.to_dict()},
                "table_z": self.table_z, "noise_sigma": self.noise_sigma, "time": self.time,
                "primitives": [dict(p.to_dict(), motion=m.to_dict())
                               for p, m in zip(self.primitives, self.motions)]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        try:
            cam = d["camera"]
            prims = [Primitive.from_dict(p) for p in d.get("primitives", [])]
            motions = [MotionProfile.from_dict(p.get("motion")) for p in d.get("primitives", [])]
            return cls(CameraIntrinsics.from_dict(cam["intrinsics"]), CameraPose.from_dict(cam["pose"]),
                       tuple(prims), tuple(motions), float(d.get("table_z", 0.0)),
                       float(d.get("noise_sigma", 0.0)), float(d.get("time", 0.0)))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"malformed scene description: {exc}") from exc


def load_scene(path) -> Scene:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"scene file not found: {path}")
    return Scene.from_dict(json.loads(p.read_text(encoding="utf-8")))


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=1, sort_keys=True), encoding="utf-8")


# ------------------------------------------------------------------------------
# rendering

def pixel_rays(camera: CameraIntrinsics, pose: CameraPose):
    """World-frame origins and directions whose parameter equals camera depth."""
    v, u = np.mgrid[0:camera.height, 0:camera.width].astype(np.float64)
    d_cam = np.stack([(u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy,
                      np.ones_like(u)], axis=-1).reshape(-1, 3)
    d = d_cam @ pose.rotation.T
    o = np.broadcast_to(pose.position, d.shape)
    return o, d


def cast(scene: Scene, origins: np.ndarray, dirs: np.ndarray):
    """Nearest positive hit per ray -> (t, id) with id -1 = table, -2 = miss."""
    n = len(dirs)
    best = np.full(n, np.inf)
    ids = np.full(n, -2, dtype=np.int64)
    dz = dirs[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        tp = (scene.table_z - origins[:, 2]) / dz
    ok = (dz != 0) & (tp > 0)
    best = np.where(ok, tp, best)
    ids[ok] = -1
    for i, p in enumerate(scene.current()):
        t_in, t_out, hit = p.interval(origins, dirs)
        t = np.where(t_in > 0, t_in, t_out)
        ok = hit & (t > 0) & (t < best)
        best = np.where(ok, t, best)
        ids[ok] = i
    return best, ids


def render(scene: Scene, seed: int = 0, camera: CameraIntrinsics | None = None,
           pose: CameraPose | None = None) -> RGBDFrame:
    """Ray-cast depth and flat colours; additive Gaussian depth noise if configured."""
    camera = camera or scene.camera
    pose = pose or scene.pose
    o, d = pixel_rays(camera, pose)
    if not np.all(np.isfinite(d)) or np.allclose(d, 0):
        raise ConfigurationError("degenerate camera rays")
    t, ids = cast(scene, o, d)
    h, w = camera.height, camera.width
    depth = np.where(ids > -2, t, 0.0)
    if scene.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        noise = rng.normal(0.0, scene.noise_sigma, depth.shape)
        depth = np.where(ids > -2, np.maximum(depth + noise, 0.0), 0.0)
    colors = np.array([TABLE_RGB] + [p.color for p in scene.primitives] + [(0.0, 0.0, 0.0)])
    rgb = colors[np.where(ids == -2, len(colors) - 1, ids + 1)]
    return RGBDFrame(rgb.reshape(h, w, 3), depth.reshape(h, w), (ids > -2).reshape(h, w))


# ------------------------------------------------------------------------------
# ground-truth grasps

def fibonacci_hemisphere(n: int) -> np.ndarray:
    """``n`` nearly uniform unit vectors with z >= 0."""
    i = np.arange(n) + 0.5
    z = 1.0 - i / n
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _primitive_grasps(p: Primitive, w_gripper: float, n_sphere: int, n_cyl_axes: int,
                      cyl_spacing: float):
    """World-frame (center, axis, width) triples."""
    R, c = p.rotation, p.center
    if p.kind == "sphere":
        if 2 * p.dims[0] > w_gripper:
            return []
        return [(c, a, 2 * p.dims[0]) for a in fibonacci_hemisphere(n_sphere)]
    if p.kind == "box":
        return [(c, R[:, i], p.dims[i]) for i in range(3) if p.dims[i] <= w_gripper]
    r, h = p.dims
    if 2 * r > w_gripper:
        return []
    out = []
    n_centers = max(1, math.ceil(h / cyl_spacing))
    zs = (np.arange(n_centers) + 0.5) / n_centers * h - 0.5 * h
    for z in zs:
        for k in range(n_cyl_axes):
            phi = math.pi * k / n_cyl_axes
            out.append((c + z * R[:, 2], R @ np.array([math.cos(phi), math.sin(phi), 0.0]), 2 * r))
    return out


def annotate_grasps(scene: Scene, w_gripper: float = 0.1, n_sphere: int = 1000,
                    n_cyl_axes: int = 36, cyl_spacing: float = 0.005) -> list[Grasp]:
    """Analytic antipodal grasps of every primitive, in the camera frame.

    Spheres get ``n_sphere`` closing axes through the center; lying-down
    cylinders get ``n_cyl_axes`` cross-axes at centers spaced at most
    ``cyl_spacing`` apart; boxes get one grasp per face pair that fits.
    """
    out = []
    R = scene.pose.rotation
    for p in scene.current():
        for center, axis, width in _primitive_grasps(p, w_gripper, n_sphere, n_cyl_axes,
                                                     cyl_spacing):
            frame = canonical_frame(axis @ R)
            if frame is None:
                continue
            try:
                rot = matrix_to_euler(frame)
            except NonCanonicalRotation:
                continue
            out.append(Grasp(scene.pose.world_to_camera(center), rot, float(width), 1.0, _matrix=frame))
    return out


def step(scene: Scene, dt: float) -> Scene:
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    return replace(scene, time=scene.time + dt)


# ------------------------------------------------------------------------------
# scene generators

def default_camera(width: int = 320, height: int = 240, focal: float = 300.0) -> CameraIntrinsics:
    return CameraIntrinsics(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


def random_scene(seed: int, n_objects: int = 3, kinds=KINDS, camera_height: float = 0.6,
                 camera: CameraIntrinsics | None = None, w_gripper: float = 0.1,
                 spread: float = 0.12, noise_sigma: float = 0.0) -> Scene:
    """Well-separated primitives resting on the table under a top-down camera."""
    rng = np.random.default_rng(seed)
    camera = camera or default_camera()
    prims = []
    centers = []
    palette = [(0.85, 0.25, 0.2), (0.2, 0.6, 0.85), (0.3, 0.75, 0.3), (0.9, 0.75, 0.2)]
    tries = 0
    while len(prims) < n_objects and tries < 200:
        tries += 1
        xy = rng.uniform(-spread, spread, 2)
        if any(np.linalg.norm(xy - q) < 1.5 * w_gripper for q in centers):
            continue
        kind = kinds[rng.integers(len(kinds))]
        yaw = rng.uniform(-math.pi, math.pi)
        col = palette[len(prims) % len(palette)]
        if kind == "sphere":
            r = rng.uniform(0.2, 0.45) * w_gripper
            prim = Primitive("sphere", np.eye(3), (xy[0], xy[1], r), (r,), col)
        elif kind == "cylinder":
            r = rng.uniform(0.15, 0.4) * w_gripper
            h = rng.uniform(0.6, 1.2) * w_gripper
            R = rot_z(yaw) @ rot_y(math.pi / 2)  # lying on its side
            prim = Primitive("cylinder", R, (xy[0], xy[1], r), (r, h), col)
        else:
            dims = (rng.uniform(0.3, 0.8) * w_gripper, rng.uniform(0.3, 1.2) * w_gripper,
                    rng.uniform(0.3, 0.8) * w_gripper)
            prim = Primitive("box", rot_z(yaw), (xy[0], xy[1], dims[2] / 2), dims, col)
        prims.append(prim)
        centers.append(xy)
    return Scene(camera, CameraPose.top_down(camera_height), tuple(prims), (), 0.0, noise_sigma)
