"""Camera model, pose algebra and the grasp representation.

Conventions
-----------
* Camera frame: +x right, +y down, +z along the optical axis.  Depth is the
  z coordinate of a point in this frame, in meters.
* A grasp rotation is ``R = Rz(theta) @ Rx(beta) @ Ry(gamma)`` with every angle
  in [-pi/2, pi/2].  Column 0 of ``R`` is the jaw closing axis, column 2 is the
  approach direction (pointing from the gripper into the scene).
* World frame (used by the simulator): +z up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DomainError, NonCanonicalRotation

HALF_PI = math.pi / 2
_ANGLE_TOL = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def focal(self) -> float:
        """Single focal length used for patch sizing (mean of fx, fy)."""
        return 0.5 * (self.fx + self.fy)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Rigid transform from camera frame to world frame."""

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        p = np.asarray(self.position, dtype=np.float64).reshape(3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ConfigurationError("camera rotation must be a proper rotation matrix")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", p)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "CameraPose":
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        n = np.linalg.norm(forward)
        if n < 1e-12:
            raise ConfigurationError("degenerate camera: eye and target coincide")
        forward /= n
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            # looking along the up hint; pick world +y as the image-up direction
            right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return cls(np.stack([right, down, forward], axis=1), eye)

    @classmethod
    def top_down(cls, height: float, x: float = 0.0, y: float = 0.0) -> "CameraPose":
        """Camera at (x, y, height) looking straight down at the z=0 plane."""
        return cls.look_at((x, y, height), (x, y, 0.0), up=(0.0, 1.0, 0.0))

    def camera_to_world(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.rotation.T + self.position

    def world_to_camera(self, pts: np.ndarray) -> np.ndarray:
        return (np.asarray(pts) - self.position) @ self.rotation

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "position": self.position.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraPose":
        if "eye" in d:
            return cls.look_at(d["eye"], d["target"], d.get("up", (0.0, 0.0, 1.0)))
        return cls(np.array(d["rotation"]), np.array(d["position"]))


@dataclass(frozen=True, eq=False)
class RGBDFrame:
    rgb: np.ndarray
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool) & (depth > 0) & np.isfinite(depth)
        rgb = np.asarray(self.rgb, dtype=np.float64)
        if rgb.shape != depth.shape + (3,) or valid.shape != depth.shape:
            raise ConfigurationError(
                f"frame grids disagree: rgb {rgb.shape}, depth {depth.shape}, valid {valid.shape}")
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", np.where(valid, depth, 0.0))
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_depth(cls, depth: np.ndarray, rgb: np.ndarray | None = None) -> "RGBDFrame":
        depth = np.asarray(depth, dtype=np.float64)
        if rgb is None:
            rgb = np.zeros(depth.shape + (3,))
        return cls(rgb, depth, depth > 0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape


@dataclass(frozen=True, eq=False)
class PointMap:
    xyz: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.valid.shape


@dataclass(frozen=True)
class EulerRotation:
    theta: float
    gamma: float
    beta: float

    def __post_init__(self):
        vals = []
        for name in ("theta", "gamma", "beta"):
            v = float(getattr(self, name))
            if not (-HALF_PI - _ANGLE_TOL <= v <= HALF_PI + _ANGLE_TOL):
                raise DomainError(f"{name}={v} outside [-pi/2, pi/2]")
            vals.append(min(max(v, -HALF_PI), HALF_PI))
        for name, v in zip(("theta", "gamma", "beta"), vals):
            object.__setattr__(self, name, v)

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.gamma, self.beta])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(r: EulerRotation) -> np.ndarray:
    """Rz(theta) @ Rx(beta) @ Ry(gamma)."""
    return rot_z(r.theta) @ rot_x(r.beta) @ rot_y(r.gamma)


def euler_to_matrix_batch(theta, gamma, beta) -> np.ndarray:
    """Vectorized ``euler_to_matrix`` over equally shaped angle arrays -> (..., 3, 3)."""
    theta, gamma, beta = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64)
                                               for a in (theta, gamma, beta)))
    ct, st = np.cos(theta), np.sin(theta)
    cg, sg = np.cos(gamma), np.sin(gamma)
    cb, sb = np.cos(beta), np.sin(beta)
    # Rx(b) @ Ry(g) rows: [cg, 0, sg], [sb*sg, cb, -sb*cg], [-cb*sg, sb, cb*cg]
    m = np.empty(theta.shape + (3, 3))
    r0 = (cg, np.zeros_like(cg), sg)
    r1 = (sb * sg, cb, -sb * cg)
    for j in range(3):
        m[..., 0, j] = ct * r0[j] - st * r1[j]
        m[..., 1, j] = st * r0[j] + ct * r1[j]
    m[..., 2, 0] = -cb * sg
    m[..., 2, 1] = sb
    m[..., 2, 2] = cb * cg
    return m


def matrix_to_euler(m: np.ndarray) -> EulerRotation:
    """Inverse of :func:`euler_to_matrix` on the canonical branch.

    beta is the principal value of asin(m[2, 1]) (computed through atan2 for
    accuracy near +-pi/2).  Raises :class:`NonCanonicalRotation` when the
    decomposition is gimbal-degenerate or gamma/theta fall outside the range.
    """
    m = np.asarray(m, dtype=np.float64)
    cb = math.hypot(m[2, 0], m[2, 2])
    if cb < 1e-12:
        raise NonCanonicalRotation("gimbal-degenerate rotation (|beta| = pi/2)")
    beta = math.atan2(m[2, 1], cb)
    gamma = math.atan2(-m[2, 0], m[2, 2])
    theta = math.atan2(-m[0, 1], m[1, 1])
    for name, v in (("gamma", gamma), ("theta", theta)):
        if abs(v) > HALF_PI + 1e-9:
            raise NonCanonicalRotation(f"{name}={v:.6f} outside [-pi/2, pi/2]")
    clip = lambda v: min(max(v, -HALF_PI), HALF_PI)  # noqa: E731
    return EulerRotation(clip(theta), clip(gamma), clip(beta))


def matrix_to_euler_batch(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized decomposition -> (theta, gamma, beta, ok) where ``ok`` flags canonical rows."""
    m = np.asarray(m, dtype=np.float64)
    cb = np.hypot(m[..., 2, 0], m[..., 2, 2])
    beta = np.arctan2(m[..., 2, 1], cb)
    gamma = np.arctan2(-m[..., 2, 0], m[..., 2, 2])
    theta = np.arctan2(-m[..., 0, 1], m[..., 1, 1])
    lim = HALF_PI + 1e-9
    ok = (cb >= 1e-12) & (np.abs(gamma) <= lim) & (np.abs(theta) <= lim)
    clip = lambda v: np.clip(v, -HALF_PI, HALF_PI)  # noqa: E731
    return clip(theta), clip(gamma), clip(beta), ok


def geodesic_angle(r1: np.ndarray, r2: np.ndarray) -> float:
    """Rotation angle of r1^T r2, in [0, pi]."""
    c = (np.trace(np.asarray(r1).T @ np.asarray(r2)) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


def canonical_frame(axis, approach_hint=(0.0, 0.0, 1.0)) -> np.ndarray | None:
    """Grasp rotation for a closing axis with the approach set to the camera +z.

    The approach is the hint projected orthogonal to the axis; the axis sign is
    chosen so that the Euler decomposition stays in range.  Returns ``None``
    when the axis is (nearly) parallel to the hint.
    """
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    z = np.asarray(approach_hint, dtype=np.float64)
    app = z - (z @ a) * a
    n = np.linalg.norm(app)
    if n < 1e-6:
        return None
    app /= n
    app -= (app @ a) * a  # second Gram-Schmidt pass for near-vertical axes
    app /= np.linalg.norm(app)
    y = np.cross(app, a)
    if y[1] < 0:
        a, y = -a, -y
    return np.stack([a, y, app], axis=1)


def canonical_frames(axes: np.ndarray, approach_hint=(0.0, 0.0, 1.0)):
    """Vectorized :func:`canonical_frame` -> (frames (N,3,3), ok (N,))."""
    a = np.asarray(axes, dtype=np.float64)
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    z = np.asarray(approach_hint, dtype=np.float64)
    app = z - (a @ z)[..., None] * a
    n = np.linalg.norm(app, axis=-1)
    ok = n >= 1e-6
    app = app / np.where(ok, n, 1.0)[..., None]
    app = app - (app * a).sum(-1, keepdims=True) * a
    app = app / np.maximum(np.linalg.norm(app, axis=-1, keepdims=True), 1e-300)
    y = np.cross(app, a)
    flip = np.where(y[..., 1] < 0, -1.0, 1.0)[..., None]
    return np.stack([a * flip, y * flip, app], axis=-1), ok


@dataclass(frozen=True, eq=False)
class Grasp:
    """Parallel-jaw grasp in the camera frame."""

    t: np.ndarray
    rot: EulerRotation
    width: float
    score: float = 1.0
    _matrix: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))
        if self.width < 0:
            raise DomainError(f"negative grasp width {self.width}")
        if not (0.0 <= self.score <= 1.0):
            raise DomainError(f"grasp score {self.score} outside [0, 1]")

    @classmethod
    def from_matrix(cls, t, matrix, width, score=1.0) -> "Grasp":
        m = np.asarray(matrix, dtype=np.float64)
        return cls(t, matrix_to_euler(m), float(width), float(score), _matrix=m)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            object.__setattr__(self, "_matrix", euler_to_matrix(self.rot))
        return self._matrix

    @property
    def axis(self) -> np.ndarray:
        return self.matrix[:, 0]

    @property
    def approach(self) -> np.ndarray:
        return self.matrix[:, 2]

    def replace(self, **kw) -> "Grasp":
        if "rot" in kw:
            kw.setdefault("_matrix", None)
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return {"t": [float(v) for v in self.t], "theta": self.rot.theta, "gamma": self.rot.gamma,
                "beta": self.rot.beta, "width": float(self.width), "score": float(self.score)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grasp":
        return cls(np.array(d["t"], dtype=np.float64),
                   EulerRotation(d["theta"], d["gamma"], d["beta"]),
                   float(d["width"]), float(d.get("score", 1.0)))


def deproject(frame: RGBDFrame, k: CameraIntrinsics) -> PointMap:
    """Back-project every valid depth pixel into the camera frame."""
    h, w = frame.shape
    if (w, h) != (k.width, k.height):
        raise ConfigurationError(f"frame is {w}x{h} but intrinsics expect {k.width}x{k.height}")
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    z = frame.depth
    xyz = np.stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], axis=-1)
    xyz[~frame.valid] = 0.0
    return PointMap(xyz, frame.valid.copy())


def project(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points -> (..., 3) array of (u, v, depth)."""
    p = np.asarray(points, dtype=np.float64)
    z = p[..., 2]
    return np.stack([p[..., 0] * k.fx / z + k.cx, p[..., 1] * k.fy / z + k.cy, z], axis=-1)


def deproject_pixel(u: float, v: float, z: float, k: CameraIntrinsics) -> np.ndarray:
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])
