"""Normalized grasp space: regional normalization of patches and grasp labels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import EulerRotation, Grasp, euler_to_matrix
from .patch import RawPatch

#: Radius of the ball (in normalized units) that a regional grasp must fall in.
BALL_RADIUS = 0.1
# 0.02 / 0.2 evaluates to 0.09999999999999999; a grasp sitting on the boundary
# in exact arithmetic must still be rejected, so the test leaves a tiny margin.
_BOUNDARY_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class NGSContext:
    center: np.ndarray
    w_ref: float

    def __post_init__(self):
        if not self.w_ref > 0:
            raise DomainError(f"w_ref must be positive, got {self.w_ref}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "w_ref", float(self.w_ref))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "w_ref": self.w_ref}

    @classmethod
    def from_dict(cls, d: dict) -> "NGSContext":
        return cls(np.array(d["center"]), d["w_ref"])


@dataclass(frozen=True, eq=False)
class NormalizedPatch:
    rgbxyz: np.ndarray
    valid: np.ndarray
    ctx: NGSContext

    @property
    def xyz(self) -> np.ndarray:
        return self.rgbxyz[..., 3:]

    @property
    def size(self) -> int:
        return self.rgbxyz.shape[0]


@dataclass(frozen=True, eq=False)
class NormalizedGrasp:
    t_star: np.ndarray
    rot: EulerRotation
    w_star: float
    score: float = 1.0
    _matrix: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "t_star", np.asarray(self.t_star, dtype=np.float64).reshape(3))

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            object.__setattr__(self, "_matrix", euler_to_matrix(self.rot))
        return self._matrix

    def to_dict(self, ctx: NGSContext | None = None) -> dict:
        d = {"t": self.t_star.tolist(), "theta": self.rot.theta, "gamma": self.rot.gamma,
             "beta": self.rot.beta, "width": float(self.w_star), "score": float(self.score),
             "normalized": True}
        if ctx is not None:
            d["ctx"] = ctx.to_dict()
        return d


def in_ball(t_star) -> bool:
    return float(np.linalg.norm(t_star)) < BALL_RADIUS - _BOUNDARY_EPS


def normalize_points(xyz: np.ndarray, ctx: NGSContext) -> np.ndarray:
    return (np.asarray(xyz, dtype=np.float64) - ctx.center) / ctx.w_ref


def normalize_patch(raw: RawPatch, ctx: NGSContext) -> NormalizedPatch:
    """Shift XYZ to the patch center and divide by w_ref; invalid pixels keep 0."""
    if not ctx.w_ref > 0:  # pragma: no cover - guarded by NGSContext
        raise DomainError("w_ref must be positive")
    out = raw.rgbxyz.copy()
    v = raw.valid
    out[..., 3:][v] = (raw.rgbxyz[..., 3:][v] - ctx.center) / ctx.w_ref
    return NormalizedPatch(out, raw.valid.copy(), ctx)


def normalize_grasp(g: Grasp, ctx: NGSContext) -> NormalizedGrasp:
    return NormalizedGrasp((g.t - ctx.center) / ctx.w_ref, g.rot, g.width / ctx.w_ref,
                           g.score, g._matrix)


def normalize_grasps(grasps, ctx: NGSContext) -> list[NormalizedGrasp]:
    """Normalize grasps about the context and keep those strictly inside the ball."""
    out = []
    for g in grasps:
        ng = normalize_grasp(g, ctx)
        if in_ball(ng.t_star):
            out.append(ng)
    return out


def denormalize_grasp(g: NormalizedGrasp, ctx: NGSContext) -> Grasp:
    return Grasp(g.t_star * ctx.w_ref + ctx.center, g.rot, g.w_star * ctx.w_ref, g.score,
                 _matrix=g._matrix)


def randomize_scale(w_ref: float, rng: np.random.Generator) -> float:
    """Log-uniform draw from [w_ref / 2, 2 w_ref]."""
    if not w_ref > 0:
        raise DomainError(f"w_ref must be positive, got {w_ref}")
    return float(w_ref * math.exp(rng.uniform(-math.log(2.0), math.log(2.0))))
