"""Rotation anchors, heatmap encoding/decoding of normalized grasps, and grasp NMS."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import EulerRotation, Grasp, euler_to_matrix_batch
from .ngs import BALL_RADIUS, NGSContext, NormalizedGrasp, denormalize_grasp

HALF_PI = math.pi / 2


@dataclass(frozen=True, eq=False)
class AnchorSet:
    gammas: np.ndarray
    betas: np.ndarray
    thetas: np.ndarray

    def __post_init__(self):
        for name in ("gammas", "betas", "thetas"):
            a = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if a.size == 0:
                raise ConfigurationError(f"{name} anchor list is empty")
            if np.any(np.diff(a) <= 0):
                raise ConfigurationError(f"{name} anchors must be strictly increasing")
            if np.any(np.abs(a) > HALF_PI + 1e-12):
                raise ConfigurationError(f"{name} anchors must lie in [-pi/2, pi/2]")
            object.__setattr__(self, name, np.clip(a, -HALF_PI, HALF_PI))

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.gammas), len(self.betas), len(self.thetas)

    def to_dict(self) -> dict:
        return {"gammas": self.gammas.tolist(), "betas": self.betas.tolist(),
                "thetas": self.thetas.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnchorSet":
        return cls(np.array(d["gammas"]), np.array(d["betas"]), np.array(d["thetas"]))


def uniform_anchors(count: int) -> np.ndarray:
    """Centers of ``count`` equal cells tiling [-pi/2, pi/2]."""
    return -HALF_PI + (np.arange(count) + 0.5) * (math.pi / count)


def nearest_anchor(values, anchors: np.ndarray) -> np.ndarray:
    """Index of the closest anchor; a value exactly midway goes to the lower index."""
    anchors = np.asarray(anchors)
    mids = 0.5 * (anchors[:-1] + anchors[1:])
    return np.searchsorted(mids, np.asarray(values, dtype=np.float64), side="left")


def lloyd_1d(values, init: np.ndarray, tol: float = 1e-4, max_iter: int = 100) -> np.ndarray:
    """1-D k-means from ``init``; anchors with no assigned values stay where they are."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    a = np.array(init, dtype=np.float64)
    for _ in range(max_iter):
        idx = nearest_anchor(values, a)
        counts = np.bincount(idx, minlength=len(a))
        sums = np.bincount(idx, weights=values, minlength=len(a))
        new = np.where(counts > 0, sums / np.maximum(counts, 1), a)
        shift = np.max(np.abs(new - a))
        a = new
        if shift < tol:
            break
    return a


def build_anchors(count_per_axis: int = 7, mode: str = "uniform", gt_angles=None) -> AnchorSet:
    """Anchor sets for (gamma, beta, theta).

    ``gt_angles`` for the shifted mode is either a flat list (used for every axis)
    or an (N, 3) array of (theta, gamma, beta) rows.
    """
    if count_per_axis < 2:
        raise DomainError(f"need at least 2 anchors per axis, got {count_per_axis}")
    base = uniform_anchors(count_per_axis)
    if mode == "uniform":
        return AnchorSet(base, base.copy(), base.copy())
    if mode != "shifted":
        raise ConfigurationError(f"unknown anchor mode {mode!r}")
    if gt_angles is None:
        raise ConfigurationError("shifted anchors need ground-truth angles")
    gt = np.asarray(gt_angles, dtype=np.float64)
    if gt.size == 0:
        raise ConfigurationError("shifted anchors need at least one ground-truth angle")
    if gt.ndim == 2 and gt.shape[1] == 3:
        th, ga, be = gt[:, 0], gt[:, 1], gt[:, 2]
    else:
        th = ga = be = gt.reshape(-1)
    return AnchorSet(lloyd_1d(ga, base), lloyd_1d(be, base), lloyd_1d(th, base))


@dataclass(eq=False)
class RotationHeatmap:
    graspable: np.ndarray       # (Ag, Ab)
    theta_scores: np.ndarray    # (Ag, Ab, At)
    theta_residual: np.ndarray  # (Ag, Ab)
    width: np.ndarray           # (Ag, Ab), normalized units
    offset: np.ndarray          # (Ag, Ab, 3), normalized units

    @classmethod
    def zeros(cls, anchors: AnchorSet) -> "RotationHeatmap":
        ag, ab, at = anchors.shape
        return cls(np.zeros((ag, ab)), np.zeros((ag, ab, at)), np.zeros((ag, ab)),
                   np.zeros((ag, ab)), np.zeros((ag, ab, 3)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.theta_scores.shape

    def copy(self) -> "RotationHeatmap":
        return RotationHeatmap(*(a.copy() for a in self.channels()))

    def channels(self):
        return (self.graspable, self.theta_scores, self.theta_residual, self.width, self.offset)

    def to_planes(self) -> np.ndarray:
        """Stack every channel as (Ag, Ab) planes: graspable, At theta scores,
        residual, width, 3 offsets."""
        return np.concatenate([self.graspable[None], np.moveaxis(self.theta_scores, -1, 0),
                               self.theta_residual[None], self.width[None],
                               np.moveaxis(self.offset, -1, 0)], axis=0)

    @classmethod
    def from_planes(cls, planes: np.ndarray) -> "RotationHeatmap":
        planes = np.asarray(planes, dtype=np.float64)
        at = planes.shape[0] - 6
        if at < 1:
            raise ConfigurationError(f"heatmap stack needs at least 7 planes, got {planes.shape[0]}")
        return cls(planes[0], np.moveaxis(planes[1:1 + at], 0, -1), planes[1 + at],
                   planes[2 + at], np.moveaxis(planes[3 + at:], 0, -1))


def encode(grasps, anchors: AnchorSet, soft: bool = False) -> RotationHeatmap:
    """Scatter normalized grasps into their nearest (gamma, beta) cells.

    On a cell collision the higher-scoring grasp wins (first one on ties).
    With ``soft`` the graspable and theta channels carry the grasp score instead of 1.
    """
    hm = RotationHeatmap.zeros(anchors)
    best = np.full(hm.graspable.shape, -np.inf)
    for g in grasps:
        i = int(nearest_anchor(g.rot.gamma, anchors.gammas))
        j = int(nearest_anchor(g.rot.beta, anchors.betas))
        if g.score <= best[i, j]:
            continue
        best[i, j] = g.score
        k = int(nearest_anchor(g.rot.theta, anchors.thetas))
        val = g.score if soft else 1.0
        hm.graspable[i, j] = val
        hm.theta_scores[i, j] = 0.0
        hm.theta_scores[i, j, k] = val
        hm.theta_residual[i, j] = g.rot.theta - anchors.thetas[k]
        hm.width[i, j] = g.w_star
        hm.offset[i, j] = g.t_star
    return hm


def decode_normalized(hm: RotationHeatmap, anchors: AnchorSet, score_thresh: float = 0.5,
                      top_k: int = 50, w_star_max: float | None = None) -> list[NormalizedGrasp]:
    """Cells with graspable > thresh as normalized grasps, best first."""
    if not 0.0 <= score_thresh <= 1.0:
        raise DomainError(f"score threshold {score_thresh} outside [0, 1]")
    if top_k < 1:
        raise DomainError("top_k must be >= 1")
    cells = np.argwhere(hm.graspable > score_thresh)
    if len(cells) == 0:
        return []
    scores = hm.graspable[cells[:, 0], cells[:, 1]]
    order = np.argsort(-scores, kind="stable")[:top_k]
    cells = cells[order]
    gi, bi = cells[:, 0], cells[:, 1]
    ki = np.argmax(hm.theta_scores[gi, bi], axis=-1)
    theta = np.clip(anchors.thetas[ki] + hm.theta_residual[gi, bi], -HALF_PI, HALF_PI)
    gamma = anchors.gammas[gi]
    beta = anchors.betas[bi]
    mats = euler_to_matrix_batch(theta, gamma, beta)
    off = hm.offset[gi, bi]
    n = np.linalg.norm(off, axis=1)
    lim = BALL_RADIUS - 1e-9
    off = np.where((n >= lim)[:, None], off * (lim / np.maximum(n, 1e-300))[:, None], off)
    width = np.maximum(hm.width[gi, bi], 0.0)
    if w_star_max is not None:
        width = np.minimum(width, w_star_max)
    out = []
    for r in range(len(cells)):
        out.append(NormalizedGrasp(off[r], EulerRotation(theta[r], gamma[r], beta[r]),
                                   float(width[r]), float(np.clip(scores[order[r]], 0.0, 1.0)),
                                   mats[r]))
    return out


def decode(hm: RotationHeatmap, anchors: AnchorSet, ctx: NGSContext, score_thresh: float = 0.5,
           top_k: int = 50, w_gripper: float = 0.1) -> list[Grasp]:
    """Decode a heatmap and map the grasps back to the camera frame."""
    gs = decode_normalized(hm, anchors, score_thresh, top_k, w_star_max=w_gripper / ctx.w_ref)
    return [denormalize_grasp(g, ctx) for g in gs]


def _rotation_angles(m: np.ndarray, others: np.ndarray) -> np.ndarray:
    c = (np.einsum("ij,nij->n", m, others) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def grasp_nms(grasps, trans_thresh: float = 0.02, rot_thresh: float = math.pi / 6) -> list:
    """Greedy suppression by score: drop grasps both closer than ``trans_thresh``
    and within ``rot_thresh`` geodesic angle of an already kept grasp."""
    if not grasps:
        return []
    grasps = list(grasps)
    order = np.argsort(-np.array([g.score for g in grasps]), kind="stable")
    t = np.array([grasps[i].t for i in order])
    m = np.array([grasps[i].matrix for i in order])
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for a in range(len(order)):
        if not alive[a]:
            continue
        keep.append(grasps[order[a]])
        rest = np.arange(a + 1, len(order))
        rest = rest[alive[rest]]
        if len(rest) == 0:
            continue
        close = np.linalg.norm(t[rest] - t[a], axis=1) < trans_thresh
        cand = rest[close]
        if len(cand):
            ang = _rotation_angles(m[a], m[cand])
            alive[cand[ang < rot_thresh]] = False
    return keep
