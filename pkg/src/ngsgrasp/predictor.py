"""Regional grasp predictors operating on normalized patches.

``predict_antipodal`` is an analytic stand-in for a learned regional grasp
function: it pairs observed surface points whose normals oppose each other
within the friction cone, snaps the resulting pose onto the anchor grid and
re-checks the contacts along the snapped closing axis before emitting it.

``GatedNet`` is a forward-only convolutional extractor whose stages are
modulated per pixel by an MLP that reads only the XYZ channels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .codec import AnchorSet, RotationHeatmap, build_anchors, encode, nearest_anchor
from .errors import ConfigurationError, DomainError
from .geometry import EulerRotation, canonical_frames, euler_to_matrix_batch, matrix_to_euler_batch
from .ngs import BALL_RADIUS, NormalizedGrasp, NormalizedPatch

HALF_PI = math.pi / 2
#: Largest normal change tolerated between an observed point and its refined contact.
EDGE_ANGLE = 0.3
#: Inward probe offsets along the closing line, as fractions of the half span.
PROBES = (0.03, 0.06, 0.1, 0.15, 0.2)

NormalProvider = Callable[[np.ndarray], np.ndarray]


@dataclass(eq=False)
class PredictorParams:
    friction_mu: float = 0.8
    max_pairs: int = 40000
    seed: int = 0
    w_gripper: float = 0.1
    angle_margin: float = 0.05   # radians kept free inside the friction cone
    max_verify: int = 96         # candidates re-checked along the snapped axis
    per_cell: int = 2
    anchors: AnchorSet = field(default_factory=build_anchors)
    net: "GatedNet | None" = None

    def __post_init__(self):
        if not self.friction_mu > 0:
            raise DomainError(f"friction_mu must be positive, got {self.friction_mu}")
        if self.max_pairs < 1:
            raise DomainError("max_pairs must be >= 1")
        if self.net is not None:
            self.net.check_finite()


# --------------------------------------------------------------------------
# normals

def estimate_normals(patch: NormalizedPatch, radius: float = 0.1) -> np.ndarray:
    """Plane-fit normals over each 5x5 valid neighbourhood, facing the camera.

    Neighbours farther than ``radius`` (normalized units) from the center pixel
    are ignored so that depth discontinuities do not blend surfaces.
    Pixels with fewer than 3 usable neighbours get a zero normal.
    """
    xyz = patch.xyz
    valid = patch.valid
    s = xyz.shape[0]
    pad_xyz = np.pad(xyz, ((2, 2), (2, 2), (0, 0)))
    pad_v = np.pad(valid, 2)
    win = np.lib.stride_tricks.sliding_window_view(pad_xyz, (5, 5), axis=(0, 1))  # S,S,3,5,5
    win = win.reshape(s, s, 3, 25).transpose(0, 1, 3, 2)
    wv = np.lib.stride_tricks.sliding_window_view(pad_v, (5, 5)).reshape(s, s, 25)
    near = wv & (np.linalg.norm(win - xyz[:, :, None, :], axis=-1) < radius)
    cnt = near.sum(-1)
    w = near[..., None].astype(np.float64)
    mean = (win * w).sum(2) / np.maximum(cnt, 1)[..., None]
    d = (win - mean[:, :, None, :]) * w
    cov = np.einsum("hwki,hwkj->hwij", d, d)
    _, vecs = np.linalg.eigh(cov)
    n = vecs[..., :, 0]
    cam = -patch.ctx.center / patch.ctx.w_ref
    flip = np.einsum("hwi,hwi->hw", n, cam - xyz) < 0
    n = np.where(flip[..., None], -n, n)
    ok = valid & (cnt >= 3)
    return np.where(ok[..., None], n, 0.0)


# --------------------------------------------------------------------------
# antipodal oracle

def _snap_rotations(axes: np.ndarray, anchors: AnchorSet):
    """Canonical frames for ``axes`` snapped to the (gamma, beta) anchor grid.

    theta is re-solved so that the snapped closing axis keeps the horizontal
    heading of the original one.  Returns (theta, gi, bi, ok).
    """
    frames, ok = canonical_frames(axes)
    th, ga, be, ok2 = matrix_to_euler_batch(frames)
    ok &= ok2
    gi = nearest_anchor(ga, anchors.gammas)
    bi = nearest_anchor(be, anchors.betas)
    gq, bq = anchors.gammas[gi], anchors.betas[bi]
    a = frames[..., 0]
    heading = np.arctan2(a[..., 1], a[..., 0])
    base = np.arctan2(np.sin(bq) * np.sin(gq), np.cos(gq))
    theta = np.angle(np.exp(1j * (heading - base)))
    theta = np.clip(theta, -HALF_PI, HALF_PI)
    return theta, gi, bi, ok


def _candidate_pairs(pts, nrm, rays, params: PredictorParams, w_max: float, rng):
    n = len(pts)
    cos_cone = math.cos(math.atan(params.friction_mu))
    # only points seen near grazing can have a visible antipodal partner
    side = np.abs(np.einsum("ij,ij->i", nrm, rays)) < 0.9
    idx = np.flatnonzero(side & (np.linalg.norm(nrm, axis=1) > 0.5))
    if len(idx) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    exhaustive = len(idx) * (len(idx) - 1) // 2 <= params.max_pairs
    if exhaustive:
        seeds = idx
    else:
        m = max(1, params.max_pairs // len(idx))
        seeds = np.sort(rng.choice(idx, size=min(m, len(idx)), replace=False))
    # all seed x pool quantities via matrix products; survivors are re-checked exactly
    pa, na = pts[seeds], nrm[seeds]
    pb, nb = pts[idx], nrm[idx]
    sa, sb = np.einsum("ij,ij->i", pa, pa), np.einsum("ij,ij->i", pb, pb)
    cross = pa @ pb.T
    d2 = np.maximum(sa[:, None] + sb[None, :] - 2.0 * cross, 0.0)
    mid2 = 0.25 * (sa[:, None] + sb[None, :] + 2.0 * cross)
    dist = np.sqrt(d2)
    inv = 1.0 / np.maximum(dist, 1e-12)
    ca = (np.einsum("ij,ij->i", na, pa)[:, None] - na @ pb.T) * inv
    cb = (np.einsum("ij,ij->i", nb, pb)[None, :] - pa @ nb.T) * inv
    slack = 1e-9
    good = ((dist <= w_max + slack) & (dist > 1e-9) & (ca >= cos_cone - slack)
            & (cb >= cos_cone - slack) & (mid2 < BALL_RADIUS ** 2 + slack))
    if exhaustive:
        good &= seeds[:, None] < idx[None, :]
    r, c = np.nonzero(good)
    a, b = seeds[r], idx[c]
    d = pts[b] - pts[a]
    dist = np.linalg.norm(d, axis=1)
    u = d / np.maximum(dist, 1e-12)[:, None]
    ca = -np.einsum("ij,ij->i", nrm[a], u)
    cb = np.einsum("ij,ij->i", nrm[b], u)
    mid = 0.5 * (pts[a] + pts[b])
    good = ((dist <= w_max) & (dist > 1e-9) & (ca >= cos_cone) & (cb >= cos_cone)
            & (np.linalg.norm(mid, axis=1) < BALL_RADIUS))
    pairs = np.stack([a[good], b[good]], axis=1)
    quality = np.minimum(ca[good], cb[good])
    return pairs[np.argsort(-quality, kind="stable")]


def antipodal_grasps(patch: NormalizedPatch, params: PredictorParams,
                     normals: NormalProvider | None = None) -> list[NormalizedGrasp]:
    """Force-closure grasps found on the observed surface of one patch.

    ``normals`` maps camera-frame points (N, 3) to outward unit normals; without
    it, normals are estimated from the patch by local plane fits.
    """
    anchors = params.anchors
    ctx = patch.ctx
    w_max = params.w_gripper / ctx.w_ref
    cone = math.atan(params.friction_mu)
    limit = cone - params.angle_margin
    if limit <= 0:
        return []
    valid = patch.valid
    if valid.sum() < 2:
        return []
    grid_pts = patch.xyz[valid]
    reach = BALL_RADIUS + 0.5 * w_max
    in_reach = np.linalg.norm(grid_pts, axis=1) <= reach
    pts = grid_pts[in_reach]
    if len(pts) < 2:
        return []
    to_cam = lambda p: p * ctx.w_ref + ctx.center  # noqa: E731
    if normals is not None:
        nrm = _unit(np.asarray(normals(to_cam(pts)), dtype=np.float64))
    else:
        nrm = estimate_normals(patch)[valid][in_reach]
    cam = -ctx.center / ctx.w_ref
    rays = _unit(pts - cam)

    rng = np.random.default_rng(params.seed)
    pairs = _candidate_pairs(pts, nrm, rays, params, w_max, rng)
    if len(pairs) == 0:
        return []
    axes = pts[pairs[:, 1]] - pts[pairs[:, 0]]
    theta, gi, bi, ok = _snap_rotations(axes, anchors)
    pairs, theta, gi, bi = pairs[ok], theta[ok], gi[ok], bi[ok]
    if len(pairs) == 0:
        return []
    # keep the best few candidates per heatmap cell
    cell = gi * len(anchors.betas) + bi
    rank = np.zeros(len(cell), dtype=np.int64)
    seen: dict[int, int] = {}
    for r, c in enumerate(cell.tolist()):
        rank[r] = seen.get(c, 0)
        seen[c] = rank[r] + 1
    sel = np.flatnonzero(rank < params.per_cell)[: params.max_verify]
    pairs, theta, gi, bi = pairs[sel], theta[sel], gi[sel], bi[sel]

    gq, bq = anchors.gammas[gi], anchors.betas[bi]
    mats = euler_to_matrix_batch(theta, gq, bq)
    uq = mats[:, :, 0]
    t0 = 0.5 * (pts[pairs[:, 0]] + pts[pairs[:, 1]])

    # contacts along the snapped axis: nearest observed surface inside a thin tube
    tube = 1.5 / patch.size
    q = pts[None, :, :] - t0[:, None, :]
    s = np.einsum("cnk,ck->cn", q, uq)
    radial = np.linalg.norm(q - s[..., None] * uq[:, None, :], axis=-1)
    in_tube = radial <= tube
    has = (in_tube & (s < 0)).any(1) & (in_tube & (s > 0)).any(1)

    def closest_on_first_layer(side):
        # the first surface met when walking out from t0 along the axis: all tube
        # points within one tube radius of the innermost hit, then the one
        # nearest the axis line (its tangent plane is the best local model)
        d = np.where(in_tube & side, np.abs(s), np.inf)
        first = d.min(axis=1, keepdims=True)
        layer = d <= first + tube
        return np.where(layer, radial, np.inf).argmin(axis=1)

    neg = closest_on_first_layer(s < 0)
    pos = closest_on_first_layer(s > 0)

    def refine(k):
        # intersect the axis line with the tangent plane at the observed point
        nk = nrm[k]
        den = np.einsum("ck,ck->c", uq, nk)
        good = np.abs(den) > 0.1
        sk = np.einsum("ck,ck->c", pts[k] - t0, nk) / np.where(good, den, 1.0)
        return sk, good

    s_neg, g1 = refine(neg)
    s_pos, g2 = refine(pos)
    has &= g1 & g2 & (s_neg < 0) & (s_pos > 0)
    c_neg = t0 + s_neg[:, None] * uq
    c_pos = t0 + s_pos[:, None] * uq
    if normals is not None:
        n_all = _unit(np.asarray(normals(to_cam(np.concatenate([c_neg, c_pos]))), dtype=np.float64))
        n_neg, n_pos = n_all[: len(t0)], n_all[len(t0):]
        # a contact whose normal disagrees with the normal of the observed point it
        # was extrapolated from has crossed an edge; the plane model no longer holds
        same = np.cos(EDGE_ANGLE)
        has &= (np.einsum("ck,ck->c", n_neg, nrm[neg]) >= same)
        has &= (np.einsum("ck,ck->c", n_pos, nrm[pos]) >= same)
        # probe just inside each contact along the closing line: if the nearest
        # surface there faces another way, the jaw would meet that face first
        half = 0.5 * (s_pos - s_neg)[:, None, None]
        f = np.asarray(PROBES)[None, :, None]
        q_neg = c_neg[:, None, :] + f * half * uq[:, None, :]
        q_pos = c_pos[:, None, :] - f * half * uq[:, None, :]
        m = len(PROBES)
        n_q = _unit(np.asarray(normals(to_cam(np.concatenate([q_neg, q_pos]).reshape(-1, 3))),
                               dtype=np.float64)).reshape(2, len(t0), m, 3)
        has &= np.all(np.einsum("cmk,ck->cm", n_q[0], n_neg) >= same, axis=1)
        has &= np.all(np.einsum("cmk,ck->cm", n_q[1], n_pos) >= same, axis=1)
    else:
        n_neg, n_pos = nrm[neg], nrm[pos]
    ang_neg = np.arccos(np.clip(-np.einsum("ck,ck->c", n_neg, uq), -1.0, 1.0))
    ang_pos = np.arccos(np.clip(np.einsum("ck,ck->c", n_pos, uq), -1.0, 1.0))
    span = s_pos - s_neg
    t = t0 + (0.5 * (s_pos + s_neg))[:, None] * uq
    good = (has & (ang_neg <= limit) & (ang_pos <= limit) & (span <= w_max)
            & (np.linalg.norm(t, axis=1) < BALL_RADIUS))
    out = []
    for r in np.flatnonzero(good):
        score = 1.0 - max(ang_neg[r], ang_pos[r]) / cone
        out.append(NormalizedGrasp(t[r], EulerRotation(theta[r], gq[r], bq[r]), float(span[r]),
                                   float(np.clip(score, 0.0, 1.0)), mats[r]))
    return out


def predict_antipodal(patch: NormalizedPatch, params: PredictorParams,
                      normals: NormalProvider | None = None) -> RotationHeatmap:
    """Antipodal oracle as a rotation heatmap (graspable channel = grasp score)."""
    return encode(antipodal_grasps(patch, params, normals), params.anchors, soft=True)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0)


# --------------------------------------------------------------------------
# gated feature extractor

def conv3x3_s2(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3x3 convolution, stride 2, zero padding 1.  x: (H, W, Cin); kernel: (Cout, Cin, 3, 3)."""
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(0, 1))[::2, ::2]
    return np.einsum("hwcij,ocij->hwo", win, kernel, optimize=True) + bias


def _relu(x):
    return np.maximum(x, 0.0)


@dataclass(eq=False)
class GatedNet:
    """Strided conv stages, each scaled by an XYZ-conditioned per-pixel gate.

    ``stages`` holds dicts with ``kernel`` (Cout, Cin, 3, 3), ``bias`` (Cout,)
    and ``gate``: three (W, b) layers mapping 3 -> Cout -> Cout -> Cout.
    The last gate layer is linear, so zero weights with unit bias give gate == 1.
    ``head`` optionally maps pooled features to a flattened heatmap.
    """

    stages: list
    in_channels: int = 6
    head: tuple | None = None

    @classmethod
    def random(cls, channels=(16, 32, 64), seed: int = 0, anchors: AnchorSet | None = None,
               in_channels: int = 6) -> "GatedNet":
        rng = np.random.default_rng(seed)
        stages = []
        cin = in_channels
        for c in channels:
            k = rng.normal(0.0, math.sqrt(2.0 / (9 * cin)), (c, cin, 3, 3))
            gate = [(rng.normal(0.0, math.sqrt(2.0 / 3), (3, c)), np.zeros(c)),
                    (rng.normal(0.0, math.sqrt(2.0 / c), (c, c)), np.zeros(c)),
                    (rng.normal(0.0, 0.1 / math.sqrt(c), (c, c)), np.ones(c))]
            stages.append({"kernel": k, "bias": np.zeros(c), "gate": gate})
            cin = c
        head = None
        if anchors is not None:
            ag, ab, at = anchors.shape
            n_out = ag * ab * (at + 6)
            head = (rng.normal(0.0, 1.0 / math.sqrt(cin), (cin, n_out)), np.zeros(n_out))
        return cls(stages, in_channels, head)

    def check_finite(self) -> None:
        for arr in self._arrays():
            if not np.all(np.isfinite(arr[1])):
                raise ConfigurationError(f"non-finite weights in {arr[0]}")

    def _arrays(self):
        for i, st in enumerate(self.stages):
            yield f"stage{i}.kernel", st["kernel"]
            yield f"stage{i}.bias", st["bias"]
            for j, (w, b) in enumerate(st["gate"]):
                yield f"stage{i}.gate{j}.w", w
                yield f"stage{i}.gate{j}.b", b
        if self.head is not None:
            yield "head.w", self.head[0]
            yield "head.b", self.head[1]

    def gates(self, patch: NormalizedPatch) -> list[np.ndarray]:
        """Per-stage gate maps (they depend on XYZ only)."""
        xyz = patch.xyz
        out = []
        for st in self.stages:
            xyz = xyz[::2, ::2]
            out.append(self._gate(st, xyz))
        return out

    @staticmethod
    def _gate(st, xyz):
        (w1, b1), (w2, b2), (w3, b3) = st["gate"]
        h = _relu(xyz @ w1 + b1)
        h = _relu(h @ w2 + b2)
        return h @ w3 + b3

    def forward(self, patch: NormalizedPatch, use_gate: bool = True) -> np.ndarray:
        x = patch.rgbxyz
        s = x.shape[0]
        if x.shape[-1] != self.in_channels:
            raise ConfigurationError(f"net expects {self.in_channels} channels, got {x.shape[-1]}")
        if s % (2 ** len(self.stages)):
            raise ConfigurationError(f"patch size {s} not divisible by 2^{len(self.stages)}")
        xyz = patch.xyz
        for st in self.stages:
            k = st["kernel"]
            if k.shape[1] != x.shape[-1] or k.shape[2:] != (3, 3):
                raise ConfigurationError(f"kernel shape {k.shape} does not fit input {x.shape}")
            x = _relu(conv3x3_s2(x, k, st["bias"]))
            xyz = xyz[::2, ::2]
            if use_gate:
                x = x * self._gate(st, xyz)
        return x

    # --- persistence: raw little-endian float32 + JSON sidecar ---------------
    def save(self, path) -> None:
        path = Path(path)
        names, shapes, blobs = [], [], []
        for name, arr in self._arrays():
            names.append(name)
            shapes.append(list(np.shape(arr)))
            blobs.append(np.asarray(arr, dtype="<f4").ravel())
        path.write_bytes(np.concatenate(blobs).tobytes())
        meta = {"in_channels": self.in_channels, "n_stages": len(self.stages),
                "has_head": self.head is not None,
                "tensors": [{"name": n, "shape": s} for n, s in zip(names, shapes)]}
        Path(str(path) + ".json").write_text(json.dumps(meta, indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "GatedNet":
        path = Path(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        flat = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
        tensors = {}
        pos = 0
        for t in meta["tensors"]:
            n = int(np.prod(t["shape"])) if t["shape"] else 1
            if pos + n > flat.size:
                raise ConfigurationError(f"{path}: weight file shorter than its sidecar")
            tensors[t["name"]] = flat[pos:pos + n].reshape(t["shape"])
            pos += n
        if pos != flat.size:
            raise ConfigurationError(f"{path}: weight file longer than its sidecar")
        stages = []
        for i in range(meta["n_stages"]):
            gate = [(tensors[f"stage{i}.gate{j}.w"], tensors[f"stage{i}.gate{j}.b"]) for j in range(3)]
            stages.append({"kernel": tensors[f"stage{i}.kernel"], "bias": tensors[f"stage{i}.bias"],
                           "gate": gate})
        head = (tensors["head.w"], tensors["head.b"]) if meta["has_head"] else None
        net = cls(stages, meta["in_channels"], head)
        net.check_finite()
        return net


def gated_forward(patch: NormalizedPatch, params: PredictorParams) -> np.ndarray:
    if params.net is None:
        raise ConfigurationError("predictor has no gated network weights")
    return params.net.forward(patch)


def predict_gated(patch: NormalizedPatch, params: PredictorParams) -> RotationHeatmap:
    """Heatmap from the gated extractor and its linear head (untrained weights
    produce arbitrary but well-formed heatmaps)."""
    net = params.net
    if net is None or net.head is None:
        raise ConfigurationError("gated prediction needs a network with a heatmap head")
    feat = net.forward(patch).mean(axis=(0, 1))
    ag, ab, at = params.anchors.shape
    out = (feat @ net.head[0] + net.head[1])
    if out.size != ag * ab * (at + 6):
        raise ConfigurationError("network head does not match the anchor grid")
    out = out.reshape(ag, ab, at + 6)
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))  # noqa: E731
    w_max = params.w_gripper / patch.ctx.w_ref
    return RotationHeatmap(graspable=sig(out[..., 0]), theta_scores=sig(out[..., 1:1 + at]),
                           theta_residual=np.tanh(out[..., 1 + at]) * (math.pi / (2 * at)),
                           width=sig(out[..., 2 + at]) * w_max,
                           offset=np.tanh(out[..., 3 + at:]) * (BALL_RADIUS / 2))
