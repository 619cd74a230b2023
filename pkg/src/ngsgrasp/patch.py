"""Depth-adaptive patch extraction and foreground patch-center localization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import CameraIntrinsics, CameraPose, PointMap, RGBDFrame


@dataclass(frozen=True, eq=False)
class PatchSpec:
    center_px: tuple[int, int]  # (u, v)
    center_3d: np.ndarray
    side_px: float
    out_size: int = 64

    def __post_init__(self):
        if not self.side_px > 0:
            raise DomainError(f"patch side must be positive, got {self.side_px}")
        if self.out_size < 8:
            raise DomainError(f"patch size must be >= 8, got {self.out_size}")
        object.__setattr__(self, "center_3d", np.asarray(self.center_3d, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class RawPatch:
    rgbxyz: np.ndarray  # S x S x 6, XYZ in camera-frame meters
    valid: np.ndarray
    spec: PatchSpec


class CenterSet(NamedTuple):
    pixels: np.ndarray  # (k, 2) integer (u, v)
    points: np.ndarray  # (k, 3) camera-frame
    shortfall: bool


def adaptive_side(z_center: float, focal: float, w_ref: float) -> float:
    """Pixel side length covering ``w_ref`` meters at depth ``z_center``."""
    if not (z_center > 0 and focal > 0 and w_ref > 0):
        raise DomainError("adaptive_side needs positive depth, focal length and w_ref")
    return w_ref * focal / z_center


def farthest_point_sampling(points: np.ndarray, k: int, first: int,
                            keys: np.ndarray | None = None) -> np.ndarray:
    """Greedy max-min selection of ``k`` indices starting from ``first``.

    Ties on the max-min distance go to the smallest key (defaults to the index),
    so the selected set does not depend on the storage order of ``points``
    when keys identify points.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    k = min(k, n)
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if keys is None:
        keys = np.arange(n)
    chosen = [int(first)]
    d = np.sum((pts - pts[first]) ** 2, axis=1)
    for _ in range(k - 1):
        m = d.max()
        cand = np.flatnonzero(d == m)
        nxt = int(cand[np.argmin(keys[cand])]) if len(cand) > 1 else int(cand[0])
        chosen.append(nxt)
        d = np.minimum(d, np.sum((pts - pts[nxt]) ** 2, axis=1))
    return np.asarray(chosen, dtype=np.int64)


def foreground_mask(pm: PointMap, table_height: float, margin: float = 0.005,
                    camera_pose: CameraPose | None = None) -> np.ndarray:
    """Valid pixels more than ``margin`` above the table plane.

    With a camera pose the table is the world plane z = ``table_height``.
    Without one the camera is taken to look straight down and ``table_height``
    is the table's distance along the optical axis.
    """
    if camera_pose is not None:
        height = camera_pose.camera_to_world(pm.xyz)[..., 2] - table_height
    else:
        height = table_height - pm.xyz[..., 2]
    return pm.valid & (height > margin)


def locate_centers(pm: PointMap, table_height: float, margin: float = 0.005, k: int = 48,
                   seed: int = 0, camera_pose: CameraPose | None = None) -> CenterSet:
    """Farthest-point-sample ``k`` patch centers on the foreground point cloud."""
    if k < 1:
        raise DomainError("k must be >= 1")
    fg = foreground_mask(pm, table_height, margin, camera_pose)
    flat = np.flatnonzero(fg.ravel())
    if len(flat) == 0:
        return CenterSet(np.zeros((0, 2), dtype=np.int64), np.zeros((0, 3)), True)
    pts = pm.xyz.reshape(-1, 3)[flat]
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(flat)))
    idx = farthest_point_sampling(pts, k, first, keys=flat)
    sel = flat[idx]
    w = pm.shape[1]
    pixels = np.stack([sel % w, sel // w], axis=1)
    return CenterSet(pixels, pts[idx], len(flat) < k)


def make_patch_spec(pm: PointMap, pixel, k: CameraIntrinsics, w_ref: float,
                    out_size: int = 64, center_3d=None) -> PatchSpec:
    """Patch spec at an integer pixel; ``center_3d`` overrides the deprojected point."""
    u, v = int(pixel[0]), int(pixel[1])
    if center_3d is None:
        if not pm.valid[v, u]:
            raise ConfigurationError(f"patch center ({u}, {v}) has no valid depth")
        center_3d = pm.xyz[v, u]
    center_3d = np.asarray(center_3d, dtype=np.float64)
    return PatchSpec((u, v), center_3d, adaptive_side(center_3d[2], k.focal, w_ref), out_size)


def sample_sites(spec: PatchSpec) -> tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates of the S sample columns and rows.

    Index S//2 lands exactly on the center pixel.
    """
    s = spec.out_size
    offs = (np.arange(s) - s // 2) * (spec.side_px / s)
    return spec.center_px[0] + offs, spec.center_px[1] + offs


def extract_patch(frame: RGBDFrame, pm: PointMap, spec: PatchSpec) -> RawPatch:
    """Resample an S x S RGBXYZ patch: bilinear RGB, nearest-neighbour XYZ."""
    h, w = frame.shape
    u0, v0 = spec.center_px
    if not (0 <= u0 < w and 0 <= v0 < h):
        raise ConfigurationError(f"patch center {spec.center_px} outside the {w}x{h} image")
    us, vs = sample_sites(spec)
    ui = np.floor(us + 0.5).astype(np.int64)
    vi = np.floor(vs + 0.5).astype(np.int64)
    inside = (ui >= 0) & (ui < w)
    inside_v = (vi >= 0) & (vi < h)
    uc = np.clip(ui, 0, w - 1)
    vc = np.clip(vi, 0, h - 1)
    valid = inside_v[:, None] & inside[None, :] & pm.valid[vc[:, None], uc[None, :]]
    xyz = pm.xyz[vc[:, None], uc[None, :]]
    xyz = np.where(valid[..., None], xyz, 0.0)

    # bilinear colour, clamped at the border
    uf = np.clip(us, 0, w - 1)
    vf = np.clip(vs, 0, h - 1)
    ua = np.minimum(np.floor(uf).astype(np.int64), w - 2) if w > 1 else np.zeros_like(ui)
    va = np.minimum(np.floor(vf).astype(np.int64), h - 2) if h > 1 else np.zeros_like(vi)
    du = (uf - ua)[None, :, None]
    dv = (vf - va)[:, None, None]
    ub = np.minimum(ua + 1, w - 1)
    vb = np.minimum(va + 1, h - 1)
    rgb = frame.rgb
    top = rgb[va[:, None], ua[None, :]] * (1 - du) + rgb[va[:, None], ub[None, :]] * du
    bot = rgb[vb[:, None], ua[None, :]] * (1 - du) + rgb[vb[:, None], ub[None, :]] * du
    col = top * (1 - dv) + bot * dv
    col = np.where(valid[..., None], col, 0.0)
    return RawPatch(np.concatenate([col, xyz], axis=-1), valid, spec)
