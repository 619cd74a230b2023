"""Normalized patch dataset generation: mask dilation, center sampling,
depth/scale randomization and deterministic on-disk records."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .codec import AnchorSet, RotationHeatmap, build_anchors, encode
from .errors import DomainError
from .geometry import CameraIntrinsics, PointMap, RGBDFrame
from .io import dumps, write_pfm_stack
from .ngs import NGSContext, NormalizedPatch, normalize_grasps, normalize_patch, randomize_scale
from .patch import PatchSpec, adaptive_side, extract_patch


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unnormalized 1-D Gaussian with peak 1, truncated at 4 sigma."""
    r = max(1, int(math.ceil(4.0 * sigma)))
    x = np.arange(-r, r + 1, dtype=np.float64)
    return np.exp(-0.5 * (x / sigma) ** 2)


def dilate_mask(mask: np.ndarray, sigma: float, thresh: float) -> np.ndarray:
    """Blur a binary mask with a peak-one Gaussian and re-binarize at ``thresh``.

    Because the kernel peaks at 1, every input pixel survives, and an isolated
    pixel grows into a disk of radius sigma * sqrt(2 ln(1/thresh)).
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if not 0.0 < thresh < 1.0:
        raise DomainError(f"thresh must lie in (0, 1), got {thresh}")
    k = gaussian_kernel(sigma)
    m = np.asarray(mask, dtype=np.float64)
    blur = ndimage.correlate1d(m, k, axis=0, mode="constant")
    blur = ndimage.correlate1d(blur, k, axis=1, mode="constant")
    return blur >= thresh - 1e-12


@dataclass(eq=False)
class PatchRecord:
    index: int
    seed: list
    center_px: tuple
    patch: NormalizedPatch
    target: RotationHeatmap
    grasps: list  # the normalized grasps that were encoded


@dataclass(eq=False)
class Dataset:
    records: list
    anchors: AnchorSet
    empty_mask: bool = False


def generate_patches(frame: RGBDFrame, pm: PointMap, mask: np.ndarray, n: int, w_ref: float,
                     gt_grasps, depth_jitter: float, seed: int, camera: CameraIntrinsics,
                     anchors: AnchorSet | None = None, patch_size: int = 64,
                     scale_randomization: bool = True, sigma: float = 4.0, thresh: float = 0.1,
                     w_gripper: float = 0.1) -> Dataset:
    """Sample ``n`` training pairs (normalized patch, target heatmap).

    Record ``i`` draws everything from ``default_rng([seed, i])`` so records can
    be produced independently and in any order.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    if depth_jitter < 0:
        raise DomainError("depth_jitter must be non-negative")
    anchors = anchors or build_anchors()
    region = dilate_mask(mask, sigma, thresh) & pm.valid
    cand = np.flatnonzero(region.ravel())
    if len(cand) == 0:
        return Dataset([], anchors, empty_mask=True)
    w = region.shape[1]
    gt_grasps = list(gt_grasps)
    records = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        flat = int(cand[rng.integers(len(cand))])
        u, v = flat % w, flat // w
        p = pm.xyz[v, u]
        jitter = rng.uniform(-depth_jitter, depth_jitter) if depth_jitter > 0 else 0.0
        z = p[2] + jitter
        if z <= 0:
            z = p[2]
        center = p * (z / p[2])  # slide along the pixel ray
        w_i = randomize_scale(w_ref, rng) if scale_randomization else w_ref
        spec = PatchSpec((u, v), center, adaptive_side(center[2], camera.focal, w_i), patch_size)
        ctx = NGSContext(center, w_i)
        patch = normalize_patch(extract_patch(frame, pm, spec), ctx)
        w_star_max = w_gripper / w_i
        grasps = [g for g in normalize_grasps(gt_grasps, ctx) if g.w_star <= w_star_max]
        records.append(PatchRecord(i, [seed, i], (u, v), patch, encode(grasps, anchors), grasps))
    return Dataset(records, anchors)


def write_dataset(ds: Dataset, out_dir, shard: str = "scene0000") -> list[Path]:
    """One header JSON, one stacked-plane PFM and one target JSON per record."""
    d = Path(out_dir) / shard
    d.mkdir(parents=True, exist_ok=True)
    written = []
    anchors = ds.anchors.to_dict()
    for r in ds.records:
        stem = d / f"{r.index:06d}"
        header = {"index": r.index, "seed": r.seed, "center_px": list(map(int, r.center_px)),
                  "ctx": r.patch.ctx.to_dict(), "size": r.patch.size, "anchors": anchors,
                  "planes": ["r", "g", "b", "x", "y", "z", "valid"]}
        planes = [r.patch.rgbxyz[..., c] for c in range(6)] + [r.patch.valid.astype(np.float64)]
        target = {"grasps": [g.to_dict() for g in r.grasps],
                  "heatmap": {"graspable": r.target.graspable.tolist(),
                              "theta_scores": r.target.theta_scores.tolist(),
                              "theta_residual": r.target.theta_residual.tolist(),
                              "width": r.target.width.tolist(),
                              "offset": r.target.offset.tolist()}}
        paths = (stem.with_suffix(".json"), stem.with_suffix(".pfm"), Path(f"{stem}.target.json"))
        paths[0].write_text(dumps(header) + "\n", encoding="utf-8")
        write_pfm_stack(paths[1], planes)
        paths[2].write_text(dumps(target) + "\n", encoding="utf-8")
        written.extend(paths)
    return written
