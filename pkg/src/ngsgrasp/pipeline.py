"""End-to-end detection: centers -> patches -> normalized prediction -> camera-frame grasps."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .codec import RotationHeatmap, decode, grasp_nms
from .errors import ConfigurationError
from .geometry import CameraIntrinsics, CameraPose, Grasp, PointMap, RGBDFrame, deproject
from .ngs import NGSContext, NormalizedPatch, normalize_patch
from .patch import extract_patch, locate_centers, make_patch_spec
from .predictor import PredictorParams, predict_antipodal, predict_gated


@dataclass
class DetectConfig:
    w_ref: float = 0.2
    patch_size: int = 64
    num_patches: int = 48
    table_height: float = 0.0
    margin: float = 0.005
    seed: int = 0
    predictor: str = "antipodal"
    score_thresh: float = 0.05
    top_k: int = 50
    nms_trans: float = 0.02
    nms_rot: float = math.pi / 6

    def __post_init__(self):
        if self.predictor not in ("antipodal", "gated"):
            raise ConfigurationError(f"unknown predictor {self.predictor!r}")


@dataclass
class PatchResult:
    patch: NormalizedPatch
    heatmap: RotationHeatmap
    grasps: list


@dataclass
class DetectResult:
    grasps: list
    patches: list = field(default_factory=list)
    centers: np.ndarray | None = None
    shortfall: bool = False


def run_patch(frame: RGBDFrame, pm: PointMap, camera: CameraIntrinsics, pixel, cfg: DetectConfig,
              params: PredictorParams, normals=None) -> PatchResult:
    spec = make_patch_spec(pm, pixel, camera, cfg.w_ref, cfg.patch_size)
    ctx = NGSContext(spec.center_3d, cfg.w_ref)
    patch = normalize_patch(extract_patch(frame, pm, spec), ctx)
    if cfg.predictor == "gated":
        hm = predict_gated(patch, params)
    else:
        hm = predict_antipodal(patch, params, normals)
    grasps = decode(hm, params.anchors, ctx, cfg.score_thresh, cfg.top_k, params.w_gripper)
    return PatchResult(patch, hm, grasps)


def predict_at(frame, pm, camera, pixels, cfg, params, normals=None, jobs: int = 1) -> list[PatchResult]:
    """Run the regional predictor at each pixel; result order follows ``pixels``."""
    fn = lambda px: run_patch(frame, pm, camera, px, cfg, params, normals)  # noqa: E731
    if jobs > 1 and len(pixels) > 1:
        with ThreadPoolExecutor(jobs) as ex:
            return list(ex.map(fn, list(pixels)))
    return [fn(px) for px in pixels]


def merge(results, cfg: DetectConfig) -> list[Grasp]:
    """Pool per-patch grasps, suppress duplicates, keep the best ``top_k``."""
    pooled = [g for r in results for g in r.grasps]
    order = np.argsort(-np.array([g.score for g in pooled]), kind="stable") if pooled else []
    kept = grasp_nms([pooled[i] for i in order], cfg.nms_trans, cfg.nms_rot)
    return kept[: cfg.top_k]


def detect(frame: RGBDFrame, camera: CameraIntrinsics, params: PredictorParams, cfg: DetectConfig,
           pose: CameraPose | None = None, normals=None, jobs: int = 1) -> DetectResult:
    pm = deproject(frame, camera)
    centers = locate_centers(pm, cfg.table_height, cfg.margin, cfg.num_patches, cfg.seed, pose)
    results = predict_at(frame, pm, camera, centers.pixels, cfg, params, normals, jobs)
    return DetectResult(merge(results, cfg), results, centers.pixels, centers.shortfall)
