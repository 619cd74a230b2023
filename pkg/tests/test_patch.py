"""Depth-adaptive patch extraction and foreground center localization."""

import math

import numpy as np
import pytest

from ngsgrasp.errors import ConfigurationError, DomainError
from ngsgrasp.geometry import CameraIntrinsics, CameraPose, PointMap, RGBDFrame, deproject
from ngsgrasp.patch import (PatchSpec, adaptive_side, extract_patch, farthest_point_sampling,
                            locate_centers, make_patch_spec, sample_sites)


def _plane(w=96, h=80, z=0.5, f=120.0):
    k = CameraIntrinsics(f, f, (w - 1) / 2, (h - 1) / 2, w, h)
    rgb = np.random.default_rng(0).random((h, w, 3))
    frame = RGBDFrame(rgb, np.full((h, w), z), np.ones((h, w), bool))
    return frame, deproject(frame, k), k


def _brute_fps(pts, k, first):
    chosen = [first]
    for _ in range(k - 1):
        best, arg = -1.0, None
        for i, p in enumerate(pts):
            d = min(np.sum((p - pts[j]) ** 2) for j in chosen)
            if d > best:
                best, arg = d, i
        chosen.append(arg)
    return chosen


class TestAdaptiveSide:
    def test_examples(self):
        assert adaptive_side(0.5, 600.0, 0.2) == 240.0
        assert adaptive_side(1.0, 600.0, 0.2) == 120.0

    def test_inverse_depth(self):
        assert adaptive_side(0.8, 517.0, 0.2) == 2 * adaptive_side(1.6, 517.0, 0.2)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (1.0, -1.0, 1.0), (1.0, 1.0, 0.0)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            adaptive_side(*args)


class TestExtract:
    def test_identity_crop(self):
        frame, pm, k = _plane()
        spec = PatchSpec((40, 30), pm.xyz[30, 40], 16.0, 16)
        p = extract_patch(frame, pm, spec)
        np.testing.assert_array_equal(p.rgbxyz[..., :3], frame.rgb[22:38, 32:48])
        np.testing.assert_array_equal(p.rgbxyz[..., 3:], pm.xyz[22:38, 32:48])
        assert p.valid.all()

    def test_constant_plane_depth(self):
        frame, pm, k = _plane()
        for side in (7.3, 16.0, 41.9):
            p = extract_patch(frame, pm, PatchSpec((50, 40), pm.xyz[40, 50], side, 16))
            assert np.all(p.rgbxyz[..., 5][p.valid] == 0.5)

    def test_corner_mostly_invalid(self):
        frame, pm, k = _plane()
        s = 16
        p = extract_patch(frame, pm, PatchSpec((0, 0), pm.xyz[0, 0], 2.0 * s, s))
        assert (~p.valid).sum() >= 0.75 * s * s
        assert not p.rgbxyz[~p.valid].any()

    def test_center_valid(self):
        frame, pm, k = _plane()
        p = extract_patch(frame, pm, PatchSpec((10, 70), pm.xyz[70, 10], 33.3, 64))
        assert p.valid[32, 32]
        np.testing.assert_array_equal(p.rgbxyz[32, 32, 3:], pm.xyz[70, 10])

    def test_center_outside(self):
        frame, pm, k = _plane()
        with pytest.raises(ConfigurationError):
            extract_patch(frame, pm, PatchSpec((200, 10), [0, 0, 1.0], 10.0, 8))

    def test_xyz_from_nearest_source_pixel(self):
        rng = np.random.default_rng(5)
        w, h = 64, 48
        k = CameraIntrinsics(80.0, 80.0, 31.5, 23.5, w, h)
        depth = rng.uniform(0.4, 1.0, (h, w))
        frame = RGBDFrame(np.zeros((h, w, 3)), depth, depth > 0)
        pm = deproject(frame, k)
        spec = PatchSpec((30, 20), pm.xyz[20, 30], 37.7, 16)
        p = extract_patch(frame, pm, spec)
        us, vs = sample_sites(spec)
        for i in range(16):
            for j in range(16):
                if not p.valid[i, j]:
                    continue
                # the source pixel carrying this XYZ must be within one pixel of the site
                src = np.argwhere(np.all(pm.xyz == p.rgbxyz[i, j, 3:], axis=-1))
                assert len(src) == 1
                v, u = src[0]
                assert abs(u - us[j]) <= 1.0 and abs(v - vs[i]) <= 1.0

    def test_metric_extent_invariant_to_depth(self):
        f = 200.0
        w_ref = 0.2
        extents = []
        for z in (0.5, 1.0):
            frame, pm, k = _plane(160, 160, z, f)
            spec = make_patch_spec(pm, (80, 80), k, w_ref, 32)
            p = extract_patch(frame, pm, spec)
            x = p.rgbxyz[..., 3][p.valid]
            y = p.rgbxyz[..., 4][p.valid]
            extents.append((x.max() - x.min(), y.max() - y.min(), z / f))
        (ex0, ey0, fp0), (ex1, ey1, fp1) = extents
        assert abs(ex0 - ex1) <= 2 * max(fp0, fp1)
        assert abs(ey0 - ey1) <= 2 * max(fp0, fp1)


class TestFarthestPoint:
    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        pts = rng.normal(size=(60, 3))
        got = farthest_point_sampling(pts, 8, 3)
        assert got.tolist() == _brute_fps(pts, 8, 3)

    def test_permutation_invariant(self):
        rng = np.random.default_rng(7)
        pts = rng.integers(0, 5, size=(80, 3)).astype(float)  # many ties
        keys = np.arange(80) * 3 + 11
        a = farthest_point_sampling(pts, 10, 0, keys)
        perm = rng.permutation(80)
        inv = np.argsort(perm)
        b = farthest_point_sampling(pts[perm], 10, int(inv[0]), keys[perm])
        assert sorted(keys[a].tolist()) == sorted(keys[perm][b].tolist())


class TestLocateCenters:
    def _two_blocks(self):
        h, w = 60, 80
        xyz = np.zeros((h, w, 3))
        v, u = np.mgrid[0:h, 0:w]
        xyz[..., 0] = (u - 40) * 0.01
        xyz[..., 1] = (v - 30) * 0.01
        xyz[..., 2] = 1.0  # table at depth 1 under a top-down camera
        xyz[10:20, 5:15, 2] = 0.9
        xyz[40:50, 60:70, 2] = 0.95
        return PointMap(xyz, np.ones((h, w), bool))

    def test_one_center_per_object(self):
        pm = self._two_blocks()
        c = locate_centers(pm, table_height=1.0, k=2, seed=3)
        assert not c.shortfall
        rows = sorted(c.pixels[:, 1].tolist())
        assert 10 <= rows[0] < 20 and 40 <= rows[1] < 50

    def test_single_object(self):
        pm = self._two_blocks()
        pm.valid[40:50, 60:70] = False
        c = locate_centers(pm, 1.0, k=1, seed=0)
        u, v = c.pixels[0]
        assert 5 <= u < 15 and 10 <= v < 20

    def test_empty_foreground(self):
        pm = self._two_blocks()
        c = locate_centers(pm, table_height=0.5, k=4)
        assert c.shortfall and len(c.pixels) == 0

    def test_shortfall_returns_all(self):
        pm = self._two_blocks()
        c = locate_centers(pm, 1.0, k=500)
        assert c.shortfall and len(c.pixels) == 200

    def test_with_camera_pose(self):
        pose = CameraPose.top_down(1.0)
        pm = self._two_blocks()
        a = locate_centers(pm, 1.0, k=5, seed=1)
        b = locate_centers(pm, 0.0, k=5, seed=1, camera_pose=pose)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_deterministic(self):
        pm = self._two_blocks()
        a = locate_centers(pm, 1.0, k=7, seed=9)
        b = locate_centers(pm, 1.0, k=7, seed=9)
        np.testing.assert_array_equal(a.pixels, b.pixels)

    def test_k_positive(self):
        with pytest.raises(DomainError):
            locate_centers(self._two_blocks(), 1.0, k=0)
