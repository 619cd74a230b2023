"""Focal / smooth-L1 terms, the composite heatmap loss and gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ngsgrasp.codec import RotationHeatmap, build_anchors
from ngsgrasp.errors import ConfigurationError, DomainError
from ngsgrasp.losses import (EPS, focal_loss, focal_loss_grad, grad_check, smooth_l1,
                             smooth_l1_grad, total_loss)

A = build_anchors(3)


def _focal_ref(p, y, a=0.25, g=2.0):
    p = min(max(p, EPS), 1 - EPS)
    if y:
        return -a * (1 - p) ** g * math.log(p)
    return -(1 - a) * p ** g * math.log(1 - p)


def _sl1_ref(x, d=1.0):
    return x * x / (2 * d) if abs(x) <= d else abs(x) - d / 2


class TestFocal:
    def test_hand_value(self):
        assert abs(focal_loss(0.5, 1) - 0.25 * 0.25 * math.log(2)) < 1e-12
        assert abs(float(focal_loss(0.5, 1)) - 0.043322) < 1e-6

    def test_reduces_to_half_cross_entropy(self):
        for p in (0.1, 0.5, 0.83):
            assert abs(focal_loss(p, 1, 0.5, 0.0) + 0.5 * math.log(p)) < 1e-12
            assert abs(focal_loss(p, 0, 0.5, 0.0) + 0.5 * math.log(1 - p)) < 1e-12

    def test_monotone_to_zero(self):
        p = np.linspace(0.5, 1.0, 200)
        v = focal_loss(p, np.ones_like(p))
        assert np.all(np.diff(v) <= 0) and v[-1] < 1e-15

    def test_clamp(self):
        assert np.isfinite(focal_loss(0.0, 1)) and np.isfinite(focal_loss(1.0, 0))
        assert focal_loss(0.0, 1) == pytest.approx(_focal_ref(EPS, 1))

    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(0)
        p = rng.random(100)
        y = rng.random(100) > 0.5
        np.testing.assert_allclose(focal_loss(p, y), [_focal_ref(a, b) for a, b in zip(p, y)],
                                   rtol=1e-12)

    def test_gradient_example(self):
        f = lambda x: focal_loss(x, np.ones_like(x))  # noqa: E731
        g = lambda x: focal_loss_grad(x, np.ones_like(x))  # noqa: E731
        assert grad_check(f, g, np.array([0.3])) <= 1e-4

    def test_gradient_random_points(self):
        rng = np.random.default_rng(1)
        p = rng.uniform(0.01, 0.99, 1000)
        y = (rng.random(1000) > 0.5).astype(float)
        for a, gf in ((0.25, 2.0), (0.5, 0.0), (0.7, 1.5)):
            err = grad_check(lambda x: focal_loss(x, y, a, gf),
                             lambda x: focal_loss_grad(x, y, a, gf), p, eps=1e-6)
            assert err <= 1e-4


class TestSmoothL1:
    def test_examples(self):
        assert smooth_l1(0.0) == 0.0
        assert smooth_l1(2.0) == 1.5
        assert smooth_l1(-2.0, 4.0) == 0.5

    def test_gradient_example(self):
        assert grad_check(smooth_l1, smooth_l1_grad, np.array([0.5])) <= 1e-6

    def test_seam_one_sided(self):
        for d in (0.5, 1.0, 2.0):
            h = 1e-6
            left = (smooth_l1(d, d) - smooth_l1(d - h, d)) / h
            right = (smooth_l1(d + h, d) - smooth_l1(d, d)) / h
            assert abs(left - right) < 1e-4
            assert abs(left - 1.0) < 1e-4
            assert abs(smooth_l1(d, d) - (d - d / 2)) < 1e-15

    def test_gradient_random_points(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-3, 3, 1000)
        x = x[np.abs(np.abs(x) - 1.0) > 1e-3]  # away from the seam
        assert grad_check(smooth_l1, smooth_l1_grad, x) <= 1e-4

    def test_delta_domain(self):
        with pytest.raises(DomainError):
            smooth_l1(1.0, 0.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-10, 10), st.floats(0.01, 5))
    def test_reference_and_nonnegative(self, x, d):
        v = float(smooth_l1(x, d))
        assert v >= 0 and abs(v - _sl1_ref(x, d)) < 1e-12


def _random_hm(rng, pos_frac=0.3, probs=True):
    hm = RotationHeatmap.zeros(A)
    hm.graspable[:] = (rng.random(hm.graspable.shape) < pos_frac).astype(float) if not probs \
        else rng.uniform(0.01, 0.99, hm.graspable.shape)
    hm.theta_scores[:] = rng.uniform(0.01, 0.99, hm.theta_scores.shape) if probs \
        else (rng.random(hm.theta_scores.shape) < 0.3).astype(float)
    hm.theta_residual[:] = rng.normal(0, 0.3, hm.theta_residual.shape)
    hm.width[:] = rng.uniform(0, 0.5, hm.width.shape)
    hm.offset[:] = rng.normal(0, 0.05, hm.offset.shape)
    return hm


class TestTotal:
    def test_perfect_prediction_floor(self):
        rng = np.random.default_rng(3)
        tgt = _random_hm(rng, probs=False)
        b = total_loss(tgt.copy(), tgt)
        assert b.total <= 5 * _focal_ref(1 - EPS, 1) + 5 * _focal_ref(EPS, 0) + 1e-12
        assert b.theta_reg == b.translation == b.width == 0.0

    def test_empty_mask(self):
        tgt = RotationHeatmap.zeros(A)
        pred = RotationHeatmap.zeros(A)
        pred.width[:] = 3.0
        b = total_loss(pred, tgt)
        assert b.theta_reg == 0.0 and b.translation == 0.0 and b.width == 0.0

    def test_single_cell_hand_sum(self):
        tgt = RotationHeatmap.zeros(A)
        tgt.graspable[1, 2] = 1.0
        tgt.theta_scores[1, 2, 0] = 1.0
        tgt.theta_residual[1, 2] = 0.1
        tgt.width[1, 2] = 0.3
        tgt.offset[1, 2] = [0.02, 0.0, -0.01]
        pred = RotationHeatmap.zeros(A)
        pred.graspable[:] = 0.2
        pred.graspable[1, 2] = 0.7
        pred.theta_scores[:] = 0.1
        pred.theta_scores[1, 2, 0] = 0.6
        pred.theta_residual[1, 2] = -0.4
        pred.width[1, 2] = 2.3
        pred.offset[1, 2] = [0.0, 0.0, 0.0]
        gb = (8 * _focal_ref(0.2, 0) + _focal_ref(0.7, 1)) / 9
        tc = (26 * _focal_ref(0.1, 0) + _focal_ref(0.6, 1)) / 27
        tr = 0.5 * 0.5 ** 2
        tt = 0.5 * (0.02 ** 2 + 0.01 ** 2)
        ww = 2.0 - 0.5
        b = total_loss(pred, tgt)
        assert b.gamma_beta == pytest.approx(gb, abs=1e-12)
        assert b.theta_cls == pytest.approx(tc, abs=1e-12)
        assert b.theta_reg == pytest.approx(tr, abs=1e-12)
        assert b.translation == pytest.approx(tt, abs=1e-12)
        assert b.width == pytest.approx(ww, abs=1e-12)
        assert b.total == pytest.approx(gb + tc + tr + tt + ww, abs=1e-12)
        assert b.to_dict()["total"] == b.total

    def test_weights(self):
        rng = np.random.default_rng(4)
        pred, tgt = _random_hm(rng), _random_hm(rng, probs=False)
        b = total_loss(pred, tgt)
        w = total_loss(pred, tgt, weights={"width": 2.0, "theta_cls": 0.0})
        assert w.total == pytest.approx(b.total + b.width - b.theta_cls)
        with pytest.raises(ConfigurationError):
            total_loss(pred, tgt, weights={"nope": 1.0})

    def test_shape_mismatch(self):
        with pytest.raises(ConfigurationError):
            total_loss(RotationHeatmap.zeros(A), RotationHeatmap.zeros(build_anchors(4)))

    def test_cell_permutation_invariant(self):
        rng = np.random.default_rng(5)
        pred, tgt = _random_hm(rng), _random_hm(rng, probs=False)
        perm = rng.permutation(9)

        def shuffle(hm):
            out = hm.copy()
            for ch in out.channels():
                flat = ch.reshape((9,) + ch.shape[2:])
                flat[:] = flat[perm]
            return out

        a, b = total_loss(pred, tgt), total_loss(shuffle(pred), shuffle(tgt))
        assert a.total == pytest.approx(b.total, rel=1e-12)

    def test_non_negative(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            b = total_loss(_random_hm(rng), _random_hm(rng, probs=False))
            assert min(b.theta_cls, b.theta_reg, b.gamma_beta, b.translation, b.width) >= 0
