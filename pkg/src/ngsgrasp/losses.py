"""Training losses for rotation heatmaps: focal classification + smooth-L1 regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import RotationHeatmap
from .errors import ConfigurationError, DomainError

EPS = 1e-7


def focal_loss(p, y, alpha: float = 0.25, gamma_f: float = 2.0):
    """Elementwise binary focal loss; ``p`` is clamped to [EPS, 1 - EPS]."""
    p = np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)
    y = np.asarray(y, dtype=np.float64)
    pos = -alpha * (1.0 - p) ** gamma_f * np.log(p)
    neg = -(1.0 - alpha) * p ** gamma_f * np.log1p(-p)
    return np.where(y > 0.5, pos, neg)


def focal_loss_grad(p, y, alpha: float = 0.25, gamma_f: float = 2.0):
    """d focal_loss / d p (inside the clamp range)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    q = 1.0 - p
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = alpha * gamma_f * q ** (gamma_f - 1.0) * np.log(p) - alpha * q ** gamma_f / p
        neg = -(1.0 - alpha) * (gamma_f * p ** (gamma_f - 1.0) * np.log1p(-p) - p ** gamma_f / q)
    return np.where(y > 0.5, pos, neg)


def smooth_l1(x, delta: float = 1.0):
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    a = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(a <= delta, 0.5 * a * a / delta, a - 0.5 * delta)


def smooth_l1_grad(x, delta: float = 1.0):
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) <= delta, x / delta, np.sign(x))


def grad_check(fn, grad, x, eps: float = 1e-5) -> float:
    """Max relative error between ``grad(x)`` and central differences of ``fn``.

    ``fn`` must act elementwise on arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    num = (fn(x + eps) - fn(x - eps)) / (2.0 * eps)
    ana = np.asarray(grad(x), dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-12)
    return float(np.max(np.abs(num - ana) / scale))


@dataclass(frozen=True)
class LossBreakdown:
    theta_cls: float
    theta_reg: float
    gamma_beta: float
    translation: float
    width: float
    total: float

    def to_dict(self) -> dict:
        return {"theta_cls": self.theta_cls, "theta_reg": self.theta_reg,
                "gamma_beta": self.gamma_beta, "translation": self.translation,
                "width": self.width, "total": self.total}


def total_loss(pred: RotationHeatmap, target: RotationHeatmap, weights=None,
               alpha: float = 0.25, gamma_f: float = 2.0, delta: float = 1.0) -> LossBreakdown:
    """Composite heatmap loss.

    * gamma_beta: focal loss on the graspable channel, mean over cells.
    * theta_cls: focal loss on the theta-anchor scores, mean over all entries.
    * theta_reg, translation, width: smooth-L1 sums over positive target cells.
    """
    for a, b in zip(pred.channels(), target.channels()):
        if a.shape != b.shape:
            raise ConfigurationError(f"heatmap shapes differ: {a.shape} vs {b.shape}")
    w = {"theta_cls": 1.0, "theta_reg": 1.0, "gamma_beta": 1.0, "translation": 1.0, "width": 1.0}
    if weights:
        unknown = set(weights) - set(w)
        if unknown:
            raise ConfigurationError(f"unknown loss weights {sorted(unknown)}")
        w.update(weights)
    pos = target.graspable > 0.5
    terms = {
        "gamma_beta": float(focal_loss(pred.graspable, target.graspable, alpha, gamma_f).mean()),
        "theta_cls": float(focal_loss(pred.theta_scores, target.theta_scores, alpha, gamma_f).mean()),
        "theta_reg": float(smooth_l1(pred.theta_residual - target.theta_residual, delta)[pos].sum()),
        "translation": float(smooth_l1(pred.offset - target.offset, delta)[pos].sum()),
        "width": float(smooth_l1(pred.width - target.width, delta)[pos].sum()),
    }
    total = sum(w[k] * v for k, v in terms.items())
    return LossBreakdown(total=float(total), **terms)
