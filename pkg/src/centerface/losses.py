"""Training losses with closed-form gradients.

The center loss is the penalty-reduced focal loss over the heatmap; offsets,
sizes and landmarks use smooth-L1 at positive cells only. All gradients are
taken with respect to the head values fed in (post-sigmoid heatmap
probabilities, raw regression values).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .codec import TargetMaps

EPS = 1e-6


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 2.0
    beta: float = 4.0
    lambda_off: float = 1.0
    lambda_box: float = 0.1
    lambda_lm: float = 0.1
    smooth_l1_delta: float = 1.0
    eps: float = EPS

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("alpha and beta must be positive")
        if min(self.lambda_off, self.lambda_box, self.lambda_lm, self.smooth_l1_delta) < 0:
            raise ValueError("loss weights and smooth-L1 delta must be non-negative")


@dataclass
class LossReport:
    total: float
    l_center: float
    l_off: float
    l_box: float
    l_lm: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def focal_center_loss(pred: np.ndarray, target: np.ndarray, cfg: LossConfig = LossConfig()):
    """Penalty-reduced focal loss, summed and divided by the positive count.

    Returns ``(loss, dloss/dpred)``. Predictions are clamped to
    ``[eps, 1 - eps]``; the gradient is zero where the clamp is active.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target shape {target.shape}")

    p = np.clip(pred, cfg.eps, 1.0 - cfg.eps)
    inside = (pred >= cfg.eps) & (pred <= 1.0 - cfg.eps)
    pos = target == 1.0
    a, b = cfg.alpha, cfg.beta
    log_p, log_q = np.log(p), np.log1p(-p)
    neg_w = (1.0 - target) ** b

    per_pixel = np.where(pos, -((1.0 - p) ** a) * log_p, -neg_w * p**a * log_q)
    d_pos = a * (1.0 - p) ** (a - 1) * log_p - (1.0 - p) ** a / p
    d_neg = -neg_w * (a * p ** (a - 1) * log_q - p**a / (1.0 - p))
    grad = np.where(pos, d_pos, d_neg) * inside

    n = max(1, int(pos.sum()))
    return float(per_pixel.sum() / n), grad / n


def smooth_l1(pred, target, delta: float = 1.0):
    """Elementwise smooth-L1 and its derivative w.r.t. ``pred``; ``delta=0`` gives L1."""
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    ad = np.abs(d)
    quad = ad < delta
    safe = delta if delta > 0 else 1.0
    loss = np.where(quad, 0.5 * d * d / safe, ad - 0.5 * delta)
    grad = np.where(quad, d / safe, np.sign(d))
    if np.ndim(loss) == 0:
        return float(loss), float(grad)
    return loss, grad


def total_loss(heads, targets: TargetMaps, cfg: LossConfig = LossConfig()) -> LossReport:
    """Weighted sum of the four terms plus gradients for every head plane.

    ``L_off`` sums both offset coordinates per face and divides by the face
    count; ``L_box`` and ``L_lm`` average over their contributing elements.
    """
    if heads.heatmap.shape != targets.heatmap.shape:
        raise ValueError(
            f"head grid {heads.heatmap.shape} does not match target grid {targets.heatmap.shape}"
        )
    l_center, g_heat = focal_center_loss(heads.heatmap, targets.heatmap, cfg)
    grads = {
        "heatmap": g_heat,
        "offset": np.zeros_like(heads.offset, dtype=np.float64),
        "size": np.zeros_like(heads.size, dtype=np.float64),
        "landmarks": np.zeros_like(heads.landmarks, dtype=np.float64),
    }

    l_off = l_box = l_lm = 0.0
    n_pos = len(targets.pos_index)
    if n_pos:
        gx = np.array([p[1] for p in targets.pos_index])
        gy = np.array([p[2] for p in targets.pos_index])
        delta = cfg.smooth_l1_delta

        loss, g = smooth_l1(heads.offset[:, gy, gx], targets.offset[:, gy, gx], delta)
        l_off = float(loss.sum() / n_pos)
        grads["offset"][:, gy, gx] = g / n_pos

        loss, g = smooth_l1(heads.size[:, gy, gx], targets.size[:, gy, gx], delta)
        l_box = float(loss.mean())
        grads["size"][:, gy, gx] = g / loss.size

        # (10, n_pos) mask: both coordinates of each valid point
        mask = np.repeat(targets.landmark_point_mask.T, 2, axis=0)
        mask &= targets.landmark_mask[None, :]
        count = int(mask.sum())
        if count:
            loss, g = smooth_l1(heads.landmarks[:, gy, gx], targets.landmarks[:, gy, gx], delta)
            l_lm = float((loss * mask).sum() / count)
            grads["landmarks"][:, gy, gx] = g * mask / count

    grads["offset"] *= cfg.lambda_off
    grads["size"] *= cfg.lambda_box
    grads["landmarks"] *= cfg.lambda_lm
    total = l_center + cfg.lambda_off * l_off + cfg.lambda_box * l_box + cfg.lambda_lm * l_lm
    return LossReport(total, l_center, l_off, l_box, l_lm, grads)

